#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "gtest/gtest.h"

#include "oracles.hpp"
#include "snpg/eval.hpp"

namespace snpg {

namespace {

EmbeddingEntry entry(int subject, int sequence, const NdArray<float>& parts) {
  return EmbeddingEntry{subject, sequence, parts};
}

EmbeddingSet random_set(int n, int P, int D, int subjects, Rng& rng) {
  EmbeddingSet set;
  for (int i = 0; i < n; ++i) {
    set.entries.push_back(entry(i % subjects, i / subjects, oracle::uniform({P, D}, rng).cast<float>()));
  }
  return set;
}

// Distance rows with chosen values; labels picked so hits land where wanted.
DistanceMatrix matrix(int64_t rows, int64_t cols, std::vector<double> values) {
  return DistanceMatrix{rows, cols, std::move(values)};
}

}  // namespace

TEST(DistanceTest, IdenticalIsZeroAndUnitConstruction) {
  Rng rng = make_stream(61);
  EmbeddingSet a = random_set(1, 4, 3, 1, rng);
  EXPECT_EQ(pairwise_distance(a, a)(0, 0), 0.0);

  const int P = 4, D = 16;
  EmbeddingSet zero{{entry(0, 0, NdArray<float>({P, D}))}};
  EmbeddingSet unit{{entry(0, 0, NdArray<float>({P, D}, static_cast<float>(1.0 / std::sqrt(P * D))))}};
  EXPECT_NEAR(pairwise_distance(zero, unit)(0, 0), 1.0, 1e-7);
}

TEST(DistanceTest, MatchesNaiveOracle) {
  Rng rng = make_stream(62);
  const EmbeddingSet probe = random_set(5, 3, 4, 2, rng), gallery = random_set(7, 3, 4, 3, rng);
  const auto d = pairwise_distance(probe, gallery);
  ASSERT_EQ(d.rows, 5);
  ASSERT_EQ(d.cols, 7);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 7; ++j) {
      const auto& pv = probe.entries[i].parts.values();
      const auto& gv = gallery.entries[j].parts.values();
      EXPECT_NEAR(d(i, j), oracle::euclidean({pv.begin(), pv.end()}, {gv.begin(), gv.end()}), 1e-6);
    }
  }
}

TEST(DistanceTest, DimensionMismatch) {
  Rng rng = make_stream(63);
  EXPECT_THROW(pairwise_distance(random_set(2, 3, 4, 2, rng), random_set(2, 4, 3, 2, rng)), ShapeError);
  EmbeddingSet ragged = random_set(2, 3, 4, 2, rng);
  ragged.entries.push_back(entry(0, 5, NdArray<float>({3, 5})));
  EXPECT_THROW(ragged.validate(), ShapeError);
}

TEST(RankTest, HandTrace) {
  // Probe 0 hits at rank 1; probe 1's only same-subject entry is third.
  const auto d = matrix(2, 4, {0.1, 0.5, 0.7, 0.9, 0.3, 0.1, 0.4, 0.2});
  const std::vector<int> probes{0, 1}, gallery{0, 2, 1, 3};
  EXPECT_EQ(rank_k(d, probes, gallery, 1), 0.5);
  EXPECT_EQ(rank_k(d, probes, gallery, 5), 1.0);
  EXPECT_EQ(rank_k(d, probes, gallery, 4), 1.0);
  EXPECT_EQ(rank_k(d, probes, gallery, 2), 0.5);
}

TEST(RankTest, EqualVectorCountsAtRankOne) {
  Rng rng = make_stream(64);
  EmbeddingSet gallery = random_set(6, 2, 3, 3, rng);
  EmbeddingSet probe{{gallery.entries[4]}};
  probe.entries[0].sequence = 99;
  const auto r = evaluate(probe, gallery);
  EXPECT_EQ(r.rank1, 1.0);
  EXPECT_EQ(r.per_probe[0].first_hit, 1);
}

TEST(RankTest, TiesBreakByGalleryIndex) {
  const auto d = matrix(1, 3, {0.5, 0.5, 0.5});
  EXPECT_EQ(ranking(d, 0), (std::vector<int64_t>{0, 1, 2}));
  EXPECT_EQ(rank_k(d, std::vector<int>{1}, std::vector<int>{0, 1, 1}, 1), 0.0);
  EXPECT_EQ(rank_k(d, std::vector<int>{0}, std::vector<int>{0, 1, 1}, 1), 1.0);
}

TEST(RankTest, NonDecreasingInK) {
  Rng rng = make_stream(65);
  const EmbeddingSet probe = random_set(12, 2, 3, 4, rng), gallery = random_set(20, 2, 3, 4, rng);
  const auto d = pairwise_distance(probe, gallery);
  const auto pl = probe.subjects(), gl = gallery.subjects();
  double prev = 0;
  for (int k = 1; k <= 20; ++k) {
    const double r = rank_k(d, pl, gl, k);
    EXPECT_GE(r, prev);
    prev = r;
  }
  EXPECT_EQ(prev, 1.0);
}

TEST(RankTest, Errors) {
  const auto d = matrix(1, 2, {0.1, 0.2});
  EXPECT_THROW(rank_k(d, std::vector<int>{5}, std::vector<int>{0, 1}, 1), std::invalid_argument);
  EXPECT_THROW(rank_k(d, std::vector<int>{0}, std::vector<int>{0, 1}, 0), std::invalid_argument);
  EXPECT_THROW(rank_k(d, std::vector<int>{0, 1}, std::vector<int>{0, 1}, 1), std::invalid_argument);
  EXPECT_THROW(mean_ap(d, std::vector<int>{0}, std::vector<int>{1, 1}), std::invalid_argument);
}

TEST(MeanApTest, HandExamples) {
  const std::vector<int> probe{0};
  EXPECT_EQ(mean_ap(matrix(1, 3, {0.1, 0.2, 0.3}), probe, std::vector<int>{0, 1, 1}), 1.0);
  const double ap = mean_ap(matrix(1, 3, {0.1, 0.2, 0.3}), probe, std::vector<int>{0, 1, 0});
  EXPECT_EQ(ap, (1.0 / 1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_NEAR(ap, 5.0 / 6.0, 1e-15);
  EXPECT_EQ(mean_ap(matrix(1, 3, {0.3, 0.1, 0.2}), probe, std::vector<int>{0, 0, 0}), 1.0);
}

TEST(MeanApTest, MatchesOracleOnRandomSets) {
  Rng rng = make_stream(66);
  for (int trial = 0; trial < 20; ++trial) {
    const EmbeddingSet probe = random_set(8, 2, 2, 3, rng), gallery = random_set(15, 2, 2, 3, rng);
    const auto d = pairwise_distance(probe, gallery);
    std::vector<oracle::Vec> rows(8, oracle::Vec(15));
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 15; ++j) rows[i][j] = d(i, j);
    const auto pl = probe.subjects(), gl = gallery.subjects();
    EXPECT_NEAR(mean_ap(d, pl, gl), oracle::mean_ap(rows, pl, gl), 1e-12);
    EXPECT_EQ(rank_k(d, pl, gl, 1), oracle::rank_k(rows, pl, gl, 1));
  }
}

TEST(EvaluateTest, SeparableSetIsPerfect) {
  EmbeddingSet probe, gallery;
  for (int s = 0; s < 4; ++s) {
    for (int q = 0; q < 3; ++q) {
      NdArray<float> parts({2, 2}, static_cast<float>(10 * s));
      parts[0] += 0.01f * static_cast<float>(q);
      (q == 0 ? probe : gallery).entries.push_back(entry(s, q, parts));
    }
  }
  const auto r = evaluate(probe, gallery);
  EXPECT_EQ(r.rank1, 1.0);
  EXPECT_EQ(r.rank5, 1.0);
  EXPECT_EQ(r.mAP, 1.0);
}

TEST(EvaluateTest, GalleryPermutationInvariance) {
  Rng rng = make_stream(67);
  const EmbeddingSet probe = random_set(6, 2, 3, 3, rng);
  EmbeddingSet gallery = random_set(12, 2, 3, 3, rng);
  const auto r = evaluate(probe, gallery);
  std::shuffle(gallery.entries.begin(), gallery.entries.end(), rng);
  const auto s = evaluate(probe, gallery);
  EXPECT_EQ(r.rank1, s.rank1);
  EXPECT_EQ(r.rank5, s.rank5);
  EXPECT_NEAR(r.mAP, s.mAP, 1e-12);
}

TEST(EvaluateTest, ExcludeSelfSkipsSameSequence) {
  Rng rng = make_stream(68);
  const EmbeddingSet set = random_set(9, 2, 3, 3, rng);
  const auto with = evaluate(set, set, false);
  EXPECT_EQ(with.rank1, 1.0);
  const auto without = evaluate(set, set, true);
  const auto d = pairwise_distance(set, set);
  for (size_t i = 0; i < set.size(); ++i) {
    ExclusionMask mask(set.size() * set.size(), 0);
    mask[i * set.size() + i] = 1;
    const auto order = ranking(d, static_cast<int64_t>(i), mask);
    EXPECT_EQ(order.size(), set.size() - 1);
    EXPECT_EQ(std::count(order.begin(), order.end(), static_cast<int64_t>(i)), 0);
  }
  EXPECT_LE(without.rank1, 1.0);
  EXPECT_EQ(without.per_probe.size(), set.size());
}

TEST(EmbeddingIoTest, RoundTripAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "snpg_embed_io";
  std::filesystem::create_directories(dir);
  Rng rng = make_stream(69);
  const EmbeddingSet set = random_set(3, 2, 3, 2, rng);
  write_embeddings(dir / "e.jsonl", set);
  const EmbeddingSet back = read_embeddings(dir / "e.jsonl");
  ASSERT_EQ(back.size(), 3u);
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.entries[i].subject, set.entries[i].subject);
    EXPECT_EQ(back.entries[i].sequence, set.entries[i].sequence);
    EXPECT_TRUE(bit_equal(back.entries[i].parts, set.entries[i].parts));
  }
  std::ofstream(dir / "bad.jsonl") << "{\"subject\":0,\"sequence\":0,\"parts\":[[1,2],[3]]}\n";
  EXPECT_THROW(read_embeddings(dir / "bad.jsonl"), std::runtime_error);
  EXPECT_THROW(read_embeddings(dir / "missing.jsonl"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(RetrievalJsonTest, Fields) {
  RetrievalResult r;
  r.rank1 = 0.5;
  r.mAP = 0.25;
  r.per_probe.push_back({1, 2, 0.25, 3});
  const auto j = r.to_json();
  EXPECT_EQ(j["rank1"], 0.5);
  EXPECT_EQ(j["mAP"], 0.25);
  EXPECT_TRUE(j.contains("rank5"));
}

}  // namespace snpg
