#include <cmath>

#include "gtest/gtest.h"

#include "fixtures.hpp"
#include "oracles.hpp"
#include "snpg/loss.hpp"

namespace snpg {

namespace {

using oracle::Vec;

std::vector<std::vector<Vec>> nest(const std::vector<double>& flat, int U, int V, int D) {
  std::vector<std::vector<Vec>> f(U, std::vector<Vec>(V));
  for (int u = 0; u < U; ++u)
    for (int v = 0; v < V; ++v) f[u][v].assign(flat.begin() + (u * V + v) * D, flat.begin() + (u * V + v + 1) * D);
  return f;
}

std::vector<std::vector<std::vector<Vec>>> nest(const std::vector<double>& flat, int U, int V,
                                                int M, int D) {
  std::vector<std::vector<std::vector<Vec>>> f(U, std::vector<std::vector<Vec>>(V, std::vector<Vec>(M)));
  for (int u = 0; u < U; ++u)
    for (int v = 0; v < V; ++v)
      for (int m = 0; m < M; ++m) {
        const int64_t at = ((u * V + v) * M + m) * D;
        f[u][v][m].assign(flat.begin() + at, flat.begin() + at + D);
      }
  return f;
}

std::vector<double> random_vec(size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform_real(rng, -1, 1);
  return v;
}

}  // namespace

TEST(TripletLossTest, WellSeparatedGivesZero) {
  const std::vector<double> f{0, 10};
  const auto r = triplet_loss(f, 2, 1, 1, 0.2);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.num_active, 0);
  for (double g : r.grad) EXPECT_EQ(g, 0.0);
}

TEST(TripletLossTest, HandScalarsMatchEnumeration) {
  const std::vector<double> f{0, 0.1, 0.05, 0.15};
  const auto r = triplet_loss(f, 2, 2, 1, 0.2);
  const auto o = oracle::sequence_triplets(nest(f, 2, 2, 1), 0.2, true);
  EXPECT_EQ(o.terms, 16);
  EXPECT_NEAR(r.loss, o.loss, 1e-15);
  EXPECT_EQ(r.num_active, o.active);
}

TEST(TripletLossTest, IdenticalFeaturesGiveMargin) {
  const std::vector<double> f(3 * 2 * 4, 0.5);
  const auto r = triplet_loss(f, 3, 2, 4, 0.2);
  EXPECT_NEAR(r.loss, 0.2, 1e-15);
  EXPECT_EQ(r.num_active, 3 * 2 * 2 * 2 * 2);
}

TEST(TripletLossTest, RandomBatchesMatchEnumeration) {
  Rng rng = make_stream(41);
  for (int trial = 0; trial < 100; ++trial) {
    const int U = uniform_int(rng, 2, 3), V = uniform_int(rng, 1, 3), D = uniform_int(rng, 1, 4);
    const bool self = trial % 2 == 0;
    const auto f = random_vec(static_cast<size_t>(U * V * D), rng);
    const auto r = triplet_loss(f, U, V, D, 0.3, self);
    const auto o = oracle::sequence_triplets(nest(f, U, V, D), 0.3, self);
    ASSERT_LE(std::abs(r.loss - o.loss), 1e-10 * std::max(1.0, o.loss));
    ASSERT_EQ(r.num_active, o.active);
  }
}

TEST(TripletLossTest, GradientMatchesFiniteDifferences) {
  Rng rng = make_stream(42);
  const int U = 3, V = 2, D = 3;
  const auto f = random_vec(U * V * D, rng);
  const auto r = triplet_loss(f, U, V, D, 0.5);
  ASSERT_GT(r.num_active, 0);
  const double h = 1e-6;
  for (size_t i = 0; i < f.size(); ++i) {
    auto fp = f, fm = f;
    fp[i] += h;
    fm[i] -= h;
    const double num = (oracle::sequence_triplets(nest(fp, U, V, D), 0.5, true).loss -
                        oracle::sequence_triplets(nest(fm, U, V, D), 0.5, true).loss) / (2 * h);
    EXPECT_NEAR(r.grad[i], num, 1e-6);
  }
}

TEST(TripletLossTest, Errors) {
  const std::vector<double> f(4, 0.0);
  EXPECT_THROW(triplet_loss(f, 1, 4, 1, 0.2), std::invalid_argument);
  EXPECT_THROW(snippet_triplet_loss(f, 1, 2, 2, 1, 0.2), std::invalid_argument);
  EXPECT_THROW(triplet_loss(f, 2, 2, 2, 0.2), std::invalid_argument);
}

TEST(SnippetTripletLossTest, SingleSnippetCollapses) {
  Rng rng = make_stream(43);
  const auto f = random_vec(3 * 2 * 5, rng);
  const auto a = snippet_triplet_loss(f, 3, 2, 1, 5, 0.4);
  const auto b = triplet_loss(f, 3, 2, 5, 0.4);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.num_active, b.num_active);
}

TEST(SnippetTripletLossTest, HandScalarsMatchEnumeration) {
  const std::vector<double> f{0, 0.1, 1.0, 1.1};
  const auto r = snippet_triplet_loss(f, 2, 1, 2, 1, 0.2);
  const auto o = oracle::snippet_triplets(nest(f, 2, 1, 2, 1), 0.2, true);
  EXPECT_NEAR(r.loss, o.loss, 1e-15);
  EXPECT_EQ(r.num_active, o.active);
}

TEST(SnippetTripletLossTest, DuplicatedSnippetsMatchDeduplicatedSet) {
  Rng rng = make_stream(44);
  const int U = 3, V = 2, M = 3, D = 2;
  const auto base = random_vec(U * V * D, rng);
  std::vector<double> f;
  for (int s = 0; s < U * V; ++s)
    for (int m = 0; m < M; ++m) f.insert(f.end(), base.begin() + s * D, base.begin() + (s + 1) * D);
  EXPECT_NEAR(snippet_triplet_loss(f, U, V, M, D, 0.3).loss, triplet_loss(base, U, V, D, 0.3).loss,
              1e-12);
}

TEST(SnippetTripletLossTest, RandomBatchesMatchEnumeration) {
  Rng rng = make_stream(45);
  for (int trial = 0; trial < 100; ++trial) {
    const int U = uniform_int(rng, 2, 3), V = uniform_int(rng, 1, 3), M = uniform_int(rng, 1, 2);
    const int D = uniform_int(rng, 1, 3);
    const bool self = trial % 2 == 1;
    const auto f = random_vec(static_cast<size_t>(U * V * M * D), rng);
    const auto r = snippet_triplet_loss(f, U, V, M, D, 0.3, self);
    const auto o = oracle::snippet_triplets(nest(f, U, V, M, D), 0.3, self);
    ASSERT_LE(std::abs(r.loss - o.loss), 1e-10 * std::max(1.0, o.loss));
    ASSERT_EQ(r.num_active, o.active);
  }
}

TEST(CrossEntropyTest, UniformLogits) {
  const std::vector<double> logits(4, 0.3);
  const std::vector<int> labels{2};
  EXPECT_NEAR(cross_entropy(logits, labels, 4, false).loss, std::log(4.0), 1e-15);
}

TEST(CrossEntropyTest, ConfidentLogits) {
  const std::vector<double> logits{50, 0, 0, 0, 0, 50};
  const std::vector<int> labels{0, 2};
  EXPECT_LE(cross_entropy(logits, labels, 3, false).loss, 1e-9);
}

TEST(CrossEntropyTest, HandBatchAndGradient) {
  const std::vector<double> logits{1.0, 2.0, 0.5, -1.0, 0.0, 3.0};
  const std::vector<int> labels{1, 0};
  const auto r = cross_entropy(logits, labels, 3, true);
  const double expect = oracle::cross_entropy({{1.0, 2.0, 0.5}, {-1.0, 0.0, 3.0}}, {1, 0});
  EXPECT_NEAR(r.loss, expect, 1e-14);
  // d/dz of mean NLL is (softmax - onehot) / B.
  const double z0 = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  EXPECT_NEAR(r.grad[1], (std::exp(2.0) / z0 - 1) / 2, 1e-14);
  EXPECT_NEAR(r.grad[2], (std::exp(0.5) / z0) / 2, 1e-14);
}

TEST(CrossEntropyTest, OutOfRangeLabel) {
  const std::vector<double> logits(6, 0.0);
  EXPECT_THROW(cross_entropy(logits, std::vector<int>{0, 3}, 3, false), std::out_of_range);
  EXPECT_THROW(cross_entropy(logits, std::vector<int>{-1, 0}, 3, false), std::out_of_range);
}

TEST(CombineTest, Examples) {
  EXPECT_EQ(combine(1, 2, 4, 8, 0.75), 12.0);
  EXPECT_EQ(combine(1, 2, 4, 8, 0.0), 3.0);
  PartLoss p;
  p.all = 2.5;
  const std::vector<PartLoss> parts(7, p);
  EXPECT_EQ(total_loss(parts), 2.5);
}

TEST(DualLevelLossTest, LinearInAlpha) {
  SnippetNet<double> net(testing::tiny_backbone(), HeadConfig{2, 4, 3}, 51);
  Rng rng = make_stream(46);
  const auto frames = testing::random_frames<double>(6, 32, 22, rng);
  // U = 2 subjects, V = 1 sequence each, M = 2 snippets per sequence.
  const auto snips = GroupIndex::from_sizes(std::vector<int>{2, 1, 2, 1});
  const auto seqs = GroupIndex::from_sizes(std::vector<int>{2, 2});
  const std::vector<int> seq_labels{0, 2}, snip_labels{0, 0, 2, 2};
  auto value_at = [&](double alpha, LossReport* report) {
    Tape<double> tape;
    Var fm = net.backbone_forward(tape, tape.constant(frames), snips, Phase::eval);
    const auto heads = net.heads_forward(tape, fm, snips, seqs, Phase::train);
    LossConfig cfg;
    cfg.alpha = alpha;
    return tape.value(dual_level_loss(tape, heads, seq_labels, snip_labels, cfg, report))[0];
  };
  net.use_default_moments();
  LossReport r0, r1;
  const double l0 = value_at(0.0, &r0), l1 = value_at(1.0, &r1), lh = value_at(0.5, nullptr);
  EXPECT_NEAR(lh, 0.5 * (l0 + l1), 1e-12);
  EXPECT_NEAR(l0, r0.mean.tp + r0.mean.ce, 1e-12);
  EXPECT_NEAR(l1 - l0, r1.mean.tp_snippet + r1.mean.ce_snippet, 1e-12);
  EXPECT_EQ(r0.parts.size(), 2u);
}

TEST(LossConfigTest, Validation) {
  LossConfig cfg;
  cfg.margin = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = LossConfig{};
  cfg.alpha = -0.1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

}  // namespace snpg
