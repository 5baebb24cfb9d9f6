#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "gtest/gtest.h"

#include "json.hpp"
#include "snpg/sampler.hpp"

namespace snpg {

namespace {

// Draws with an L1 forced by rejection so examples can name the drawn value.
Partition partition_with_first(int seq_len, int L, int wanted, Rng& rng) {
  SamplerConfig cfg;
  cfg.L = L;
  for (;;) {
    Partition p = partition_train(seq_len, cfg, rng);
    if (p.first_length == wanted) return p;
  }
}

void expect_plan_valid(const SnippetPlan& plan, const SamplerConfig& cfg) {
  const Partition& p = plan.partition;
  ASSERT_EQ(static_cast<int>(plan.snippets.size()), cfg.M);
  for (const auto& s : plan.snippets) {
    ASSERT_GE(s.segment, 1);
    ASSERT_LE(s.segment, p.num_segments());
    ASSERT_EQ(static_cast<int>(s.frames.size()), cfg.N);
    const int begin = p.segment_begin(s.segment - 1);
    const int end = begin + p.segment_lengths[static_cast<size_t>(s.segment - 1)];
    EXPECT_TRUE(std::is_sorted(s.frames.begin(), s.frames.end()));
    for (int f : s.frames) {
      EXPECT_GE(f, begin);
      EXPECT_LT(f, end);
    }
  }
}

}  // namespace

TEST(PartitionTest, TrainExamples) {
  Rng rng = make_stream(11);
  EXPECT_EQ(partition_with_first(70, 16, 5, rng).segment_lengths,
            (std::vector<int>{5, 16, 16, 16, 16, 1}));
  EXPECT_EQ(partition_with_first(16, 16, 16, rng).segment_lengths, (std::vector<int>{16}));
  const Partition clipped = partition_with_first(3, 16, 8, rng);
  EXPECT_EQ(clipped.segment_lengths, (std::vector<int>{3}));
  EXPECT_EQ(clipped.first_length, 8);
}

TEST(PartitionTest, InferExamples) {
  EXPECT_EQ(partition_infer(40, 16).segment_lengths, (std::vector<int>{16, 16, 8}));
  EXPECT_EQ(partition_infer(16, 16).segment_lengths, (std::vector<int>{16}));
  EXPECT_EQ(partition_infer(1, 16).segment_lengths, (std::vector<int>{1}));
  EXPECT_EQ(partition_infer(40, 16).first_length, 16);
}

TEST(PartitionTest, Invariants) {
  Rng rng = make_stream(12);
  SamplerConfig cfg;
  for (int trial = 0; trial < 2000; ++trial) {
    const int len = uniform_int(rng, 1, 200);
    const Partition p = partition_train(len, cfg, rng);
    ASSERT_EQ(p.sequence_length(), len);
    ASSERT_GE(p.first_length, 1);
    ASSERT_LE(p.first_length, cfg.L);
    EXPECT_EQ(p.segment_lengths.front(), std::min(p.first_length, len));
    for (int k = 1; k + 1 < p.num_segments(); ++k) EXPECT_EQ(p.segment_lengths[k], cfg.L);
    EXPECT_GE(p.segment_lengths.back(), 1);
    EXPECT_LE(p.segment_lengths.back(), cfg.L);
  }
}

TEST(PartitionTest, Errors) {
  EXPECT_THROW(make_partition(0, 1, 16), std::invalid_argument);
  EXPECT_THROW(make_partition(10, 17, 16), std::invalid_argument);
  SamplerConfig bad;
  bad.M = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(SampleTrainTest, DistinctSegmentsWhenEnough) {
  Rng rng = make_stream(13);
  SamplerConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const Partition p = make_partition(80, 5, 16);  // K = 6
    const SnippetPlan plan = sample_snippets_train(p, cfg, rng);
    expect_plan_valid(plan, cfg);
    std::set<int> ks;
    for (const auto& s : plan.snippets) {
      ks.insert(s.segment);
      if (p.segment_lengths[static_cast<size_t>(s.segment - 1)] < cfg.N) continue;
      EXPECT_EQ(std::set<int>(s.frames.begin(), s.frames.end()).size(), s.frames.size());
    }
    EXPECT_EQ(ks.size(), 4u);
  }
}

TEST(SampleTrainTest, ShortageCoversEverySegment) {
  Rng rng = make_stream(14);
  SamplerConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const Partition p = make_partition(20, 16, 16);  // K = 2
    const SnippetPlan plan = sample_snippets_train(p, cfg, rng);
    expect_plan_valid(plan, cfg);
    std::map<int, int> count;
    for (const auto& s : plan.snippets) ++count[s.segment];
    EXPECT_EQ(count.size(), 2u);
  }
}

TEST(SampleTrainTest, ShortSegmentRepeatsFrames) {
  Rng rng = make_stream(15);
  SamplerConfig cfg;
  cfg.M = 1;
  const SnippetPlan plan = sample_snippets_train(make_partition(3, 3, 16), cfg, rng);
  expect_plan_valid(plan, cfg);
  const auto& f = plan.snippets[0].frames;
  EXPECT_EQ(f.size(), 8u);
  EXPECT_LT(std::set<int>(f.begin(), f.end()).size(), f.size());
}

TEST(SampleTrainTest, DeterministicForStreamPosition) {
  SamplerConfig cfg;
  Rng a = make_stream(99, 4), b = make_stream(99, 4);
  for (int i = 0; i < 20; ++i) {
    const auto pa = sample_snippets_train(partition_train(70, cfg, a), cfg, a);
    const auto pb = sample_snippets_train(partition_train(70, cfg, b), cfg, b);
    EXPECT_EQ(plan_to_json(pa), plan_to_json(pb));
  }
}

TEST(SampleTrainTest, GoldenPlan) {
  std::ifstream in(std::string(SNPG_GOLDEN_DIR) + "/sample_len70_seed3.json");
  ASSERT_TRUE(in) << "missing golden file";
  auto golden = nlohmann::ordered_json::parse(in);
  golden.erase("sequence_length");
  SamplerConfig cfg;
  cfg.seed = 3;
  Rng rng = make_stream(cfg.seed);
  const auto plan = sample_snippets_train(partition_train(70, cfg, rng), cfg, rng);
  EXPECT_EQ(plan_to_json(plan), golden);
}

TEST(PlanInferTest, Examples) {
  const auto plan = plan_infer(partition_infer(40, 16));
  EXPECT_EQ(plan.snippet_sizes(), (std::vector<int>{16, 16, 8}));
  EXPECT_EQ(plan_infer(partition_infer(16, 16)).snippet_sizes(), (std::vector<int>{16}));
  EXPECT_EQ(plan_infer(partition_infer(1, 16)).snippet_sizes(), (std::vector<int>{1}));
  EXPECT_EQ(plan.snippets[2].segment, 3);
  EXPECT_EQ(plan.snippets[2].frames.front(), 32);
}

TEST(PlanInferTest, CoversEveryFrameOnce) {
  for (int len = 1; len <= 100; ++len) {
    const auto plan = plan_infer(partition_infer(len, 16));
    std::vector<int> all;
    for (const auto& s : plan.snippets) all.insert(all.end(), s.frames.begin(), s.frames.end());
    ASSERT_EQ(static_cast<int>(all.size()), len);
    for (int i = 0; i < len; ++i) EXPECT_EQ(all[i], i);
  }
}

TEST(PlanJsonTest, Layout) {
  const auto j = plan_to_json(plan_infer(partition_infer(20, 16)));
  EXPECT_EQ(j.dump(),
            "{\"L1\":16,\"segments\":[16,4],\"snippets\":[{\"k\":1,\"frames\":[0,1,2,3,4,5,6,7,8,9,"
            "10,11,12,13,14,15]},{\"k\":2,\"frames\":[16,17,18,19]}]}");
}

}  // namespace snpg
