#include <cmath>

#include "gtest/gtest.h"

#include "fixtures.hpp"
#include "oracles.hpp"
#include "snpg/dataset.hpp"
#include "snpg/model.hpp"
#include "snpg/ops.hpp"

namespace snpg {

namespace {

const std::string kBlock = "stage0.block0";

NdArray<float> block_input(int frames, int channels, Rng& rng) {
  return oracle::uniform({frames, channels, 6, 5}, rng).cast<float>();
}

NdArray<float> run_snippet_block(SnippetNet<float>& net, const NdArray<float>& x,
                                 const GroupIndex& groups) {
  Tape<float> tape;
  Var y = net.snippet_block(tape, tape.constant(x), groups, kBlock + ".snippet", Phase::eval);
  return tape.value(y);
}

NdArray<float> embed_eval(SnippetNet<float>& net, const NdArray<float>& frames,
                          const GroupIndex& snippets, const GroupIndex& sequences) {
  Tape<float> tape;
  Var fm = net.backbone_forward(tape, tape.constant(frames), snippets, Phase::eval);
  return tape.value(net.heads_forward(tape, fm, snippets, sequences, Phase::eval).seq_parts);
}

SilhouetteSequence synthetic(int frames, int height = 64, int width = 44) {
  SynthSpec spec;
  spec.num_subjects = 2;
  spec.frames_per_sequence = frames;
  spec.height = height;
  spec.width = width;
  return synth_sequence(spec, 0, 0);
}

}  // namespace

TEST(SnippetBlockTest, ZeroSmoothingIsIdentity) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 1);
  net.store().get(kBlock + ".snippet.smooth.w").value.fill(0.0f);
  Rng rng = make_stream(21);
  const auto x = block_input(5, 16, rng);
  EXPECT_TRUE(bit_equal(run_snippet_block(net, x, GroupIndex::from_sizes(std::vector<int>{2, 3})), x));
}

TEST(SnippetBlockTest, IdenticalFramesWithIdentitySmoothingDouble) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 1);
  auto& w = net.store().get(kBlock + ".snippet.smooth.w").value;
  w.fill(0.0f);
  for (int c = 0; c < 16; ++c) w[c * 16 + c] = 1.0f;
  Rng rng = make_stream(22);
  const auto one = block_input(1, 16, rng);
  NdArray<float> x({3, 16, 6, 5});
  for (int f = 0; f < 3; ++f) std::copy_n(one.data(), one.size(), x.data() + f * one.size());
  const auto y = run_snippet_block(net, x, GroupIndex::single(3));
  for (int64_t i = 0; i < x.size(); ++i) ASSERT_EQ(y[i], 2.0f * x[i]);
}

TEST(SnippetBlockTest, GatheringOffIsIdentity) {
  BackboneConfig cfg = BackboneConfig::desk();
  cfg.gathering = false;
  SnippetNet<float> net(cfg, HeadConfig{8, 64, 4}, 1);
  Rng rng = make_stream(23);
  const auto x = block_input(4, 16, rng);
  EXPECT_TRUE(bit_equal(run_snippet_block(net, x, GroupIndex::from_sizes(std::vector<int>{1, 3})), x));
}

TEST(SnippetBlockTest, ResidualOffBroadcastsContext) {
  BackboneConfig cfg = BackboneConfig::desk();
  cfg.residual = false;
  cfg.smoothing = false;
  SnippetNet<float> net(cfg, HeadConfig{8, 64, 4}, 1);
  Rng rng = make_stream(24);
  const auto x = block_input(4, 16, rng);
  const auto y = run_snippet_block(net, x, GroupIndex::from_sizes(std::vector<int>{3, 1}));
  const auto xd = x.cast<double>();
  const auto m0 = oracle::max_over(xd, {0, 1, 2});
  const int64_t inner = m0.size();
  for (int f = 0; f < 3; ++f) {
    for (int64_t i = 0; i < inner; ++i) ASSERT_EQ(y[f * inner + i], static_cast<float>(m0[i]));
  }
  for (int64_t i = 0; i < inner; ++i) ASSERT_EQ(y[3 * inner + i], x[3 * inner + i]);
}

TEST(SnippetBlockTest, SingleFrameSnippetSeesOnlyItself) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 1);
  Rng rng = make_stream(25);
  const auto x = block_input(3, 16, rng);
  const auto grouped = run_snippet_block(net, x, GroupIndex::from_sizes(std::vector<int>{1, 1, 1}));
  NdArray<float> alone({1, 16, 6, 5});
  std::copy_n(x.data() + alone.size(), alone.size(), alone.data());
  const auto single = run_snippet_block(net, alone, GroupIndex::single(1));
  for (int64_t i = 0; i < single.size(); ++i) ASSERT_EQ(grouped[alone.size() + i], single[i]);
}

TEST(ResidualBlockTest, DeadPathGivesRelu) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 2);
  net.use_default_moments();
  net.store().get(kBlock + ".conv1.w").value.fill(0.0f);
  net.store().get(kBlock + ".conv2.w").value.fill(0.0f);
  Rng rng = make_stream(26);
  const auto x = block_input(3, 16, rng);
  Tape<float> tape;
  Var y = net.residual_snippet_block(tape, tape.constant(x), GroupIndex::single(3), kBlock, 1,
                                     Phase::eval);
  EXPECT_TRUE(bit_equal(tape.value(y), kernels::relu_forward(x)));
}

TEST(ResidualBlockTest, StrideTwoHalvesMaps) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 3);
  net.use_default_moments();
  Rng rng = make_stream(27);
  const auto x = oracle::uniform({2, 16, 8, 6}, rng).cast<float>();
  Tape<float> tape;
  Var y = net.residual_snippet_block(tape, tape.constant(x), GroupIndex::single(2), "stage1.block0",
                                     2, Phase::eval);
  EXPECT_EQ(tape.value(y).shape(), (Shape{2, 32, 4, 3}));
}

TEST(ResidualBlockTest, MismatchedIdentitySkipThrows) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 3);
  net.use_default_moments();
  Tape<float> tape;
  EXPECT_THROW(net.residual_snippet_block(tape, tape.constant(NdArray<float>({1, 16, 8, 6})),
                                          GroupIndex::single(1), kBlock, 2, Phase::eval),
               ShapeError);
}

TEST(BackboneTest, DeskShapes) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 4);
  net.use_default_moments();
  Rng rng = make_stream(28);
  const auto frames = testing::random_frames<float>(5, 64, 44, rng);
  const auto snippets = GroupIndex::from_sizes(std::vector<int>{2, 1, 2});
  const auto sequences = GroupIndex::from_sizes(std::vector<int>{2, 1});
  Tape<float> tape;
  Var fm = net.backbone_forward(tape, tape.constant(frames), snippets, Phase::eval);
  EXPECT_EQ(tape.value(fm).shape(), (Shape{5, 64, 16, 11}));
  const auto out = net.heads_forward(tape, fm, snippets, sequences, Phase::eval);
  EXPECT_EQ(tape.value(out.seq_parts).shape(), (Shape{2, 8, 64}));
  EXPECT_FALSE(out.snip_parts.valid());
}

TEST(BackboneTest, PaperShapes) {
  SnippetNet<float> net(BackboneConfig::paper(), HeadConfig{16, 256, 4}, 5);
  net.use_default_moments();
  Rng rng = make_stream(29);
  Tape<float> tape;
  Var fm = net.backbone_forward(tape, tape.constant(testing::random_frames<float>(1, 64, 44, rng)),
                                GroupIndex::single(1), Phase::eval);
  EXPECT_EQ(tape.value(fm).shape(), (Shape{1, 512, 16, 11}));
}

TEST(BackboneTest, RejectsNonSilhouetteInput) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 4);
  Tape<float> tape;
  EXPECT_THROW(net.backbone_forward(tape, tape.constant(NdArray<float>({2, 3, 64, 44})),
                                    GroupIndex::single(2), Phase::eval),
               ShapeError);
}

TEST(HeadsTest, TrainOutputsAndSingleSnippetEquality) {
  SnippetNet<double> net(testing::tiny_backbone(), HeadConfig{2, 4, 3}, 6);
  Rng rng = make_stream(30);
  const auto frames = testing::random_frames<double>(4, 32, 22, rng);
  const auto snippets = GroupIndex::from_sizes(std::vector<int>{3, 1});
  const auto sequences = GroupIndex::from_sizes(std::vector<int>{1, 1});
  Tape<double> tape;
  Var fm = net.backbone_forward(tape, tape.constant(frames), snippets, Phase::train);
  const auto out = net.heads_forward(tape, fm, snippets, sequences, Phase::train);
  EXPECT_EQ(tape.value(out.seq_parts).shape(), (Shape{2, 2, 4}));
  EXPECT_EQ(tape.value(out.seq_logits).shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(tape.value(out.snip_logits).shape(), (Shape{2, 2, 3}));
  // One snippet per sequence: F and F* differ only through their own mapping weights.
  net.store().get("snip.hpm.w").value = net.store().get("seq.hpm.w").value;
  Tape<double> again;
  Var fm2 = net.backbone_forward(again, again.constant(frames), snippets, Phase::train);
  const auto out2 = net.heads_forward(again, fm2, snippets, sequences, Phase::train);
  EXPECT_TRUE(bit_equal(again.value(out2.seq_parts), again.value(out2.snip_parts)));
}

TEST(HeadsTest, SharedWeightsHaveNoSnippetParams) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4, true}, 7);
  EXPECT_FALSE(net.store().contains("snip.hpm.w"));
  SnippetNet<float> separate(BackboneConfig::desk(), HeadConfig{8, 64, 4, false}, 7);
  EXPECT_TRUE(separate.store().contains("snip.hpm.w"));
  EXPECT_TRUE(SnippetNet<float>::is_snippet_branch("snip.cls.w"));
  EXPECT_FALSE(SnippetNet<float>::is_snippet_branch("seq.cls.w"));
  EXPECT_FALSE(SnippetNet<float>::is_snippet_branch("stage0.block0.snippet.smooth.w"));
}

TEST(HeadsTest, HeightNotDivisibleByPartsThrows) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{5, 8, 2}, 8);
  net.use_default_moments();
  Tape<float> tape;
  Var fm = tape.constant(NdArray<float>({2, 64, 16, 11}));
  EXPECT_THROW(net.heads_forward(tape, fm, GroupIndex::single(2), GroupIndex::single(1), Phase::eval),
               ShapeError);
}

TEST(InferenceEmbedTest, SingleFrameSequence) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 9);
  net.use_default_moments();
  const auto e = net.inference_embed(synthetic(1), 16);
  EXPECT_EQ(e.shape(), (Shape{8, 64}));
  for (float v : e.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(InferenceEmbedTest, MatchesManualComposition) {
  SnippetNet<float> net(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 10);
  Rng rng = make_stream(31);
  testing::randomize_moments(net.store(), rng);
  const auto seq = synthetic(20);
  const auto plan = plan_infer(partition_infer(20, 16));
  const auto batch = assemble_batch<float>({&seq}, {plan});
  EXPECT_EQ(batch.snippets.num_groups(), 2);
  const auto manual = embed_eval(net, batch.frames, batch.snippets, batch.sequences);
  EXPECT_TRUE(bit_equal(net.inference_embed(seq, 16), manual.reshaped({8, 64})));
}

// Frame multiplicity does not change a max, so with per-frame processing the
// embedding of a sequence with every frame doubled is unchanged.
TEST(InferenceEmbedTest, DuplicatedFramesWithoutGathering) {
  BackboneConfig cfg = BackboneConfig::desk();
  cfg.gathering = false;
  SnippetNet<float> net(cfg, HeadConfig{8, 64, 4}, 11);
  Rng rng = make_stream(32);
  testing::randomize_moments(net.store(), rng);
  const auto seq = synthetic(12);
  SilhouetteSequence doubled = seq;
  doubled.frames.clear();
  for (const auto& f : seq.frames) {
    doubled.frames.push_back(f);
    doubled.frames.push_back(f);
  }
  EXPECT_TRUE(bit_equal(net.inference_embed(seq, 16), net.inference_embed(doubled, 16)));
}

TEST(AssembleBatchTest, LayoutAndGroups) {
  const auto seq = synthetic(10, 32, 22);
  SnippetPlan a{partition_infer(10, 4), {{1, {0, 3}}, {3, {9}}}};
  SnippetPlan b{partition_infer(10, 4), {{2, {5, 5, 6}}}};
  const auto batch = assemble_batch<double>({&seq, &seq}, {a, b});
  EXPECT_EQ(batch.frames.shape(), (Shape{6, 1, 32, 22}));
  EXPECT_EQ(batch.snippets.num_groups(), 3);
  EXPECT_EQ(batch.snippets.group_size(2), 3);
  EXPECT_EQ(batch.sequences.num_groups(), 2);
  EXPECT_EQ(batch.sequences.group_of(2), 1);
  const int64_t hw = 32 * 22;
  for (int64_t k = 0; k < hw; ++k) {
    ASSERT_EQ(batch.frames[2 * hw + k], static_cast<double>(seq.frames[9][k]));
    ASSERT_EQ(batch.frames[4 * hw + k], static_cast<double>(seq.frames[5][k]));
  }
  SnippetPlan bad{partition_infer(10, 4), {{1, {10}}}};
  EXPECT_THROW(assemble_batch<double>({&seq}, {bad}), std::out_of_range);
}

TEST(ParamStoreTest, ExportImportRoundTrip) {
  SnippetNet<float> a(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 12);
  Rng rng = make_stream(33);
  testing::randomize_moments(a.store(), rng);
  SnippetNet<float> b(BackboneConfig::desk(), HeadConfig{8, 64, 4}, 13);
  b.store().import_tensors(a.store().export_tensors());
  const auto pa = a.store().params();
  const auto pb = b.store().params();
  ASSERT_EQ(pa.size(), pb.size());
  for (size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bit_equal(pa[i]->value, pb[i]->value));
  const auto seq = synthetic(5);
  EXPECT_TRUE(bit_equal(a.inference_embed(seq, 16), b.inference_embed(seq, 16)));

  auto tensors = a.store().export_tensors();
  tensors.pop_back();
  EXPECT_THROW(b.store().import_tensors(tensors), std::runtime_error);
}

TEST(ConfigValidationTest, Errors) {
  BackboneConfig cfg = BackboneConfig::desk();
  cfg.strides = {1, 2};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_THROW((HeadConfig{0, 8, 2}.validate()), std::invalid_argument);
}

}  // namespace snpg
