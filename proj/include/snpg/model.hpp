#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "snpg/checkpoint.hpp"
#include "snpg/dataset.hpp"
#include "snpg/kernels.hpp"
#include "snpg/sampler.hpp"
#include "snpg/tape.hpp"

namespace snpg {

struct BackboneConfig {
  std::vector<int> blocks{1, 1, 1};
  std::vector<int> channels{16, 32, 64};
  std::vector<int> strides{1, 2, 2};
  // Snippet Block steps; gathering off makes the block an identity.
  bool gathering = true;
  bool smoothing = true;
  bool residual = true;
  // Feature normalization after the smoothing conv (off in the reference form).
  bool smoothing_norm = false;

  static BackboneConfig desk();
  static BackboneConfig paper();
  void validate() const;
};

struct HeadConfig {
  int num_parts = 16;
  int part_dim = 256;
  int num_classes = 1;
  bool share_weights = false;

  void validate() const;
};

// Named parameters and feature-normalization running moments, in creation order.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, NdArray<T> init);
  FeatNormState<T>& add_norm_state(const std::string& name, int64_t channels);

  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  FeatNormState<T>& norm_state(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter<T>*> params();
  std::vector<const Parameter<T>*> params() const;
  std::vector<std::pair<std::string, FeatNormState<T>*>> norm_states();

  void zero_grad();

  // Flattened float view: parameters, then each norm state's
  // <name>.running_mean, <name>.running_var and <name>.populated.
  std::vector<NamedTensor> export_tensors() const;
  void import_tensors(const std::vector<NamedTensor>& tensors);

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, size_t> index_;
  std::deque<std::pair<std::string, FeatNormState<T>>> norms_;
  std::map<std::string, size_t> norm_index_;
};

// Frames of several sequences laid out snippet by snippet, with the two-level
// grouping frame -> snippet -> sequence.
template <typename T>
struct SnippetBatch {
  NdArray<T> frames;      // [F, 1, H, W]
  GroupIndex snippets;    // frame slot -> snippet
  GroupIndex sequences;   // snippet -> sequence
};

template <typename T>
SnippetBatch<T> assemble_batch(const std::vector<const SilhouetteSequence*>& seqs,
                               const std::vector<SnippetPlan>& plans);

// Handles produced by heads_forward. Eval phase fills only seq_parts.
struct HeadOutputs {
  Var seq_parts;    // F  [B, P, D] (pre-BNNeck)
  Var seq_logits;   //    [B, P, Nc]
  Var snip_parts;   // F* [G, P, D]
  Var snip_logits;  //    [G, P, Nc]
};

template <typename T>
class SnippetNet {
 public:
  SnippetNet(BackboneConfig backbone, HeadConfig head, uint64_t init_seed);

  const BackboneConfig& backbone_config() const { return backbone_; }
  const HeadConfig& head_config() const { return head_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }

  Var snippet_block(Tape<T>& tape, Var x, const GroupIndex& groups, const std::string& prefix,
                    Phase phase);
  Var residual_snippet_block(Tape<T>& tape, Var x, const GroupIndex& groups,
                             const std::string& prefix, int stride, Phase phase);
  Var backbone_forward(Tape<T>& tape, Var frames, const GroupIndex& snippets, Phase phase);
  HeadOutputs heads_forward(Tape<T>& tape, Var feature_map, const GroupIndex& snippets,
                            const GroupIndex& sequences, Phase phase);

  // Sequence-level retrieval feature [P, part_dim] from all snippets of the
  // fixed inference partition, in one eval-phase forward pass.
  NdArray<T> inference_embed(const SilhouetteSequence& seq, int L);

  static bool is_snippet_branch(const std::string& param_name);

  // Marks every running moment as populated with its current values
  // (mean 0, variance 1 on a fresh model) so eval-phase passes can run
  // without training.
  void use_default_moments();

 private:
  Var param(Tape<T>& tape, const std::string& name);
  Var norm(Tape<T>& tape, Var x, const std::string& prefix, Phase phase);
  struct Branch {
    Var parts, logits;
  };
  Branch branch_forward(Tape<T>& tape, Var maps, const std::string& prefix, Phase phase);
  void add_norm(const std::string& prefix, int64_t channels);

  BackboneConfig backbone_;
  HeadConfig head_;
  ParamStore<T> store_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class SnippetNet<float>;
extern template class SnippetNet<double>;

}  // namespace snpg
