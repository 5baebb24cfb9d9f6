#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "snpg/dataset.hpp"
#include "snpg/eval.hpp"
#include "snpg/loss.hpp"
#include "snpg/model.hpp"
#include "snpg/rng.hpp"
#include "snpg/sampler.hpp"

namespace snpg {

struct OptimizerConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<double> milestones{0.6, 0.8};  // fractions of the total steps
  double decay = 0.1;

  void validate() const;
  // Learning rate in effect for 0-based step `step` of `total_steps`.
  double lr_at(int step, int total_steps) const;
};

struct TrainConfig {
  int U = 8;  // subjects per batch
  int V = 2;  // sequences per subject
  SamplerConfig sampler;
  BackboneConfig backbone = BackboneConfig::desk();
  HeadConfig head{8, 64, 0, false};
  LossConfig loss;
  OptimizerConfig optimizer;
  int steps = 1500;
  int checkpoint_interval = 0;  // 0: only the final checkpoint
  uint64_t seed = 0;
  // Sequence ids used for training; empty means all of them.
  std::vector<int> sequences;

  void validate() const;
};

// Training sequences grouped by subject; class ids follow ascending subject id.
class TrainingSet {
 public:
  TrainingSet(const std::vector<SilhouetteSequence>& data, const std::vector<int>& sequence_ids);

  int num_classes() const { return static_cast<int>(subjects_.size()); }
  int subject(int cls) const { return subjects_[static_cast<size_t>(cls)]; }
  const std::vector<const SilhouetteSequence*>& sequences(int cls) const {
    return by_class_[static_cast<size_t>(cls)];
  }

 private:
  std::vector<int> subjects_;
  std::vector<std::vector<const SilhouetteSequence*>> by_class_;
};

struct TrainBatch {
  std::vector<const SilhouetteSequence*> sequences;  // U x V, subject-major
  std::vector<SnippetPlan> plans;
  std::vector<int> seq_labels;      // class id per sequence
  std::vector<int> snippet_labels;  // class id per snippet
};

// U distinct subjects without replacement, V sequences each (with
// replacement only when a subject has fewer than V), a fresh plan per slot.
TrainBatch make_batch(const TrainingSet& data, const TrainConfig& cfg, Rng& rng);

class SgdOptimizer {
 public:
  explicit SgdOptimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) {}

  // buf = momentum * buf + (grad + weight_decay * w);  w -= lr * buf
  void step(ParamStore<float>& store, double lr);

  std::vector<NamedTensor> export_tensors() const;
  void import_tensors(const std::vector<NamedTensor>& tensors);

 private:
  OptimizerConfig cfg_;
  std::map<std::string, NdArray<float>> momentum_;
};

// One forward/backward/update. Throws std::runtime_error on a non-finite loss.
LossReport train_step(SnippetNet<float>& model, SgdOptimizer& opt, const TrainBatch& batch,
                      const LossConfig& loss, double lr);

struct FitOptions {
  std::filesystem::path run_dir;  // empty: no files are written
  bool resume = false;
  // Stored as config.json; defaults to the TrainConfig alone.
  std::optional<nlohmann::ordered_json> resolved_config;
  std::function<void(int step, double lr, const LossReport&)> on_step;
};

struct FitResult {
  std::unique_ptr<SnippetNet<float>> model;
  std::vector<double> losses;  // per step executed in this call
  int start_step = 0;
};

std::string checkpoint_name(int step);
// Highest-step ckpt_*.bin in run_dir, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

FitResult fit(const std::vector<SilhouetteSequence>& data, TrainConfig cfg,
              const FitOptions& options = {});

std::unique_ptr<SnippetNet<float>> make_model(const TrainConfig& cfg);
// Model weights from a checkpoint written by fit.
std::unique_ptr<SnippetNet<float>> load_model(const std::filesystem::path& checkpoint,
                                              const TrainConfig& cfg);

// Eval-phase sequence embeddings.
EmbeddingSet embed_sequences(SnippetNet<float>& model,
                             const std::vector<const SilhouetteSequence*>& seqs, int L);

}  // namespace snpg
