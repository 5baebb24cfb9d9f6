#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "snpg/model.hpp"
#include "snpg/tape.hpp"

namespace snpg {

struct LossConfig {
  double margin = 0.2;  // triplet margin
  double alpha = 0.75;  // weight of the snippet-level terms
  // Count the anchor itself among its positives, as the triplet sums are
  // written; false drops exactly the anchor == positive terms.
  bool self_positive = true;

  void validate() const;
};

struct TripletResult {
  double loss = 0;
  int64_t num_active = 0;      // strictly positive hinge terms
  std::vector<double> grad;    // d loss / d features, same layout as the input
};

// Hinge triplet loss over items with subject labels: every anchor i, every
// positive j of the same subject, every negative k of another subject,
// term = max(0, margin + |f_i - f_j| - |f_i - f_k|). Mean over the strictly
// positive terms; zero when there are none.
TripletResult triplet_hinge(std::span<const double> features, std::span<const int> labels,
                            int64_t dim, double margin, bool self_positive, bool want_grad);

// Sequence-level form over features [U, V, D] (subject-major).
TripletResult triplet_loss(std::span<const double> features, int U, int V, int64_t dim,
                           double margin, bool self_positive = true);

// Snippet-level form over features [U, V, M, D].
TripletResult snippet_triplet_loss(std::span<const double> features, int U, int V, int M,
                                   int64_t dim, double margin, bool self_positive = true);

struct CrossEntropyResult {
  double loss = 0;
  std::vector<double> grad;
};

// Softmax cross-entropy, mean over the batch. logits: [B, num_classes].
CrossEntropyResult cross_entropy(std::span<const double> logits, std::span<const int> labels,
                                 int num_classes, bool want_grad);

double combine(double tp, double ce, double tp_snippet, double ce_snippet, double alpha);

struct PartLoss {
  double tp = 0, ce = 0, tp_snippet = 0, ce_snippet = 0, all = 0;
  int64_t n_tp = 0, n_tp_snippet = 0;
};

// Per-part values and their mean across parts (counts in `mean` are totals).
struct LossReport {
  std::vector<PartLoss> parts;
  PartLoss mean;

  nlohmann::ordered_json to_json() const;
};

// Mean over parts of combine(...) applied per part.
double total_loss(std::span<const PartLoss> parts);

// Records the combined objective on the tape. seq_labels index the B
// sequences, snippet_labels the G snippets (class ids in [0, num_classes)).
template <typename T>
Var dual_level_loss(Tape<T>& tape, const HeadOutputs& heads, std::span<const int> seq_labels,
                    std::span<const int> snippet_labels, const LossConfig& cfg,
                    LossReport* report);

}  // namespace snpg
