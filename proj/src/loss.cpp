#include "snpg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace snpg {

void LossConfig::validate() const {
  if (!(margin > 0)) throw std::invalid_argument("loss: margin must be > 0");
  if (!(alpha >= 0)) throw std::invalid_argument("loss: alpha must be >= 0");
}

TripletResult triplet_hinge(std::span<const double> features, std::span<const int> labels,
                            int64_t dim, double margin, bool self_positive, bool want_grad) {
  const int64_t n = static_cast<int64_t>(labels.size());
  if (dim < 1 || static_cast<int64_t>(features.size()) != n * dim) {
    throw std::invalid_argument("triplet: feature count does not match labels x dim");
  }
  {
    std::vector<int> distinct(labels.begin(), labels.end());
    std::sort(distinct.begin(), distinct.end());
    if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
      throw std::invalid_argument("triplet: need at least two subjects (no negatives exist)");
    }
  }
  std::vector<double> dist(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (int64_t d = 0; d < dim; ++d) {
        const double diff = features[i * dim + d] - features[j * dim + d];
        s += diff * diff;
      }
      dist[i * n + j] = dist[j * n + i] = std::sqrt(s);
    }
  }
  TripletResult out;
  // weight[i * n + j]: signed count of active terms using d(i, j).
  std::vector<double> weight(want_grad ? static_cast<size_t>(n * n) : 0, 0.0);
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      if (labels[j] != labels[i] || (!self_positive && j == i)) continue;
      const double dpos = dist[i * n + j];
      for (int64_t k = 0; k < n; ++k) {
        if (labels[k] == labels[i]) continue;
        const double term = margin + dpos - dist[i * n + k];
        if (term > 0) {
          total += term;
          ++out.num_active;
          if (want_grad) {
            weight[i * n + j] += 1;
            weight[i * n + k] -= 1;
          }
        }
      }
    }
  }
  if (out.num_active == 0) {
    if (want_grad) out.grad.assign(features.size(), 0.0);
    return out;
  }
  const double scale = 1.0 / static_cast<double>(out.num_active);
  out.loss = total * scale;
  if (want_grad) {
    out.grad.assign(features.size(), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        const double w = weight[i * n + j];
        const double d = dist[i * n + j];
        if (w == 0 || d <= 0) continue;
        const double c = w * scale / d;
        for (int64_t k = 0; k < dim; ++k) {
          const double diff = features[i * dim + k] - features[j * dim + k];
          out.grad[i * dim + k] += c * diff;
          out.grad[j * dim + k] -= c * diff;
        }
      }
    }
  }
  return out;
}

TripletResult triplet_loss(std::span<const double> features, int U, int V, int64_t dim,
                           double margin, bool self_positive) {
  if (U < 2) throw std::invalid_argument("triplet_loss: U must be >= 2");
  if (V < 1) throw std::invalid_argument("triplet_loss: V must be >= 1");
  std::vector<int> labels;
  for (int u = 0; u < U; ++u) labels.insert(labels.end(), static_cast<size_t>(V), u);
  return triplet_hinge(features, labels, dim, margin, self_positive, true);
}

TripletResult snippet_triplet_loss(std::span<const double> features, int U, int V, int M,
                                   int64_t dim, double margin, bool self_positive) {
  if (U < 2) throw std::invalid_argument("snippet_triplet_loss: U must be >= 2");
  if (V < 1 || M < 1) throw std::invalid_argument("snippet_triplet_loss: V and M must be >= 1");
  std::vector<int> labels;
  for (int u = 0; u < U; ++u) labels.insert(labels.end(), static_cast<size_t>(V) * M, u);
  return triplet_hinge(features, labels, dim, margin, self_positive, true);
}

CrossEntropyResult cross_entropy(std::span<const double> logits, std::span<const int> labels,
                                 int num_classes, bool want_grad) {
  const int64_t b = static_cast<int64_t>(labels.size());
  if (b == 0 || num_classes < 1 || static_cast<int64_t>(logits.size()) != b * num_classes) {
    throw std::invalid_argument("cross_entropy: logits do not match labels x classes");
  }
  CrossEntropyResult out;
  if (want_grad) out.grad.assign(logits.size(), 0.0);
  double total = 0;
  for (int64_t i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " out of range");
    }
    const double* row = logits.data() + i * num_classes;
    const double top = *std::max_element(row, row + num_classes);
    double z = 0;
    for (int c = 0; c < num_classes; ++c) z += std::exp(row[c] - top);
    const double log_z = top + std::log(z);
    total += log_z - row[y];
    if (want_grad) {
      for (int c = 0; c < num_classes; ++c) {
        out.grad[i * num_classes + c] =
            (std::exp(row[c] - log_z) - (c == y ? 1.0 : 0.0)) / static_cast<double>(b);
      }
    }
  }
  out.loss = total / static_cast<double>(b);
  return out;
}

double combine(double tp, double ce, double tp_snippet, double ce_snippet, double alpha) {
  return tp + ce + alpha * (tp_snippet + ce_snippet);
}

double total_loss(std::span<const PartLoss> parts) {
  if (parts.empty()) throw std::invalid_argument("total_loss: no parts");
  double s = 0;
  for (const auto& p : parts) s += p.all;
  return s / static_cast<double>(parts.size());
}

nlohmann::ordered_json LossReport::to_json() const {
  auto column = [&](auto field) {
    std::vector<double> v;
    for (const auto& p : parts) v.push_back(p.*field);
    return v;
  };
  nlohmann::ordered_json j;
  j["loss"] = mean.all;
  j["tp"] = mean.tp;
  j["ce"] = mean.ce;
  j["tp_snippet"] = mean.tp_snippet;
  j["ce_snippet"] = mean.ce_snippet;
  j["n_tp"] = mean.n_tp;
  j["n_tp_snippet"] = mean.n_tp_snippet;
  j["per_part"] = {{"tp", column(&PartLoss::tp)},
                   {"ce", column(&PartLoss::ce)},
                   {"tp_snippet", column(&PartLoss::tp_snippet)},
                   {"ce_snippet", column(&PartLoss::ce_snippet)},
                   {"all", column(&PartLoss::all)}};
  return j;
}

namespace {

// Slice part p of a [B, P, D] array into a contiguous [B, D] double buffer.
template <typename T>
std::vector<double> part_slice(const NdArray<T>& x, int64_t p) {
  const int64_t b = x.dim(0), parts = x.dim(1), d = x.dim(2);
  std::vector<double> out(static_cast<size_t>(b * d));
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t k = 0; k < d; ++k) out[i * d + k] = x[(i * parts + p) * d + k];
  }
  return out;
}

template <typename T>
void scatter_part(const std::vector<double>& g, int64_t p, double scale, NdArray<T>& dst) {
  const int64_t b = dst.dim(0), parts = dst.dim(1), d = dst.dim(2);
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t k = 0; k < d; ++k) {
      dst[(i * parts + p) * d + k] += static_cast<T>(scale * g[i * d + k]);
    }
  }
}

}  // namespace

template <typename T>
Var dual_level_loss(Tape<T>& tape, const HeadOutputs& heads, std::span<const int> seq_labels,
                    std::span<const int> snippet_labels, const LossConfig& cfg,
                    LossReport* report) {
  cfg.validate();
  if (!heads.seq_logits.valid() || !heads.snip_parts.valid() || !heads.snip_logits.valid()) {
    throw std::invalid_argument("dual_level_loss: head outputs come from an eval-phase pass");
  }
  const NdArray<T>& f = tape.value(heads.seq_parts);
  const NdArray<T>& fl = tape.value(heads.seq_logits);
  const NdArray<T>& s = tape.value(heads.snip_parts);
  const NdArray<T>& sl = tape.value(heads.snip_logits);
  const int64_t parts = f.dim(1);
  const int classes = static_cast<int>(fl.dim(2));
  if (static_cast<int64_t>(seq_labels.size()) != f.dim(0) ||
      static_cast<int64_t>(snippet_labels.size()) != s.dim(0)) {
    throw std::invalid_argument("dual_level_loss: label count does not match batch");
  }
  const bool snippet_grad = cfg.alpha != 0.0;
  auto grads = std::make_shared<std::vector<NdArray<T>>>();
  grads->emplace_back(f.shape());
  grads->emplace_back(fl.shape());
  grads->emplace_back(s.shape());
  grads->emplace_back(sl.shape());
  LossReport rep;
  const double inv_parts = 1.0 / static_cast<double>(parts);
  for (int64_t p = 0; p < parts; ++p) {
    PartLoss pl;
    TripletResult tp = triplet_hinge(part_slice(f, p), seq_labels, f.dim(2), cfg.margin,
                                     cfg.self_positive, true);
    CrossEntropyResult ce = cross_entropy(part_slice(fl, p), seq_labels, classes, true);
    TripletResult tps = triplet_hinge(part_slice(s, p), snippet_labels, s.dim(2), cfg.margin,
                                      cfg.self_positive, snippet_grad);
    CrossEntropyResult ces = cross_entropy(part_slice(sl, p), snippet_labels, classes, snippet_grad);
    pl.tp = tp.loss;
    pl.ce = ce.loss;
    pl.tp_snippet = tps.loss;
    pl.ce_snippet = ces.loss;
    pl.n_tp = tp.num_active;
    pl.n_tp_snippet = tps.num_active;
    pl.all = combine(pl.tp, pl.ce, pl.tp_snippet, pl.ce_snippet, cfg.alpha);
    scatter_part(tp.grad, p, inv_parts, (*grads)[0]);
    scatter_part(ce.grad, p, inv_parts, (*grads)[1]);
    if (snippet_grad) {
      scatter_part(tps.grad, p, cfg.alpha * inv_parts, (*grads)[2]);
      scatter_part(ces.grad, p, cfg.alpha * inv_parts, (*grads)[3]);
    }
    rep.parts.push_back(pl);
  }
  for (const auto& pl : rep.parts) {
    rep.mean.tp += pl.tp * inv_parts;
    rep.mean.ce += pl.ce * inv_parts;
    rep.mean.tp_snippet += pl.tp_snippet * inv_parts;
    rep.mean.ce_snippet += pl.ce_snippet * inv_parts;
    rep.mean.n_tp += pl.n_tp;
    rep.mean.n_tp_snippet += pl.n_tp_snippet;
  }
  rep.mean.all = total_loss(rep.parts);
  if (!std::isfinite(rep.mean.all)) {
    throw std::runtime_error("dual_level_loss: non-finite loss (tp=" + std::to_string(rep.mean.tp) +
                             ", ce=" + std::to_string(rep.mean.ce) + ")");
  }
  const double value = rep.mean.all;
  if (report) *report = std::move(rep);
  const Var inputs[4] = {heads.seq_parts, heads.seq_logits, heads.snip_parts, heads.snip_logits};
  return tape.record(NdArray<T>({1}, static_cast<T>(value)),
                     {inputs[0], inputs[1], inputs[2], inputs[3]},
                     [inputs, grads](Tape<T>& t, const NdArray<T>& g) {
                       for (int i = 0; i < 4; ++i) {
                         NdArray<T>* d = t.grad_buffer(inputs[i]);
                         if (!d) continue;
                         const NdArray<T>& src = (*grads)[static_cast<size_t>(i)];
                         for (int64_t k = 0; k < d->size(); ++k) (*d)[k] += g[0] * src[k];
                       }
                     });
}

template Var dual_level_loss(Tape<float>&, const HeadOutputs&, std::span<const int>,
                             std::span<const int>, const LossConfig&, LossReport*);
template Var dual_level_loss(Tape<double>&, const HeadOutputs&, std::span<const int>,
                             std::span<const int>, const LossConfig&, LossReport*);

}  // namespace snpg
