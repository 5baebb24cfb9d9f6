#include "snpg/model.hpp"

#include <cmath>
#include <stdexcept>

#include "snpg/ops.hpp"
#include "snpg/rng.hpp"

namespace snpg {

BackboneConfig BackboneConfig::desk() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::paper() {
  BackboneConfig cfg;
  cfg.blocks = {1, 4, 4, 1};
  cfg.channels = {64, 128, 256, 512};
  cfg.strides = {1, 2, 2, 1};
  return cfg;
}

void BackboneConfig::validate() const {
  if (blocks.empty() || blocks.size() != channels.size() || blocks.size() != strides.size()) {
    throw std::invalid_argument("backbone: blocks, channels and strides must share a non-zero length");
  }
  for (size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i] < 1 || channels[i] < 1 || strides[i] < 1 || strides[i] > 2) {
      throw std::invalid_argument("backbone: stage " + std::to_string(i) +
                                  " needs blocks >= 1, channels >= 1, stride in {1, 2}");
    }
  }
}

void HeadConfig::validate() const {
  if (num_parts < 1 || part_dim < 1 || num_classes < 1) {
    throw std::invalid_argument("head: num_parts, part_dim and num_classes must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& name, NdArray<T> init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_[name] = params_.size();
  params_.push_back(Parameter<T>{name, std::move(init), {}});
  params_.back().zero_grad();
  return params_.back();
}

template <typename T>
FeatNormState<T>& ParamStore<T>::add_norm_state(const std::string& name, int64_t channels) {
  if (norm_index_.count(name)) throw std::invalid_argument("duplicate norm state " + name);
  norm_index_[name] = norms_.size();
  norms_.emplace_back(name, FeatNormState<T>(channels));
  return norms_.back().second;
}

template <typename T>
Parameter<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return params_[it->second];
}

template <typename T>
const Parameter<T>& ParamStore<T>::get(const std::string& name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

template <typename T>
FeatNormState<T>& ParamStore<T>::norm_state(const std::string& name) {
  auto it = norm_index_.find(name);
  if (it == norm_index_.end()) throw std::out_of_range("unknown norm state " + name);
  return norms_[it->second].second;
}

template <typename T>
std::vector<Parameter<T>*> ParamStore<T>::params() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ParamStore<T>::params() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, FeatNormState<T>*>> ParamStore<T>::norm_states() {
  std::vector<std::pair<std::string, FeatNormState<T>*>> out;
  for (auto& [name, state] : norms_) out.emplace_back(name, &state);
  return out;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
std::vector<NamedTensor> ParamStore<T>::export_tensors() const {
  std::vector<NamedTensor> out;
  for (const auto& p : params_) out.push_back({p.name, p.value.template cast<float>()});
  for (const auto& [name, state] : norms_) {
    out.push_back({name + ".running_mean", state.running_mean.template cast<float>()});
    out.push_back({name + ".running_var", state.running_var.template cast<float>()});
    out.push_back({name + ".populated", NdArray<float>({1}, state.populated ? 1.0f : 0.0f)});
  }
  return out;
}

template <typename T>
void ParamStore<T>::import_tensors(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NdArray<float>*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.tensor;
  auto fetch = [&](const std::string& name, const Shape& shape) -> NdArray<T> {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing tensor " + name);
    if (it->second->shape() != shape) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               shape_str(it->second->shape()) + ", expected " + shape_str(shape));
    }
    return it->second->template cast<T>();
  };
  for (auto& p : params_) p.value = fetch(p.name, p.value.shape());
  for (auto& [name, state] : norms_) {
    state.running_mean = fetch(name + ".running_mean", state.running_mean.shape());
    state.running_var = fetch(name + ".running_var", state.running_var.shape());
    state.populated = fetch(name + ".populated", {1})[0] != T(0);
  }
}

// ---------------------------------------------------------------------------
// Batch assembly

template <typename T>
SnippetBatch<T> assemble_batch(const std::vector<const SilhouetteSequence*>& seqs,
                               const std::vector<SnippetPlan>& plans) {
  if (seqs.empty() || seqs.size() != plans.size()) {
    throw std::invalid_argument("assemble_batch: need one plan per sequence");
  }
  const int64_t h = seqs[0]->height(), w = seqs[0]->width();
  int64_t total = 0;
  std::vector<int> snippet_sizes, snippet_seq;
  for (size_t i = 0; i < seqs.size(); ++i) {
    if (seqs[i]->height() != h || seqs[i]->width() != w) {
      throw ShapeError("assemble_batch: sequences have different frame sizes");
    }
    for (const auto& s : plans[i].snippets) {
      snippet_sizes.push_back(static_cast<int>(s.frames.size()));
      snippet_seq.push_back(static_cast<int>(i));
      total += static_cast<int64_t>(s.frames.size());
    }
  }
  NdArray<T> frames({total, 1, h, w});
  int64_t slot = 0;
  for (size_t i = 0; i < seqs.size(); ++i) {
    for (const auto& s : plans[i].snippets) {
      for (int f : s.frames) {
        if (f < 0 || f >= seqs[i]->length()) {
          throw std::out_of_range("assemble_batch: frame index " + std::to_string(f) +
                                  " outside sequence");
        }
        const Frame& src = seqs[i]->frames[static_cast<size_t>(f)];
        T* dst = frames.data() + slot * h * w;
        for (int64_t k = 0; k < h * w; ++k) dst[k] = static_cast<T>(src[k]);
        ++slot;
      }
    }
  }
  return {std::move(frames), GroupIndex::from_sizes(snippet_sizes),
          GroupIndex(std::move(snippet_seq), static_cast<int>(seqs.size()))};
}

// ---------------------------------------------------------------------------
// SnippetNet

namespace {

template <typename T>
NdArray<T> kaiming_normal(Shape shape, int64_t fan_in, Rng& rng) {
  NdArray<T> w(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(dist(rng));
  return w;
}

template <typename T>
NdArray<T> xavier_uniform(Shape shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
  NdArray<T> w(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(dist(rng));
  return w;
}

std::string block_prefix(size_t stage, int block) {
  return "stage" + std::to_string(stage) + ".block" + std::to_string(block);
}

}  // namespace

template <typename T>
SnippetNet<T>::SnippetNet(BackboneConfig backbone, HeadConfig head, uint64_t init_seed)
    : backbone_(std::move(backbone)), head_(head) {
  backbone_.validate();
  head_.validate();
  Rng rng = make_stream(init_seed, 0x6d6f64656cULL);
  const int c0 = backbone_.channels[0];
  store_.add("stem.conv.w", kaiming_normal<T>({c0, 1, 3, 3}, 9, rng));
  add_norm("stem.norm", c0);
  int cin = c0;
  for (size_t s = 0; s < backbone_.blocks.size(); ++s) {
    const int cout = backbone_.channels[s];
    for (int b = 0; b < backbone_.blocks[s]; ++b) {
      const std::string p = block_prefix(s, b);
      const int stride = b == 0 ? backbone_.strides[s] : 1;
      store_.add(p + ".conv1.w", kaiming_normal<T>({cout, cin, 3, 3}, cin * 9, rng));
      add_norm(p + ".norm1", cout);
      store_.add(p + ".snippet.smooth.w", kaiming_normal<T>({cout, cout, 1, 1}, cout, rng));
      if (backbone_.smoothing_norm) add_norm(p + ".snippet.norm", cout);
      store_.add(p + ".conv2.w", kaiming_normal<T>({cout, cout, 3, 3}, cout * 9, rng));
      add_norm(p + ".norm2", cout);
      if (stride != 1 || cin != cout) {
        store_.add(p + ".skip.conv.w", kaiming_normal<T>({cout, cin, 1, 1}, cin, rng));
        add_norm(p + ".skip.norm", cout);
      }
      cin = cout;
    }
  }
  const int parts = head_.num_parts, dim = head_.part_dim, classes = head_.num_classes;
  for (const std::string branch : {"seq", "snip"}) {
    if (branch == "snip" && head_.share_weights) break;
    store_.add(branch + ".hpm.w", xavier_uniform<T>({parts, dim, cin}, cin, dim, rng));
    add_norm(branch + ".bnneck", static_cast<int64_t>(parts) * dim);
    store_.add(branch + ".cls.w", xavier_uniform<T>({parts, classes, dim}, dim, classes, rng));
  }
}

template <typename T>
void SnippetNet<T>::add_norm(const std::string& prefix, int64_t channels) {
  store_.add(prefix + ".gamma", NdArray<T>({channels}, T(1)));
  store_.add(prefix + ".beta", NdArray<T>({channels}, T(0)));
  store_.add_norm_state(prefix, channels);
}

template <typename T>
Var SnippetNet<T>::param(Tape<T>& tape, const std::string& name) {
  return tape.param(store_.get(name));
}

template <typename T>
Var SnippetNet<T>::norm(Tape<T>& tape, Var x, const std::string& prefix, Phase phase) {
  return ad::featnorm(tape, x, param(tape, prefix + ".gamma"), param(tape, prefix + ".beta"),
                      phase, store_.norm_state(prefix));
}

template <typename T>
Var SnippetNet<T>::snippet_block(Tape<T>& tape, Var x, const GroupIndex& groups,
                                 const std::string& prefix, Phase phase) {
  if (!backbone_.gathering) return x;
  Var context = ad::group_max(tape, x, groups);
  if (backbone_.smoothing) {
    context = ad::conv2d(tape, context, param(tape, prefix + ".smooth.w"), 1, 0);
    if (backbone_.smoothing_norm) context = norm(tape, context, prefix + ".norm", phase);
  }
  if (backbone_.residual) return ad::broadcast_add(tape, x, context, groups);
  return ad::broadcast(tape, context, groups);
}

template <typename T>
Var SnippetNet<T>::residual_snippet_block(Tape<T>& tape, Var x, const GroupIndex& groups,
                                          const std::string& prefix, int stride, Phase phase) {
  Var path = ad::conv2d(tape, x, param(tape, prefix + ".conv1.w"), stride, 1);
  path = ad::relu(tape, norm(tape, path, prefix + ".norm1", phase));
  path = snippet_block(tape, path, groups, prefix + ".snippet", phase);
  path = ad::conv2d(tape, path, param(tape, prefix + ".conv2.w"), 1, 1);
  path = norm(tape, path, prefix + ".norm2", phase);
  Var skip = x;
  if (store_.contains(prefix + ".skip.conv.w")) {
    skip = ad::conv2d(tape, x, param(tape, prefix + ".skip.conv.w"), stride, 0);
    skip = norm(tape, skip, prefix + ".skip.norm", phase);
  } else if (tape.value(x).shape() != tape.value(path).shape()) {
    throw ShapeError("residual block " + prefix + ": identity skip with mismatched shapes");
  }
  return ad::relu(tape, ad::add(tape, path, skip));
}

template <typename T>
Var SnippetNet<T>::backbone_forward(Tape<T>& tape, Var frames, const GroupIndex& snippets,
                                    Phase phase) {
  const NdArray<T>& in = tape.value(frames);
  if (in.rank() != 4 || in.dim(1) != 1) {
    throw ShapeError("backbone expects frames [F, 1, H, W], got " + shape_str(in.shape()));
  }
  Var x = ad::conv2d(tape, frames, param(tape, "stem.conv.w"), 1, 1);
  x = ad::relu(tape, norm(tape, x, "stem.norm", phase));
  for (size_t s = 0; s < backbone_.blocks.size(); ++s) {
    for (int b = 0; b < backbone_.blocks[s]; ++b) {
      const int stride = b == 0 ? backbone_.strides[s] : 1;
      x = residual_snippet_block(tape, x, snippets, block_prefix(s, b), stride, phase);
    }
  }
  return x;
}

template <typename T>
typename SnippetNet<T>::Branch SnippetNet<T>::branch_forward(Tape<T>& tape, Var maps,
                                                             const std::string& prefix,
                                                             Phase phase) {
  Var pooled = ad::part_pool(tape, maps, head_.num_parts);
  Var parts = ad::part_linear(tape, pooled, param(tape, prefix + ".hpm.w"));
  if (phase == Phase::eval) return {parts, Var{}};
  const int64_t n = tape.value(parts).dim(0);
  const int64_t p = head_.num_parts, d = head_.part_dim;
  Var flat = ad::reshape(tape, parts, {n, p * d});
  Var normed = ad::reshape(tape, norm(tape, flat, prefix + ".bnneck", phase), {n, p, d});
  Var logits = ad::part_linear(tape, normed, param(tape, prefix + ".cls.w"));
  return {parts, logits};
}

template <typename T>
HeadOutputs SnippetNet<T>::heads_forward(Tape<T>& tape, Var feature_map,
                                         const GroupIndex& snippets,
                                         const GroupIndex& sequences, Phase phase) {
  const NdArray<T>& fm = tape.value(feature_map);
  if (fm.rank() != 4 || fm.dim(2) % head_.num_parts != 0) {
    throw ShapeError("heads: feature height of " + shape_str(fm.shape()) +
                     " is not divisible into " + std::to_string(head_.num_parts) + " parts");
  }
  if (sequences.num_slots() != snippets.num_groups()) {
    throw ShapeError("heads: sequence grouping does not cover every snippet");
  }
  Var snippet_maps = ad::group_max(tape, feature_map, snippets);
  Var sequence_maps = ad::group_max(tape, snippet_maps, sequences);
  HeadOutputs out;
  Branch seq = branch_forward(tape, sequence_maps, "seq", phase);
  out.seq_parts = seq.parts;
  out.seq_logits = seq.logits;
  if (phase == Phase::train) {
    Branch snip = branch_forward(tape, snippet_maps, head_.share_weights ? "seq" : "snip", phase);
    out.snip_parts = snip.parts;
    out.snip_logits = snip.logits;
  }
  return out;
}

template <typename T>
NdArray<T> SnippetNet<T>::inference_embed(const SilhouetteSequence& seq, int L) {
  validate_sequence(seq);
  const SnippetPlan plan = plan_infer(partition_infer(static_cast<int>(seq.length()), L));
  SnippetBatch<T> batch = assemble_batch<T>({&seq}, {plan});
  Tape<T> tape;
  Var frames = tape.constant(std::move(batch.frames));
  Var fm = backbone_forward(tape, frames, batch.snippets, Phase::eval);
  HeadOutputs out = heads_forward(tape, fm, batch.snippets, batch.sequences, Phase::eval);
  const NdArray<T>& parts = tape.value(out.seq_parts);
  return parts.reshaped({parts.dim(1), parts.dim(2)});
}

template <typename T>
bool SnippetNet<T>::is_snippet_branch(const std::string& param_name) {
  return param_name.rfind("snip.", 0) == 0;
}

template <typename T>
void SnippetNet<T>::use_default_moments() {
  for (auto& [name, state] : store_.norm_states()) state->populated = true;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class SnippetNet<float>;
template class SnippetNet<double>;
template SnippetBatch<float> assemble_batch(const std::vector<const SilhouetteSequence*>&,
                                            const std::vector<SnippetPlan>&);
template SnippetBatch<double> assemble_batch(const std::vector<const SilhouetteSequence*>&,
                                             const std::vector<SnippetPlan>&);

}  // namespace snpg
