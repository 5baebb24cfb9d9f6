#include "snpg/sampler.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace snpg {

void SamplerConfig::validate() const {
  if (L < 1 || M < 1 || N < 1) throw std::invalid_argument("sampler: L, M and N must be >= 1");
}

int Partition::sequence_length() const {
  return std::accumulate(segment_lengths.begin(), segment_lengths.end(), 0);
}

int Partition::segment_begin(int k) const {
  return std::accumulate(segment_lengths.begin(), segment_lengths.begin() + k, 0);
}

std::vector<int> SnippetPlan::snippet_sizes() const {
  std::vector<int> sizes;
  for (const auto& s : snippets) sizes.push_back(static_cast<int>(s.frames.size()));
  return sizes;
}

int SnippetPlan::total_frames() const {
  int n = 0;
  for (const auto& s : snippets) n += static_cast<int>(s.frames.size());
  return n;
}

Partition make_partition(int seq_len, int first_length, int L) {
  if (seq_len < 1) throw std::invalid_argument("partition: sequence length must be >= 1");
  if (L < 1 || first_length < 1 || first_length > L) {
    throw std::invalid_argument("partition: need 1 <= L1 <= L");
  }
  Partition p;
  p.first_length = first_length;
  int remaining = seq_len;
  int next = first_length;
  while (remaining > 0) {
    const int len = std::min(next, remaining);
    p.segment_lengths.push_back(len);
    remaining -= len;
    next = L;
  }
  return p;
}

Partition partition_train(int seq_len, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  return make_partition(seq_len, uniform_int(rng, 1, cfg.L), cfg.L);
}

Partition partition_infer(int seq_len, int L) { return make_partition(seq_len, L, L); }

namespace {

// `count` draws from [0, n): distinct when n >= count, else with replacement.
std::vector<int> draw_indices(int n, int count, Rng& rng) {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(count));
  if (n >= count) {
    std::vector<int> pool(static_cast<size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < count; ++i) {
      const int j = uniform_int(rng, i, n - 1);
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
      out.push_back(pool[static_cast<size_t>(i)]);
    }
  } else {
    for (int i = 0; i < count; ++i) out.push_back(uniform_int(rng, 0, n - 1));
  }
  return out;
}

// Segment picks: distinct when n >= count; under shortage every segment is
// taken once in random order and the rest are drawn with replacement.
std::vector<int> draw_segments(int n, int count, Rng& rng) {
  if (n >= count) return draw_indices(n, count, rng);
  std::vector<int> out = draw_indices(n, n, rng);
  for (int i = n; i < count; ++i) out.push_back(uniform_int(rng, 0, n - 1));
  return out;
}

}  // namespace

SnippetPlan sample_snippets_train(const Partition& partition, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (partition.segment_lengths.empty()) throw std::invalid_argument("sampler: empty partition");
  SnippetPlan plan{partition, {}};
  for (int k : draw_segments(partition.num_segments(), cfg.M, rng)) {
    const int begin = partition.segment_begin(k);
    Snippet snip{k + 1, {}};
    for (int offset : draw_indices(partition.segment_lengths[static_cast<size_t>(k)], cfg.N, rng)) {
      snip.frames.push_back(begin + offset);
    }
    std::sort(snip.frames.begin(), snip.frames.end());
    plan.snippets.push_back(std::move(snip));
  }
  return plan;
}

SnippetPlan plan_infer(const Partition& partition) {
  SnippetPlan plan{partition, {}};
  int begin = 0;
  for (int k = 0; k < partition.num_segments(); ++k) {
    Snippet snip{k + 1, {}};
    const int len = partition.segment_lengths[static_cast<size_t>(k)];
    for (int i = 0; i < len; ++i) snip.frames.push_back(begin + i);
    begin += len;
    plan.snippets.push_back(std::move(snip));
  }
  return plan;
}

nlohmann::ordered_json plan_to_json(const SnippetPlan& plan) {
  nlohmann::ordered_json j;
  j["L1"] = plan.partition.first_length;
  j["segments"] = plan.partition.segment_lengths;
  j["snippets"] = nlohmann::json::array();
  for (const auto& s : plan.snippets) {
    j["snippets"].push_back(nlohmann::ordered_json{{"k", s.segment}, {"frames", s.frames}});
  }
  return j;
}

}  // namespace snpg
