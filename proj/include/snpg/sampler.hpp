#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "snpg/rng.hpp"

namespace snpg {

struct SamplerConfig {
  int L = 16;  // segment length
  int M = 4;   // snippets per sequence
  int N = 8;   // frames per snippet
  uint64_t seed = 0;

  int budget() const { return M * N; }
  void validate() const;
};

// Contiguous segments covering a sequence: a first segment of length
// min(L1, length), then full segments of L, then a remainder in [1, L).
struct Partition {
  int first_length = 0;  // L1 as drawn (before clipping to the sequence)
  std::vector<int> segment_lengths;

  int num_segments() const { return static_cast<int>(segment_lengths.size()); }
  int sequence_length() const;
  int segment_begin(int k) const;  // 0-based segment index
};

struct Snippet {
  int segment = 0;  // 1-based segment label k
  std::vector<int> frames;
};

struct SnippetPlan {
  Partition partition;
  std::vector<Snippet> snippets;

  std::vector<int> snippet_sizes() const;
  int total_frames() const;
};

Partition make_partition(int seq_len, int first_length, int L);
Partition partition_train(int seq_len, const SamplerConfig& cfg, Rng& rng);
Partition partition_infer(int seq_len, int L);

SnippetPlan sample_snippets_train(const Partition& partition, const SamplerConfig& cfg, Rng& rng);
SnippetPlan plan_infer(const Partition& partition);

// {"L1":..,"segments":[..],"snippets":[{"k":..,"frames":[..]},..]}
nlohmann::ordered_json plan_to_json(const SnippetPlan& plan);

}  // namespace snpg
