#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "snpg/ndarray.hpp"

namespace snpg {

struct EmbeddingEntry {
  int subject = 0;
  int sequence = 0;
  NdArray<float> parts;  // [P, part_dim]
};

struct EmbeddingSet {
  std::vector<EmbeddingEntry> entries;

  size_t size() const { return entries.size(); }
  // Throws if the entries disagree on P or part_dim.
  void validate() const;
  std::vector<int> subjects() const;
};

struct DistanceMatrix {
  int64_t rows = 0, cols = 0;
  std::vector<double> values;

  double operator()(int64_t i, int64_t j) const { return values[i * cols + j]; }
};

// Euclidean distance between flattened P x part_dim vectors.
DistanceMatrix pairwise_distance(const EmbeddingSet& probe, const EmbeddingSet& gallery);

// Optional rows x cols mask; a nonzero entry removes that gallery item from
// the probe's ranking. Empty means nothing is excluded.
using ExclusionMask = std::vector<uint8_t>;

// Gallery indices of probe i in ascending distance, ties by gallery index.
std::vector<int64_t> ranking(const DistanceMatrix& dist, int64_t probe,
                             const ExclusionMask& excluded = {});

double rank_k(const DistanceMatrix& dist, std::span<const int> probe_labels,
              std::span<const int> gallery_labels, int k, const ExclusionMask& excluded = {});

double mean_ap(const DistanceMatrix& dist, std::span<const int> probe_labels,
               std::span<const int> gallery_labels, const ExclusionMask& excluded = {});

struct ProbeResult {
  int subject = 0;
  int sequence = 0;
  double ap = 0;
  int first_hit = 0;  // 1-based rank of the first same-subject entry
};

struct RetrievalResult {
  double rank1 = 0;
  double rank5 = 0;
  double mAP = 0;
  std::vector<ProbeResult> per_probe;

  nlohmann::ordered_json to_json() const;
};

// Retrieval of every probe against the gallery. With exclude_self, gallery
// entries carrying the probe's own (subject, sequence) key are skipped.
RetrievalResult evaluate(const EmbeddingSet& probe, const EmbeddingSet& gallery,
                         bool exclude_self = false);

// JSON lines: {"subject":int,"sequence":int,"parts":[[...],...]}
void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

}  // namespace snpg
