#include "snpg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "snpg/parallel.hpp"

namespace snpg {

void EmbeddingSet::validate() const {
  if (entries.empty()) return;
  const Shape& ref = entries.front().parts.shape();
  if (ref.size() != 2) throw ShapeError("embedding: parts must be [P, part_dim]");
  for (const auto& e : entries) {
    if (e.parts.shape() != ref) {
      throw ShapeError("embedding: inconsistent parts shape " + shape_str(e.parts.shape()) +
                       " vs " + shape_str(ref));
    }
  }
}

std::vector<int> EmbeddingSet::subjects() const {
  std::vector<int> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.subject);
  return out;
}

DistanceMatrix pairwise_distance(const EmbeddingSet& probe, const EmbeddingSet& gallery) {
  probe.validate();
  gallery.validate();
  DistanceMatrix out;
  out.rows = static_cast<int64_t>(probe.size());
  out.cols = static_cast<int64_t>(gallery.size());
  out.values.assign(static_cast<size_t>(out.rows * out.cols), 0.0);
  if (out.rows == 0 || out.cols == 0) return out;
  if (probe.entries[0].parts.shape() != gallery.entries[0].parts.shape()) {
    throw ShapeError("pairwise_distance: probe " + shape_str(probe.entries[0].parts.shape()) +
                     " vs gallery " + shape_str(gallery.entries[0].parts.shape()));
  }
  const int64_t dim = probe.entries[0].parts.size();
  parallel_for(out.rows, [&](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) {
      const float* a = probe.entries[i].parts.data();
      for (int64_t j = 0; j < out.cols; ++j) {
        const float* b = gallery.entries[j].parts.data();
        double s = 0;
        for (int64_t k = 0; k < dim; ++k) {
          const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
          s += d * d;
        }
        out.values[i * out.cols + j] = std::sqrt(s);
      }
    }
  });
  return out;
}

std::vector<int64_t> ranking(const DistanceMatrix& dist, int64_t probe,
                             const ExclusionMask& excluded) {
  std::vector<int64_t> order;
  order.reserve(static_cast<size_t>(dist.cols));
  for (int64_t j = 0; j < dist.cols; ++j) {
    if (!excluded.empty() && excluded[probe * dist.cols + j]) continue;
    order.push_back(j);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return dist(probe, a) < dist(probe, b); });
  return order;
}

namespace {

void check_labels(const DistanceMatrix& dist, std::span<const int> probe_labels,
                  std::span<const int> gallery_labels, const ExclusionMask& excluded) {
  if (static_cast<int64_t>(probe_labels.size()) != dist.rows ||
      static_cast<int64_t>(gallery_labels.size()) != dist.cols) {
    throw std::invalid_argument("retrieval: label counts do not match the distance matrix");
  }
  if (!excluded.empty() && static_cast<int64_t>(excluded.size()) != dist.rows * dist.cols) {
    throw std::invalid_argument("retrieval: exclusion mask has the wrong size");
  }
  if (dist.rows == 0) throw std::invalid_argument("retrieval: no probes");
}

struct ProbeStats {
  double ap = 0;
  int first_hit = 0;
};

ProbeStats probe_stats(const DistanceMatrix& dist, int64_t i, std::span<const int> probe_labels,
                       std::span<const int> gallery_labels, const ExclusionMask& excluded) {
  const std::vector<int64_t> order = ranking(dist, i, excluded);
  ProbeStats s;
  int hits = 0;
  for (size_t r = 0; r < order.size(); ++r) {
    if (gallery_labels[order[r]] != probe_labels[i]) continue;
    ++hits;
    if (hits == 1) s.first_hit = static_cast<int>(r) + 1;
    s.ap += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits == 0) {
    throw std::invalid_argument("retrieval: probe " + std::to_string(i) + " (subject " +
                                std::to_string(probe_labels[i]) +
                                ") has no relevant gallery entry");
  }
  s.ap /= hits;
  return s;
}

}  // namespace

double rank_k(const DistanceMatrix& dist, std::span<const int> probe_labels,
              std::span<const int> gallery_labels, int k, const ExclusionMask& excluded) {
  check_labels(dist, probe_labels, gallery_labels, excluded);
  if (k < 1) throw std::invalid_argument("rank_k: k must be >= 1");
  int64_t count = 0;
  for (int64_t i = 0; i < dist.rows; ++i) {
    if (probe_stats(dist, i, probe_labels, gallery_labels, excluded).first_hit <= k) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(dist.rows);
}

double mean_ap(const DistanceMatrix& dist, std::span<const int> probe_labels,
               std::span<const int> gallery_labels, const ExclusionMask& excluded) {
  check_labels(dist, probe_labels, gallery_labels, excluded);
  double total = 0;
  for (int64_t i = 0; i < dist.rows; ++i) {
    total += probe_stats(dist, i, probe_labels, gallery_labels, excluded).ap;
  }
  return total / static_cast<double>(dist.rows);
}

nlohmann::ordered_json RetrievalResult::to_json() const {
  nlohmann::ordered_json j;
  j["rank1"] = rank1;
  j["rank5"] = rank5;
  j["mAP"] = mAP;
  j["per_probe"] = nlohmann::ordered_json::array();
  for (const auto& p : per_probe) {
    j["per_probe"].push_back(
        {{"subject", p.subject}, {"sequence", p.sequence}, {"ap", p.ap}, {"first_hit", p.first_hit}});
  }
  return j;
}

RetrievalResult evaluate(const EmbeddingSet& probe, const EmbeddingSet& gallery,
                         bool exclude_self) {
  const DistanceMatrix dist = pairwise_distance(probe, gallery);
  const std::vector<int> pl = probe.subjects();
  const std::vector<int> gl = gallery.subjects();
  ExclusionMask mask;
  if (exclude_self) {
    mask.assign(static_cast<size_t>(dist.rows * dist.cols), 0);
    for (int64_t i = 0; i < dist.rows; ++i) {
      for (int64_t j = 0; j < dist.cols; ++j) {
        mask[i * dist.cols + j] = probe.entries[i].subject == gallery.entries[j].subject &&
                                  probe.entries[i].sequence == gallery.entries[j].sequence;
      }
    }
  }
  check_labels(dist, pl, gl, mask);
  RetrievalResult out;
  int64_t r1 = 0, r5 = 0;
  double ap = 0;
  for (int64_t i = 0; i < dist.rows; ++i) {
    const ProbeStats s = probe_stats(dist, i, pl, gl, mask);
    r1 += s.first_hit <= 1;
    r5 += s.first_hit <= 5;
    ap += s.ap;
    out.per_probe.push_back({probe.entries[i].subject, probe.entries[i].sequence, s.ap, s.first_hit});
  }
  const double n = static_cast<double>(dist.rows);
  out.rank1 = static_cast<double>(r1) / n;
  out.rank5 = static_cast<double>(r5) / n;
  out.mAP = ap / n;
  return out;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  set.validate();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& e : set.entries) {
    const int64_t parts = e.parts.dim(0), dim = e.parts.dim(1);
    nlohmann::json rows = nlohmann::json::array();
    for (int64_t p = 0; p < parts; ++p) {
      rows.push_back(std::vector<float>(e.parts.data() + p * dim, e.parts.data() + (p + 1) * dim));
    }
    nlohmann::ordered_json line;
    line["subject"] = e.subject;
    line["sequence"] = e.sequence;
    line["parts"] = std::move(rows);
    os << line.dump() << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open embedding dump " + path.string());
  EmbeddingSet set;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      EmbeddingEntry e;
      e.subject = j.at("subject").get<int>();
      e.sequence = j.at("sequence").get<int>();
      const auto rows = j.at("parts").get<std::vector<std::vector<float>>>();
      if (rows.empty() || rows[0].empty()) throw std::runtime_error("empty parts");
      const int64_t dim = static_cast<int64_t>(rows[0].size());
      e.parts = NdArray<float>({static_cast<int64_t>(rows.size()), dim});
      for (size_t p = 0; p < rows.size(); ++p) {
        if (static_cast<int64_t>(rows[p].size()) != dim) throw std::runtime_error("ragged parts");
        std::copy(rows[p].begin(), rows[p].end(), e.parts.data() + static_cast<int64_t>(p) * dim);
      }
      set.entries.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  set.validate();
  return set;
}

}  // namespace snpg
