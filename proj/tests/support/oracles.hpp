#pragma once

// Reference computations used as independent oracles by the unit and
// acceptance suites. Everything here is written as plain nested loops in
// double precision and shares no code with the library paths it checks.

#include <cstdint>
#include <vector>

#include "snpg/ndarray.hpp"
#include "snpg/rng.hpp"

namespace snpg::oracle {

using Vec = std::vector<double>;

struct TripletSum {
  double loss = 0;
  int64_t active = 0;
  int64_t terms = 0;
};

double euclidean(const Vec& a, const Vec& b);

// f[u][v] is the feature of sequence v of subject u. Enumerates anchors
// (u,v), positives (u,a) and negatives (b != u, c).
TripletSum sequence_triplets(const std::vector<std::vector<Vec>>& f, double margin,
                             bool self_positive);

// f[u][v][m]: anchors (u,v,m), positives (u,a,i), negatives (b != u,c,j).
TripletSum snippet_triplets(const std::vector<std::vector<std::vector<Vec>>>& f, double margin,
                            bool self_positive);

// Mean negative log-likelihood of the softmax of each row.
double cross_entropy(const std::vector<Vec>& logits, const std::vector<int>& labels);

// 1-based rank of gallery item j for a distance row: items strictly closer,
// or equally close with a lower index, come first.
int64_t rank_of(const Vec& row, int64_t j);
double rank_k(const std::vector<Vec>& dist, const std::vector<int>& probe,
              const std::vector<int>& gallery, int k);
double average_precision(const Vec& row, int probe_label, const std::vector<int>& gallery);
double mean_ap(const std::vector<Vec>& dist, const std::vector<int>& probe,
               const std::vector<int>& gallery);

// Cross-correlation with zero padding, [B,Cin,H,W] x [Cout,Cin,k,k].
NdArray<double> conv2d(const NdArray<double>& x, const NdArray<double>& w, int stride, int pad);

// Elementwise maximum over the listed slots of a [F, ...] array.
NdArray<double> max_over(const NdArray<double>& frames, const std::vector<int>& slots);

// Upper critical value of the chi-square distribution.
double chi_square_critical(int dof, double significance);

NdArray<double> uniform(const Shape& shape, Rng& rng, double lo = -1, double hi = 1);

}  // namespace snpg::oracle
