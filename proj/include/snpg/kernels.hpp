#pragma once

#include <span>
#include <vector>

#include "snpg/ndarray.hpp"

namespace snpg {

enum class Phase { train, eval };

// Maps every frame slot to the snippet (group) it belongs to. Groups need not
// be contiguous; members are kept in ascending slot order.
class GroupIndex {
 public:
  GroupIndex() = default;
  GroupIndex(std::vector<int> group_of, int num_groups);

  static GroupIndex from_sizes(std::span<const int> sizes);
  static GroupIndex single(int num_slots);

  int num_groups() const { return num_groups_; }
  int64_t num_slots() const { return static_cast<int64_t>(group_of_.size()); }
  int group_of(int64_t slot) const { return group_of_[static_cast<size_t>(slot)]; }
  std::span<const int> assignment() const { return group_of_; }
  std::span<const int> members(int group) const;
  int group_size(int group) const { return offsets_[group + 1] - offsets_[group]; }

 private:
  std::vector<int> group_of_;
  int num_groups_ = 0;
  std::vector<int> offsets_;
  std::vector<int> members_;
};

inline constexpr double kFeatNormEps = 1e-5;
inline constexpr double kFeatNormMomentum = 0.9;

// Running moments of a feature-normalization layer.
template <typename T>
struct FeatNormState {
  NdArray<T> running_mean;
  NdArray<T> running_var;
  bool populated = false;

  explicit FeatNormState(int64_t channels = 1)
      : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

struct FeatNormCache {
  std::vector<double> mean;
  std::vector<double> invstd;
};

// Forward kernels return fresh arrays. Backward kernels accumulate (+=) into
// the gradient arrays they are handed; a null pointer skips that gradient.
namespace kernels {

// x: [B, Cin, H, W], w: [Cout, Cin, kh, kw] -> [B, Cout, H', W'].
template <typename T>
NdArray<T> conv2d_forward(const NdArray<T>& x, const NdArray<T>& w, int stride, int pad);
template <typename T>
void conv2d_backward(const NdArray<T>& x, const NdArray<T>& w, const NdArray<T>& dy,
                     int stride, int pad, NdArray<T>* dx, NdArray<T>* dw);

// x: [N, C, ...] normalized per channel over every axis but 1.
template <typename T>
NdArray<T> featnorm_forward(const NdArray<T>& x, const NdArray<T>& gamma,
                            const NdArray<T>& beta, Phase phase, FeatNormState<T>& state,
                            FeatNormCache& cache);
template <typename T>
void featnorm_backward(const NdArray<T>& x, const NdArray<T>& gamma,
                       const FeatNormCache& cache, Phase phase, const NdArray<T>& dy,
                       NdArray<T>* dx, NdArray<T>* dgamma, NdArray<T>* dbeta);

template <typename T>
NdArray<T> relu_forward(const NdArray<T>& x);
template <typename T>
void relu_backward(const NdArray<T>& y, const NdArray<T>& dy, NdArray<T>* dx);

// x: [B, Din], w: [Dout, Din], bias: [Dout] or empty.
template <typename T>
NdArray<T> linear_forward(const NdArray<T>& x, const NdArray<T>& w, const NdArray<T>* bias);
template <typename T>
void linear_backward(const NdArray<T>& x, const NdArray<T>& w, const NdArray<T>& dy,
                     NdArray<T>* dx, NdArray<T>* dw, NdArray<T>* dbias);

// frames: [F, ...], per_group: [G, ...]; slot f receives per_group[group_of(f)].
template <typename T>
NdArray<T> broadcast_add_forward(const NdArray<T>& frames, const NdArray<T>& per_group,
                                 const GroupIndex& groups);
template <typename T>
void broadcast_add_backward(const NdArray<T>& dy, const GroupIndex& groups,
                            NdArray<T>* dframes, NdArray<T>* dper_group);

// frames: [F, ...] -> [G, ...]. argmax holds, per output element, the winning
// frame slot (lowest slot on ties).
template <typename T>
NdArray<T> group_max_forward(const NdArray<T>& frames, const GroupIndex& groups,
                             std::vector<int>* argmax);
template <typename T>
void group_max_backward(const std::vector<int>& argmax, const NdArray<T>& dy,
                        NdArray<T>* dframes);

// x: [..., H, W] -> [...]: max over (H, W) plus mean over (H, W).
template <typename T>
NdArray<T> spatial_max_mean_forward(const NdArray<T>& x, std::vector<int>* argmax);
template <typename T>
void spatial_max_mean_backward(const NdArray<T>& x, const std::vector<int>& argmax,
                               const NdArray<T>& dy, NdArray<T>* dx);

// x: [B, C, H, W] split into `parts` horizontal strips -> [B, parts, C], each
// strip pooled by max + mean.
template <typename T>
NdArray<T> part_pool_forward(const NdArray<T>& x, int parts, std::vector<int>* argmax);
template <typename T>
void part_pool_backward(const Shape& x_shape, int parts, const std::vector<int>& argmax,
                        const NdArray<T>& dy, NdArray<T>* dx);

// x: [B, P, Din], w: [P, Dout, Din] -> [B, P, Dout]; one bias-free map per part.
template <typename T>
NdArray<T> part_linear_forward(const NdArray<T>& x, const NdArray<T>& w);
template <typename T>
void part_linear_backward(const NdArray<T>& x, const NdArray<T>& w, const NdArray<T>& dy,
                          NdArray<T>* dx, NdArray<T>* dw);

}  // namespace kernels
}  // namespace snpg
