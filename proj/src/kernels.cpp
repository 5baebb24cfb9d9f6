#include "snpg/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "conv_direct.hpp"
#include "snpg/parallel.hpp"

namespace snpg {

GroupIndex::GroupIndex(std::vector<int> group_of, int num_groups)
    : group_of_(std::move(group_of)), num_groups_(num_groups) {
  if (num_groups_ <= 0) throw std::invalid_argument("GroupIndex: num_groups must be positive");
  offsets_.assign(static_cast<size_t>(num_groups_) + 1, 0);
  for (int g : group_of_) {
    if (g < 0 || g >= num_groups_) {
      throw std::invalid_argument("GroupIndex: group id " + std::to_string(g) + " out of range");
    }
    ++offsets_[static_cast<size_t>(g) + 1];
  }
  for (int g = 0; g < num_groups_; ++g) {
    if (offsets_[g + 1] == 0) {
      throw std::invalid_argument("GroupIndex: empty group " + std::to_string(g));
    }
    offsets_[g + 1] += offsets_[g];
  }
  members_.resize(group_of_.size());
  std::vector<int> cursor(offsets_.begin(), offsets_.end() - 1);
  for (size_t slot = 0; slot < group_of_.size(); ++slot) {
    members_[static_cast<size_t>(cursor[group_of_[slot]]++)] = static_cast<int>(slot);
  }
}

GroupIndex GroupIndex::from_sizes(std::span<const int> sizes) {
  std::vector<int> group_of;
  for (size_t g = 0; g < sizes.size(); ++g) {
    if (sizes[g] <= 0) throw std::invalid_argument("GroupIndex: empty group in sizes");
    group_of.insert(group_of.end(), static_cast<size_t>(sizes[g]), static_cast<int>(g));
  }
  return GroupIndex(std::move(group_of), static_cast<int>(sizes.size()));
}

GroupIndex GroupIndex::single(int num_slots) {
  return GroupIndex(std::vector<int>(static_cast<size_t>(num_slots), 0), 1);
}

std::span<const int> GroupIndex::members(int group) const {
  return std::span<const int>(members_).subspan(static_cast<size_t>(offsets_[group]),
                                                static_cast<size_t>(group_size(group)));
}

namespace kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

constexpr int kReduceChunks = 8;

struct ConvGeom {
  int64_t batch, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
  int64_t k() const { return cin * kh * kw; }
  int64_t in_plane() const { return cin * h * w; }
  int64_t out_plane() const { return cout * ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  bool same3x3() const { return kh == 3 && kw == 3 && stride == 1 && pad == 1; }
  bool direct_forward() const { return same3x3() && cout % direct::kBlockCo == 0; }
  bool direct_input_grad() const { return same3x3() && cin % direct::kBlockCo == 0; }
};

template <typename T>
ConvGeom conv_geom(const NdArray<T>& x, const NdArray<T>& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d expects rank-4 input and weight, got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                     shape_str(w.shape()));
  }
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: invalid stride or padding");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0,
             stride, pad};
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.h + 2 * pad - g.kh < 0 || g.w + 2 * pad - g.kw < 0 || g.ho <= 0 || g.wo <= 0) {
    throw ShapeError("conv2d: non-positive output size for input " + shape_str(x.shape()));
  }
  return g;
}

// col: [cin*kh*kw, ho*wo]
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int64_t cols = g.ho * g.wo;
  for (int64_t c = 0; c < g.cin; ++c) {
    const T* plane = x + c * g.h * g.w;
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          T* out = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          if (g.stride == 1) {
            const int64_t shift = kx - g.pad;
            const int64_t lo = std::max<int64_t>(0, -shift);
            const int64_t hi = std::min<int64_t>(g.wo, g.w - shift);
            for (int64_t ox = 0; ox < lo; ++ox) out[ox] = T(0);
            for (int64_t ox = lo; ox < hi; ++ox) out[ox] = src[ox + shift];
            for (int64_t ox = std::max(lo, hi); ox < g.wo; ++ox) out[ox] = T(0);
          } else {
            for (int64_t ox = 0; ox < g.wo; ++ox) {
              const int64_t ix = ox * g.stride - g.pad + kx;
              out[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const int64_t cols = g.ho * g.wo;
  for (int64_t c = 0; c < g.cin; ++c) {
    T* plane = dx + c * g.h * g.w;
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* in = row + oy * g.wo;
          T* dst = plane + iy * g.w;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void require_grad_shape(const NdArray<T>* grad, const Shape& shape, const char* what) {
  if (grad && grad->shape() != shape) {
    throw ShapeError(std::string(what) + ": gradient buffer has shape " +
                     shape_str(grad->shape()) + ", expected " + shape_str(shape));
  }
}

// 3x3 stride 1 backward on padded planes. The input gradient is the
// convolution of dy with the flipped, transposed kernel; when cin is not a
// multiple of the block size it falls back to a per-tap scatter.
template <typename T>
void direct_backward(const NdArray<T>& x, const NdArray<T>& w, const NdArray<T>& dy,
                     const ConvGeom& g, NdArray<T>* dx, NdArray<T>* dw) {
  const direct::Geom dg{g.h, g.w};
  const bool fast_dx = dx && g.direct_input_grad();
  const std::vector<T> flipped =
      fast_dx ? direct::pack_weights(w.data(), g.cout, g.cin, true) : std::vector<T>{};
  ConstMatMap<T> wm(w.data(), g.cout, g.k());
  const int64_t cols = g.ho * g.wo;
  std::vector<std::vector<T>> partial(dw ? kReduceChunks : 0);
  parallel_chunks(g.batch, kReduceChunks, [&](int chunk, int64_t begin, int64_t end) {
    std::vector<T> xpad(dw ? static_cast<size_t>(g.cin * dg.plane()) : 0);
    std::vector<T> dypad(static_cast<size_t>(g.cout * dg.plane())), scratch;
    std::vector<T> dcol(dx && !fast_dx ? static_cast<size_t>(g.k() * cols) : 0);
    if (dw) partial[chunk].assign(static_cast<size_t>(g.cout * g.k()), T(0));
    for (int64_t b = begin; b < end; ++b) {
      const T* dyb = dy.data() + b * g.out_plane();
      if (dw || fast_dx) direct::pad_planes(dyb, g.cout, dg, dypad.data());
      if (dw) {
        direct::pad_planes(x.data() + b * g.in_plane(), g.cin, dg, xpad.data());
        // Per tap k, dw[:, :, k] += dy * shift_k(x)^T with rows strided by the plane.
        const int64_t n = dg.positions(), plane = dg.plane(), shift = dg.pitch() + 1;
        ConstStridedMap<T> dyp(dypad.data() + shift, g.cout, n, Eigen::OuterStride<>(plane));
        for (int64_t k = 0; k < 9; ++k) {
          const int64_t off = (k / 3) * dg.pitch() + k % 3;
          ConstStridedMap<T> xs(xpad.data() + off, g.cin, n, Eigen::OuterStride<>(plane));
          Eigen::Map<RowMat<T>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>> dwk(
              partial[chunk].data() + k, g.cout, g.cin,
              Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(g.cin * 9, 9));
          dwk.noalias() += dyp * xs.transpose();
        }
      }
      if (fast_dx) {
        direct::conv_plane(dypad.data(), flipped.data(), g.cout, g.cin, dg,
                           dx->data() + b * g.in_plane(), true, scratch);
      } else if (dx) {
        MatMap<T>(dcol.data(), g.k(), cols).noalias() =
            wm.transpose() * ConstMatMap<T>(dyb, g.cout, cols);
        col2im_add(dcol.data(), g, dx->data() + b * g.in_plane());
      }
    }
  });
  if (dw) {
    T* d = dw->data();
    for (const auto& p : partial) {
      for (size_t i = 0; i < p.size(); ++i) d[i] += p[i];
    }
  }
}

}  // namespace

template <typename T>
NdArray<T> conv2d_forward(const NdArray<T>& x, const NdArray<T>& w, int stride, int pad) {
  const ConvGeom g = conv_geom(x, w, stride, pad);
  NdArray<T> y({g.batch, g.cout, g.ho, g.wo}, uninitialized);
  if (g.direct_forward()) {
    const direct::Geom dg{g.h, g.w};
    const std::vector<T> packed = direct::pack_weights(w.data(), g.cout, g.cin, false);
    parallel_for(g.batch, [&](int64_t begin, int64_t end) {
      std::vector<T> xpad(static_cast<size_t>(g.cin * dg.plane())), scratch;
      for (int64_t b = begin; b < end; ++b) {
        direct::pad_planes(x.data() + b * g.in_plane(), g.cin, dg, xpad.data());
        direct::conv_plane(xpad.data(), packed.data(), g.cin, g.cout, dg,
                           y.data() + b * g.out_plane(), false, scratch);
      }
    });
    return y;
  }
  ConstMatMap<T> wm(w.data(), g.cout, g.k());
  parallel_for(g.batch, [&](int64_t begin, int64_t end) {
    std::vector<T> col(g.pointwise() ? 0 : static_cast<size_t>(g.k() * g.ho * g.wo));
    for (int64_t b = begin; b < end; ++b) {
      const T* xb = x.data() + b * g.in_plane();
      if (!g.pointwise()) {
        im2col(xb, g, col.data());
        xb = col.data();
      }
      MatMap<T> yb(y.data() + b * g.out_plane(), g.cout, g.ho * g.wo);
      yb.noalias() = wm * ConstMatMap<T>(xb, g.k(), g.ho * g.wo);
    }
  });
  return y;
}

template <typename T>
void conv2d_backward(const NdArray<T>& x, const NdArray<T>& w, const NdArray<T>& dy,
                     int stride, int pad, NdArray<T>* dx, NdArray<T>* dw) {
  const ConvGeom g = conv_geom(x, w, stride, pad);
  if (dy.shape() != Shape{g.batch, g.cout, g.ho, g.wo}) {
    throw ShapeError("conv2d backward: gradient shape " + shape_str(dy.shape()));
  }
  require_grad_shape(dx, x.shape(), "conv2d dx");
  require_grad_shape(dw, w.shape(), "conv2d dw");
  if (!dx && !dw) return;
  if (g.direct_forward()) {
    direct_backward(x, w, dy, g, dx, dw);
    return;
  }
  ConstMatMap<T> wm(w.data(), g.cout, g.k());
  const int64_t cols = g.ho * g.wo;
  std::vector<RowMat<T>> partial(dw ? kReduceChunks : 0);
  parallel_chunks(g.batch, kReduceChunks, [&](int chunk, int64_t begin, int64_t end) {
    std::vector<T> col(g.pointwise() ? 0 : static_cast<size_t>(g.k() * cols));
    std::vector<T> dcol(g.pointwise() || !dx ? 0 : static_cast<size_t>(g.k() * cols));
    if (dw) partial[chunk] = RowMat<T>::Zero(g.cout, g.k());
    for (int64_t b = begin; b < end; ++b) {
      ConstMatMap<T> dyb(dy.data() + b * g.out_plane(), g.cout, cols);
      if (dw) {
        const T* xb = x.data() + b * g.in_plane();
        if (!g.pointwise()) {
          im2col(xb, g, col.data());
          xb = col.data();
        }
        partial[chunk].noalias() += dyb * ConstMatMap<T>(xb, g.k(), cols).transpose();
      }
      if (dx) {
        T* dxb = dx->data() + b * g.in_plane();
        if (g.pointwise()) {
          MatMap<T>(dxb, g.k(), cols).noalias() += wm.transpose() * dyb;
        } else {
          MatMap<T>(dcol.data(), g.k(), cols).noalias() = wm.transpose() * dyb;
          col2im_add(dcol.data(), g, dxb);
        }
      }
    }
  });
  if (dw) {
    MatMap<T> dwm(dw->data(), g.cout, g.k());
    for (const auto& p : partial) {
      if (p.size()) dwm += p;
    }
  }
}

// Reductions over one contiguous row with a fixed number of independent
// lanes; the summation order depends only on n, so results are reproducible.
constexpr int kLanes = 16;

template <typename T>
double row_sum(const T* p, int64_t n) {
  T acc[kLanes] = {};
  int64_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (int l = 0; l < kLanes; ++l) acc[l] += p[j + l];
  }
  double s = 0;
  for (int l = 0; l < kLanes; ++l) s += acc[l];
  for (; j < n; ++j) s += p[j];
  return s;
}

template <typename T>
double row_sq_dev(const T* p, int64_t n, T mean) {
  T acc[kLanes] = {};
  int64_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (int l = 0; l < kLanes; ++l) {
      const T d = p[j + l] - mean;
      acc[l] += d * d;
    }
  }
  double s = 0;
  for (int l = 0; l < kLanes; ++l) s += acc[l];
  for (; j < n; ++j) {
    const double d = static_cast<double>(p[j]) - static_cast<double>(mean);
    s += d * d;
  }
  return s;
}

// Returns sum(g) and sum(g * (p - mean)).
template <typename T>
std::pair<double, double> row_grad_sums(const T* g, const T* p, int64_t n, T mean) {
  T a[kLanes] = {}, b[kLanes] = {};
  int64_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (int l = 0; l < kLanes; ++l) {
      a[l] += g[j + l];
      b[l] += g[j + l] * (p[j + l] - mean);
    }
  }
  double sa = 0, sb = 0;
  for (int l = 0; l < kLanes; ++l) {
    sa += a[l];
    sb += b[l];
  }
  for (; j < n; ++j) {
    sa += g[j];
    sb += static_cast<double>(g[j]) * (static_cast<double>(p[j]) - static_cast<double>(mean));
  }
  return {sa, sb};
}

template <typename T>
NdArray<T> featnorm_forward(const NdArray<T>& x, const NdArray<T>& gamma,
                            const NdArray<T>& beta, Phase phase, FeatNormState<T>& state,
                            FeatNormCache& cache) {
  if (x.rank() < 2) throw ShapeError("featnorm expects at least rank 2, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), inner = x.inner_size(1);
  if (gamma.size() != c || beta.size() != c || state.running_mean.size() != c ||
      state.running_var.size() != c) {
    throw ShapeError("featnorm: parameter size does not match channel count " +
                     std::to_string(c));
  }
  if (phase == Phase::eval && !state.populated) {
    throw std::logic_error("featnorm: eval phase requested before any train step");
  }
  cache.mean.assign(static_cast<size_t>(c), 0.0);
  cache.invstd.assign(static_cast<size_t>(c), 0.0);
  NdArray<T> y(x.shape(), uninitialized);
  const double count = static_cast<double>(n * inner);
  parallel_for(c, [&](int64_t c0, int64_t c1) {
    for (int64_t ch = c0; ch < c1; ++ch) {
      double mean, var;
      if (phase == Phase::train) {
        double sum = 0;
        for (int64_t i = 0; i < n; ++i) sum += row_sum(x.data() + (i * c + ch) * inner, inner);
        mean = sum / count;
        double sq = 0;
        for (int64_t i = 0; i < n; ++i) {
          sq += row_sq_dev(x.data() + (i * c + ch) * inner, inner, static_cast<T>(mean));
        }
        var = sq / count;
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        state.running_mean[ch] = static_cast<T>(kFeatNormMomentum * state.running_mean[ch] +
                                                (1 - kFeatNormMomentum) * mean);
        state.running_var[ch] = static_cast<T>(kFeatNormMomentum * state.running_var[ch] +
                                               (1 - kFeatNormMomentum) * unbiased);
      } else {
        mean = state.running_mean[ch];
        var = state.running_var[ch];
      }
      const double invstd = 1.0 / std::sqrt(var + kFeatNormEps);
      cache.mean[static_cast<size_t>(ch)] = mean;
      cache.invstd[static_cast<size_t>(ch)] = invstd;
      const double scale_d = gamma[ch] * invstd;
      const T scale = static_cast<T>(scale_d);
      const T shift = static_cast<T>(beta[ch] - mean * scale_d);
      for (int64_t i = 0; i < n; ++i) {
        const T* p = x.data() + (i * c + ch) * inner;
        T* q = y.data() + (i * c + ch) * inner;
        for (int64_t j = 0; j < inner; ++j) q[j] = p[j] * scale + shift;
      }
    }
  });
  if (phase == Phase::train) state.populated = true;
  return y;
}

template <typename T>
void featnorm_backward(const NdArray<T>& x, const NdArray<T>& gamma,
                       const FeatNormCache& cache, Phase phase, const NdArray<T>& dy,
                       NdArray<T>* dx, NdArray<T>* dgamma, NdArray<T>* dbeta) {
  const int64_t n = x.dim(0), c = x.dim(1), inner = x.inner_size(1);
  if (dy.shape() != x.shape()) throw ShapeError("featnorm backward: gradient shape mismatch");
  require_grad_shape(dx, x.shape(), "featnorm dx");
  require_grad_shape(dgamma, gamma.shape(), "featnorm dgamma");
  require_grad_shape(dbeta, gamma.shape(), "featnorm dbeta");
  const double count = static_cast<double>(n * inner);
  parallel_for(c, [&](int64_t c0, int64_t c1) {
    for (int64_t ch = c0; ch < c1; ++ch) {
      const double mean = cache.mean[static_cast<size_t>(ch)];
      const double invstd = cache.invstd[static_cast<size_t>(ch)];
      double sum_dy = 0, sum_dy_dev = 0;
      for (int64_t i = 0; i < n; ++i) {
        const auto [a, b] = row_grad_sums(dy.data() + (i * c + ch) * inner,
                                          x.data() + (i * c + ch) * inner, inner,
                                          static_cast<T>(mean));
        sum_dy += a;
        sum_dy_dev += b;
      }
      const double sum_dy_xhat = sum_dy_dev * invstd;
      if (dgamma) (*dgamma)[ch] += static_cast<T>(sum_dy_xhat);
      if (dbeta) (*dbeta)[ch] += static_cast<T>(sum_dy);
      if (!dx) continue;
      const double scale = gamma[ch] * invstd;
      // Train phase: dx = scale * (g - sum_dy/count - xhat * sum_dy_xhat/count),
      // expanded to a * g + b * x + k.
      T a = static_cast<T>(scale), b = T(0), k = T(0);
      if (phase == Phase::train) {
        const double coef = invstd * sum_dy_xhat / count;
        b = static_cast<T>(-scale * coef);
        k = static_cast<T>(scale * (coef * mean - sum_dy / count));
      }
      for (int64_t i = 0; i < n; ++i) {
        const T* p = x.data() + (i * c + ch) * inner;
        const T* g = dy.data() + (i * c + ch) * inner;
        T* q = dx->data() + (i * c + ch) * inner;
        for (int64_t j = 0; j < inner; ++j) q[j] += a * g[j] + b * p[j] + k;
      }
    }
  });
}

template <typename T>
NdArray<T> relu_forward(const NdArray<T>& x) {
  NdArray<T> y(x.shape(), uninitialized);
  const T* p = x.data();
  T* q = y.data();
  for (int64_t i = 0; i < x.size(); ++i) q[i] = p[i] > T(0) ? p[i] : T(0);
  return y;
}

template <typename T>
void relu_backward(const NdArray<T>& y, const NdArray<T>& dy, NdArray<T>* dx) {
  if (!dx) return;
  require_grad_shape(dx, y.shape(), "relu dx");
  const T* p = y.data();
  const T* g = dy.data();
  T* q = dx->data();
  for (int64_t i = 0; i < y.size(); ++i) {
    if (p[i] > T(0)) q[i] += g[i];
  }
}

template <typename T>
NdArray<T> linear_forward(const NdArray<T>& x, const NdArray<T>& w, const NdArray<T>* bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  }
  if (bias && bias->size() != w.dim(0)) throw ShapeError("linear: bias size mismatch");
  const int64_t b = x.dim(0), din = x.dim(1), dout = w.dim(0);
  NdArray<T> y({b, dout});
  MatMap<T> ym(y.data(), b, dout);
  ym.noalias() = ConstMatMap<T>(x.data(), b, din) * ConstMatMap<T>(w.data(), dout, din).transpose();
  if (bias) {
    for (int64_t i = 0; i < b; ++i) {
      for (int64_t o = 0; o < dout; ++o) y[i * dout + o] += (*bias)[o];
    }
  }
  return y;
}

template <typename T>
void linear_backward(const NdArray<T>& x, const NdArray<T>& w, const NdArray<T>& dy,
                     NdArray<T>* dx, NdArray<T>* dw, NdArray<T>* dbias) {
  const int64_t b = x.dim(0), din = x.dim(1), dout = w.dim(0);
  require_grad_shape(dx, x.shape(), "linear dx");
  require_grad_shape(dw, w.shape(), "linear dw");
  ConstMatMap<T> g(dy.data(), b, dout);
  if (dx) MatMap<T>(dx->data(), b, din).noalias() += g * ConstMatMap<T>(w.data(), dout, din);
  if (dw) MatMap<T>(dw->data(), dout, din).noalias() += g.transpose() * ConstMatMap<T>(x.data(), b, din);
  if (dbias) {
    for (int64_t i = 0; i < b; ++i) {
      for (int64_t o = 0; o < dout; ++o) (*dbias)[o] += dy[i * dout + o];
    }
  }
}

namespace {

template <typename T>
int64_t check_grouped(const NdArray<T>& frames, const GroupIndex& groups, const char* what) {
  if (frames.rank() < 1 || frames.dim(0) != groups.num_slots()) {
    throw ShapeError(std::string(what) + ": frame axis " + shape_str(frames.shape()) +
                     " does not match group index of " + std::to_string(groups.num_slots()) +
                     " slots");
  }
  return frames.inner_size(0);
}

}  // namespace

template <typename T>
NdArray<T> broadcast_add_forward(const NdArray<T>& frames, const NdArray<T>& per_group,
                                 const GroupIndex& groups) {
  const int64_t inner = check_grouped(frames, groups, "broadcast_add");
  Shape expect = frames.shape();
  expect[0] = groups.num_groups();
  if (per_group.shape() != expect) {
    throw ShapeError("broadcast_add: per-group shape " + shape_str(per_group.shape()) +
                     ", expected " + shape_str(expect));
  }
  NdArray<T> y(frames.shape(), uninitialized);
  parallel_for(groups.num_slots(), [&](int64_t f0, int64_t f1) {
    for (int64_t f = f0; f < f1; ++f) {
      const T* a = frames.data() + f * inner;
      const T* b = per_group.data() + groups.group_of(f) * inner;
      T* q = y.data() + f * inner;
      for (int64_t j = 0; j < inner; ++j) q[j] = a[j] + b[j];
    }
  });
  return y;
}

template <typename T>
void broadcast_add_backward(const NdArray<T>& dy, const GroupIndex& groups,
                            NdArray<T>* dframes, NdArray<T>* dper_group) {
  const int64_t inner = check_grouped(dy, groups, "broadcast_add backward");
  if (dframes) {
    require_grad_shape(dframes, dy.shape(), "broadcast_add dframes");
    for (int64_t i = 0; i < dy.size(); ++i) (*dframes)[i] += dy[i];
  }
  if (dper_group) {
    for (int g = 0; g < groups.num_groups(); ++g) {
      T* q = dper_group->data() + g * inner;
      for (int f : groups.members(g)) {
        const T* p = dy.data() + f * inner;
        for (int64_t j = 0; j < inner; ++j) q[j] += p[j];
      }
    }
  }
}

template <typename T>
NdArray<T> group_max_forward(const NdArray<T>& frames, const GroupIndex& groups,
                             std::vector<int>* argmax) {
  const int64_t inner = check_grouped(frames, groups, "group_max");
  Shape out_shape = frames.shape();
  out_shape[0] = groups.num_groups();
  NdArray<T> y(out_shape, uninitialized);
  if (argmax) argmax->assign(static_cast<size_t>(y.size()), 0);
  parallel_for(groups.num_groups(), [&](int64_t g0, int64_t g1) {
    for (int64_t g = g0; g < g1; ++g) {
      auto members = groups.members(static_cast<int>(g));
      T* q = y.data() + g * inner;
      int* arg = argmax ? argmax->data() + g * inner : nullptr;
      const T* first = frames.data() + members[0] * inner;
      std::copy(first, first + inner, q);
      if (arg) std::fill(arg, arg + inner, members[0]);
      for (size_t m = 1; m < members.size(); ++m) {
        const T* p = frames.data() + members[m] * inner;
        for (int64_t j = 0; j < inner; ++j) {
          if (p[j] > q[j]) {
            q[j] = p[j];
            if (arg) arg[j] = members[m];
          }
        }
      }
    }
  });
  return y;
}

template <typename T>
void group_max_backward(const std::vector<int>& argmax, const NdArray<T>& dy,
                        NdArray<T>* dframes) {
  if (!dframes) return;
  if (static_cast<int64_t>(argmax.size()) != dy.size()) {
    throw ShapeError("group_max backward: argmax record does not match gradient");
  }
  const int64_t inner = dy.inner_size(0);
  for (int64_t i = 0; i < dy.size(); ++i) {
    const int64_t j = i % inner;
    (*dframes)[argmax[static_cast<size_t>(i)] * inner + j] += dy[i];
  }
}

template <typename T>
NdArray<T> spatial_max_mean_forward(const NdArray<T>& x, std::vector<int>* argmax) {
  if (x.rank() < 2) throw ShapeError("spatial_max_mean expects rank >= 2");
  const int64_t hw = x.dim(-2) * x.dim(-1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  if (out_shape.empty()) out_shape = {1};
  NdArray<T> y(out_shape);
  if (argmax) argmax->assign(static_cast<size_t>(y.size()), 0);
  for (int64_t i = 0; i < y.size(); ++i) {
    const T* p = x.data() + i * hw;
    int best = 0;
    double sum = 0;
    for (int64_t j = 0; j < hw; ++j) {
      if (p[j] > p[best]) best = static_cast<int>(j);
      sum += p[j];
    }
    y[i] = static_cast<T>(p[best] + sum / static_cast<double>(hw));
    if (argmax) (*argmax)[static_cast<size_t>(i)] = best;
  }
  return y;
}

template <typename T>
void spatial_max_mean_backward(const NdArray<T>& x, const std::vector<int>& argmax,
                               const NdArray<T>& dy, NdArray<T>* dx) {
  if (!dx) return;
  require_grad_shape(dx, x.shape(), "spatial_max_mean dx");
  const int64_t hw = x.dim(-2) * x.dim(-1);
  for (int64_t i = 0; i < dy.size(); ++i) {
    T* q = dx->data() + i * hw;
    const T g = dy[i];
    const T share = static_cast<T>(g / static_cast<double>(hw));
    for (int64_t j = 0; j < hw; ++j) q[j] += share;
    q[argmax[static_cast<size_t>(i)]] += g;
  }
}

template <typename T>
NdArray<T> part_pool_forward(const NdArray<T>& x, int parts, std::vector<int>* argmax) {
  if (x.rank() != 4) throw ShapeError("part_pool expects [B, C, H, W], got " + shape_str(x.shape()));
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (parts < 1 || h % parts != 0) {
    throw ShapeError("part_pool: height " + std::to_string(h) + " not divisible into " +
                     std::to_string(parts) + " parts");
  }
  const int64_t strip = (h / parts) * w;
  NdArray<T> y({b, parts, c});
  if (argmax) argmax->assign(static_cast<size_t>(y.size()), 0);
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t p = 0; p < parts; ++p) {
      for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t base = (i * c + ch) * h * w + p * strip;
        const T* src = x.data() + base;
        int64_t best = 0;
        double sum = 0;
        for (int64_t j = 0; j < strip; ++j) {
          if (src[j] > src[best]) best = j;
          sum += src[j];
        }
        const int64_t o = (i * parts + p) * c + ch;
        y[o] = static_cast<T>(src[best] + sum / static_cast<double>(strip));
        if (argmax) (*argmax)[static_cast<size_t>(o)] = static_cast<int>(base + best);
      }
    }
  }
  return y;
}

template <typename T>
void part_pool_backward(const Shape& x_shape, int parts, const std::vector<int>& argmax,
                        const NdArray<T>& dy, NdArray<T>* dx) {
  if (!dx) return;
  if (dx->shape() != x_shape) throw ShapeError("part_pool dx shape mismatch");
  const int64_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
  const int64_t strip = (h / parts) * w;
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t p = 0; p < parts; ++p) {
      for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t o = (i * parts + p) * c + ch;
        const T g = dy[o];
        T* q = dx->data() + (i * c + ch) * h * w + p * strip;
        const T share = static_cast<T>(g / static_cast<double>(strip));
        for (int64_t j = 0; j < strip; ++j) q[j] += share;
        (*dx)[argmax[static_cast<size_t>(o)]] += g;
      }
    }
  }
}

template <typename T>
NdArray<T> part_linear_forward(const NdArray<T>& x, const NdArray<T>& w) {
  if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(0) || x.dim(2) != w.dim(2)) {
    throw ShapeError("part_linear: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  }
  const int64_t b = x.dim(0), parts = x.dim(1), din = x.dim(2), dout = w.dim(1);
  NdArray<T> y({b, parts, dout});
  for (int64_t p = 0; p < parts; ++p) {
    ConstStridedMap<T> xp(x.data() + p * din, b, din, Eigen::OuterStride<>(parts * din));
    StridedMap<T> yp(y.data() + p * dout, b, dout, Eigen::OuterStride<>(parts * dout));
    yp.noalias() = xp * ConstMatMap<T>(w.data() + p * dout * din, dout, din).transpose();
  }
  return y;
}

template <typename T>
void part_linear_backward(const NdArray<T>& x, const NdArray<T>& w, const NdArray<T>& dy,
                          NdArray<T>* dx, NdArray<T>* dw) {
  const int64_t b = x.dim(0), parts = x.dim(1), din = x.dim(2), dout = w.dim(1);
  require_grad_shape(dx, x.shape(), "part_linear dx");
  require_grad_shape(dw, w.shape(), "part_linear dw");
  for (int64_t p = 0; p < parts; ++p) {
    ConstStridedMap<T> gp(dy.data() + p * dout, b, dout, Eigen::OuterStride<>(parts * dout));
    ConstMatMap<T> wp(w.data() + p * dout * din, dout, din);
    if (dx) {
      StridedMap<T> dxp(dx->data() + p * din, b, din, Eigen::OuterStride<>(parts * din));
      dxp.noalias() += gp * wp;
    }
    if (dw) {
      ConstStridedMap<T> xp(x.data() + p * din, b, din, Eigen::OuterStride<>(parts * din));
      MatMap<T>(dw->data() + p * dout * din, dout, din).noalias() += gp.transpose() * xp;
    }
  }
}

#define SNPG_INSTANTIATE_KERNELS(T)                                                           \
  template NdArray<T> conv2d_forward(const NdArray<T>&, const NdArray<T>&, int, int);        \
  template void conv2d_backward(const NdArray<T>&, const NdArray<T>&, const NdArray<T>&, int, \
                                int, NdArray<T>*, NdArray<T>*);                               \
  template NdArray<T> featnorm_forward(const NdArray<T>&, const NdArray<T>&,                 \
                                       const NdArray<T>&, Phase, FeatNormState<T>&,           \
                                       FeatNormCache&);                                       \
  template void featnorm_backward(const NdArray<T>&, const NdArray<T>&, const FeatNormCache&, \
                                  Phase, const NdArray<T>&, NdArray<T>*, NdArray<T>*,         \
                                  NdArray<T>*);                                               \
  template NdArray<T> relu_forward(const NdArray<T>&);                                        \
  template void relu_backward(const NdArray<T>&, const NdArray<T>&, NdArray<T>*);            \
  template NdArray<T> linear_forward(const NdArray<T>&, const NdArray<T>&, const NdArray<T>*); \
  template void linear_backward(const NdArray<T>&, const NdArray<T>&, const NdArray<T>&,     \
                                NdArray<T>*, NdArray<T>*, NdArray<T>*);                       \
  template NdArray<T> broadcast_add_forward(const NdArray<T>&, const NdArray<T>&,            \
                                            const GroupIndex&);                               \
  template void broadcast_add_backward(const NdArray<T>&, const GroupIndex&, NdArray<T>*,    \
                                       NdArray<T>*);                                          \
  template NdArray<T> group_max_forward(const NdArray<T>&, const GroupIndex&,                \
                                        std::vector<int>*);                                   \
  template void group_max_backward(const std::vector<int>&, const NdArray<T>&, NdArray<T>*); \
  template NdArray<T> spatial_max_mean_forward(const NdArray<T>&, std::vector<int>*);        \
  template void spatial_max_mean_backward(const NdArray<T>&, const std::vector<int>&,        \
                                          const NdArray<T>&, NdArray<T>*);                    \
  template NdArray<T> part_pool_forward(const NdArray<T>&, int, std::vector<int>*);          \
  template void part_pool_backward(const Shape&, int, const std::vector<int>&,               \
                                   const NdArray<T>&, NdArray<T>*);                           \
  template NdArray<T> part_linear_forward(const NdArray<T>&, const NdArray<T>&);             \
  template void part_linear_backward(const NdArray<T>&, const NdArray<T>&, const NdArray<T>&, \
                                     NdArray<T>*, NdArray<T>*);

SNPG_INSTANTIATE_KERNELS(float)
SNPG_INSTANTIATE_KERNELS(double)

}  // namespace kernels
}  // namespace snpg
