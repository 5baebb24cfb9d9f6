#include "conv_direct.hpp"

#include <algorithm>
#include <cstring>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace snpg::direct {

namespace {

constexpr int kTaps = 9;
constexpr int kLanes = 16;  // floats per AVX-512 register

void tap_offsets(const Geom& g, int64_t* off) {
  for (int ky = 0; ky < 3; ++ky) {
    for (int kx = 0; kx < 3; ++kx) off[ky * 3 + kx] = ky * g.pitch() + kx;
  }
}

// out[j][0..kBlockPx) = sum_ci,k w[ci][k][j] * x[ci][p + off[k]] for one
// block of kBlockCo output channels.
template <typename T>
void block_generic(const T* x, int64_t plane, const int64_t* off, const T* w, int64_t cin,
                   T* out) {
  T acc[kBlockCo][kBlockPx] = {};
  for (int64_t ci = 0; ci < cin; ++ci) {
    const T* base = x + ci * plane;
    for (int k = 0; k < kTaps; ++k) {
      const T* s = base + off[k];
      const T* wk = w + (ci * kTaps + k) * kBlockCo;
      for (int j = 0; j < kBlockCo; ++j) {
        const T wj = wk[j];
        for (int l = 0; l < kBlockPx; ++l) acc[j][l] += wj * s[l];
      }
    }
  }
  std::memcpy(out, acc, sizeof acc);
}

template <typename T>
void block(const T* x, int64_t plane, const int64_t* off, const T* w, int64_t cin, T* out) {
  block_generic(x, plane, off, w, cin, out);
}

#if defined(__AVX512F__)
template <>
void block<float>(const float* x, int64_t plane, const int64_t* off, const float* w, int64_t cin,
                  float* out) {
  constexpr int V = kBlockPx / kLanes;
  __m512 acc[kBlockCo][V];
  for (auto& row : acc) {
    for (auto& a : row) a = _mm512_setzero_ps();
  }
  for (int64_t ci = 0; ci < cin; ++ci) {
    const float* base = x + ci * plane;
    for (int k = 0; k < kTaps; ++k) {
      const float* s = base + off[k];
      const float* wk = w + (ci * kTaps + k) * kBlockCo;
      __m512 xv[V];
      for (int v = 0; v < V; ++v) xv[v] = _mm512_loadu_ps(s + v * kLanes);
      for (int j = 0; j < kBlockCo; ++j) {
        const __m512 wv = _mm512_set1_ps(wk[j]);
        for (int v = 0; v < V; ++v) acc[j][v] = _mm512_fmadd_ps(wv, xv[v], acc[j][v]);
      }
    }
  }
  for (int j = 0; j < kBlockCo; ++j) {
    for (int v = 0; v < V; ++v) _mm512_storeu_ps(out + j * kBlockPx + v * kLanes, acc[j][v]);
  }
}
#endif

}  // namespace

template <typename T>
void pad_planes(const T* src, int64_t channels, const Geom& g, T* dst) {
  const int64_t plane = g.plane(), pitch = g.pitch();
  std::fill(dst, dst + channels * plane, T(0));
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t y = 0; y < g.h; ++y) {
      std::memcpy(dst + c * plane + (y + 1) * pitch + 1, src + (c * g.h + y) * g.w,
                  static_cast<size_t>(g.w) * sizeof(T));
    }
  }
}

template <typename T>
std::vector<T> pack_weights(const T* w, int64_t cout, int64_t cin, bool flip) {
  // Role of output/input channels in the packed (possibly adjoint) conv.
  const int64_t out_ch = flip ? cin : cout, in_ch = flip ? cout : cin;
  std::vector<T> packed(static_cast<size_t>(out_ch * in_ch * kTaps));
  for (int64_t o = 0; o < out_ch; ++o) {
    for (int64_t i = 0; i < in_ch; ++i) {
      for (int k = 0; k < kTaps; ++k) {
        const T v = flip ? w[(i * cin + o) * kTaps + (kTaps - 1 - k)] : w[(o * cin + i) * kTaps + k];
        const int64_t blk = o / kBlockCo, j = o % kBlockCo;
        packed[static_cast<size_t>(((blk * in_ch + i) * kTaps + k) * kBlockCo + j)] = v;
      }
    }
  }
  return packed;
}

template <typename T>
void conv_plane(const T* xpad, const T* wpacked, int64_t cin, int64_t cout, const Geom& g,
                T* y, bool accumulate, std::vector<T>& scratch) {
  int64_t off[kTaps];
  tap_offsets(g, off);
  const int64_t blocks = g.blocks(), pitch = g.pitch(), plane = g.plane();
  scratch.resize(static_cast<size_t>(kBlockCo * blocks * kBlockPx));
  T out[kBlockCo * kBlockPx];
  for (int64_t cb = 0; cb < cout / kBlockCo; ++cb) {
    const T* w = wpacked + cb * cin * kTaps * kBlockCo;
    for (int64_t b = 0; b < blocks; ++b) {
      block(xpad + b * kBlockPx, plane, off, w, cin, out);
      for (int j = 0; j < kBlockCo; ++j) {
        std::memcpy(scratch.data() + (j * blocks + b) * kBlockPx, out + j * kBlockPx,
                    sizeof(T) * kBlockPx);
      }
    }
    for (int j = 0; j < kBlockCo; ++j) {
      const T* rows = scratch.data() + j * blocks * kBlockPx;
      T* dst = y + (cb * kBlockCo + j) * g.h * g.w;
      for (int64_t oy = 0; oy < g.h; ++oy) {
        const T* src = rows + oy * pitch;
        T* d = dst + oy * g.w;
        if (accumulate) {
          for (int64_t ox = 0; ox < g.w; ++ox) d[ox] += src[ox];
        } else {
          std::memcpy(d, src, sizeof(T) * static_cast<size_t>(g.w));
        }
      }
    }
  }
}

#define SNPG_DIRECT_INSTANTIATE(T)                                                          \
  template void pad_planes(const T*, int64_t, const Geom&, T*);                            \
  template std::vector<T> pack_weights(const T*, int64_t, int64_t, bool);                  \
  template void conv_plane(const T*, const T*, int64_t, int64_t, const Geom&, T*, bool,    \
                           std::vector<T>&);

SNPG_DIRECT_INSTANTIATE(float)
SNPG_DIRECT_INSTANTIATE(double)

}  // namespace snpg::direct
