#pragma once

// Direct 3x3 / stride 1 / pad 1 convolution over zero-padded planes.
//
// Each input plane is copied into a (h + 2) x pitch buffer, pitch = w + 2,
// with the image at offset (1, 1). Outputs are computed at "positions"
// p = oy * pitch + ox for every ox < pitch, so all nine taps become constant
// offsets ky * pitch + kx; the two columns with ox >= w are dropped.

#include <cstdint>
#include <vector>

namespace snpg::direct {

constexpr int kBlockCo = 8;    // output channels per register block
constexpr int kBlockPx = 64;   // positions per register block

struct Geom {
  int64_t h = 0, w = 0;
  int64_t pitch() const { return w + 2; }
  int64_t positions() const { return h * pitch(); }
  int64_t blocks() const { return (positions() + kBlockPx - 1) / kBlockPx; }
  // Padded plane plus slack so the last position block reads in bounds.
  int64_t plane() const { return (h + 2) * pitch() + kBlockPx + 16; }
};

// dst: channels x plane, fully rewritten (borders and slack zeroed).
template <typename T>
void pad_planes(const T* src, int64_t channels, const Geom& g, T* dst);

// Packs w[cout][cin][3][3] (flip = false) into blocks of kBlockCo output
// channels: [cout / 8][cin][9][8]. With flip = true it packs the weights of
// the adjoint convolution, w'[ci][co][k] = w[co][ci][8 - k], so that cin
// takes the role of the output channels.
template <typename T>
std::vector<T> pack_weights(const T* w, int64_t cout, int64_t cin, bool flip);

// y[co][oy][ox] (op) sum_ci,k wpacked * xpad; `accumulate` adds into y.
// Requires cout % kBlockCo == 0. `scratch` is resized as needed.
template <typename T>
void conv_plane(const T* xpad, const T* wpacked, int64_t cin, int64_t cout, const Geom& g,
                T* y, bool accumulate, std::vector<T>& scratch);

}  // namespace snpg::direct
