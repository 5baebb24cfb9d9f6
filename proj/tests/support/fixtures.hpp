#pragma once

#include <vector>

#include "snpg/model.hpp"
#include "snpg/rng.hpp"

namespace snpg::testing {

// Random positive sizes summing to total.
std::vector<int> random_sizes(int total, int max_groups, Rng& rng);

// Populated running moments with random values (mean in [-0.5, 0.5],
// variance in [0.5, 2]) so eval-phase passes are non-trivial.
template <typename T>
void randomize_moments(ParamStore<T>& store, Rng& rng);

template <typename T>
NdArray<T> random_frames(int64_t count, int64_t height, int64_t width, Rng& rng);

// Small backbone (channels {4, 8}, strides {1, 2}) for double-precision
// checks on 32 x 22 frames.
BackboneConfig tiny_backbone();

}  // namespace snpg::testing
