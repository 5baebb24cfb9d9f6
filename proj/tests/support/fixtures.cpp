#include "fixtures.hpp"

#include <algorithm>

namespace snpg::testing {

std::vector<int> random_sizes(int total, int max_groups, Rng& rng) {
  const int groups = uniform_int(rng, 1, std::min(total, max_groups));
  std::vector<int> sizes(static_cast<size_t>(groups), 1);
  for (int i = groups; i < total; ++i) ++sizes[static_cast<size_t>(uniform_int(rng, 0, groups - 1))];
  return sizes;
}

template <typename T>
void randomize_moments(ParamStore<T>& store, Rng& rng) {
  for (auto& [name, state] : store.norm_states()) {
    for (int64_t c = 0; c < state->running_mean.size(); ++c) {
      state->running_mean[c] = static_cast<T>(uniform_real(rng, -0.5, 0.5));
      state->running_var[c] = static_cast<T>(uniform_real(rng, 0.5, 2.0));
    }
    state->populated = true;
  }
}

template <typename T>
NdArray<T> random_frames(int64_t count, int64_t height, int64_t width, Rng& rng) {
  NdArray<T> x({count, 1, height, width});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(uniform_real(rng, 0, 1));
  return x;
}

BackboneConfig tiny_backbone() {
  BackboneConfig cfg;
  cfg.blocks = {1, 1};
  cfg.channels = {4, 8};
  cfg.strides = {1, 2};
  return cfg;
}

template void randomize_moments(ParamStore<float>&, Rng&);
template void randomize_moments(ParamStore<double>&, Rng&);
template NdArray<float> random_frames(int64_t, int64_t, int64_t, Rng&);
template NdArray<double> random_frames(int64_t, int64_t, int64_t, Rng&);

}  // namespace snpg::testing
