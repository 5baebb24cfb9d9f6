#pragma once

// Differentiable operations recorded on a Tape. Each forwards to the kernels
// in kernels.hpp and registers the matching backward transformation.

#include <memory>
#include <optional>

#include "snpg/kernels.hpp"
#include "snpg/tape.hpp"

namespace snpg::ad {

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, int stride, int pad) {
  NdArray<T> y = kernels::conv2d_forward(tape.value(x), tape.value(w), stride, pad);
  return tape.record(std::move(y), {x, w}, [x, w, stride, pad](Tape<T>& t, const NdArray<T>& g) {
    kernels::conv2d_backward(t.value(x), t.value(w), g, stride, pad, t.grad_buffer(x),
                             t.grad_buffer(w));
  });
}

template <typename T>
Var featnorm(Tape<T>& tape, Var x, Var gamma, Var beta, Phase phase, FeatNormState<T>& state) {
  auto cache = std::make_shared<FeatNormCache>();
  NdArray<T> y = kernels::featnorm_forward(tape.value(x), tape.value(gamma), tape.value(beta),
                                           phase, state, *cache);
  return tape.record(std::move(y), {x, gamma, beta},
                     [x, gamma, beta, phase, cache](Tape<T>& t, const NdArray<T>& g) {
                       kernels::featnorm_backward(t.value(x), t.value(gamma), *cache, phase, g,
                                                  t.grad_buffer(x), t.grad_buffer(gamma),
                                                  t.grad_buffer(beta));
                     });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  NdArray<T> y = kernels::relu_forward(tape.value(x));
  Var out{static_cast<int>(tape.size())};
  return tape.record(std::move(y), {x}, [x, out](Tape<T>& t, const NdArray<T>& g) {
    kernels::relu_backward(t.value(out), g, t.grad_buffer(x));
  });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, std::optional<Var> bias = std::nullopt) {
  NdArray<T> y = kernels::linear_forward(tape.value(x), tape.value(w),
                                         bias ? &tape.value(*bias) : nullptr);
  if (bias) {
    Var b = *bias;
    return tape.record(std::move(y), {x, w, b}, [x, w, b](Tape<T>& t, const NdArray<T>& g) {
      kernels::linear_backward(t.value(x), t.value(w), g, t.grad_buffer(x), t.grad_buffer(w),
                               t.grad_buffer(b));
    });
  }
  return tape.record(std::move(y), {x, w}, [x, w](Tape<T>& t, const NdArray<T>& g) {
    kernels::linear_backward(t.value(x), t.value(w), g, t.grad_buffer(x), t.grad_buffer(w),
                             static_cast<NdArray<T>*>(nullptr));
  });
}

template <typename T>
Var add(Tape<T>& tape, Var x, Var y) {
  const NdArray<T>& a = tape.value(x);
  const NdArray<T>& b = tape.value(y);
  if (!same_shape(a, b)) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  NdArray<T> out(a.shape(), uninitialized);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return tape.record(std::move(out), {x, y}, [x, y](Tape<T>& t, const NdArray<T>& g) {
    for (Var v : {x, y}) {
      if (NdArray<T>* d = t.grad_buffer(v)) {
        for (int64_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
      }
    }
  });
}

// Elementwise product.
template <typename T>
Var mul(Tape<T>& tape, Var x, Var y) {
  const NdArray<T>& a = tape.value(x);
  const NdArray<T>& b = tape.value(y);
  if (!same_shape(a, b)) throw ShapeError("mul: shape mismatch");
  NdArray<T> out(a.shape(), uninitialized);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return tape.record(std::move(out), {x, y}, [x, y](Tape<T>& t, const NdArray<T>& g) {
    const NdArray<T>& va = t.value(x);
    const NdArray<T>& vb = t.value(y);
    if (NdArray<T>* d = t.grad_buffer(x)) {
      for (int64_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * vb[i];
    }
    if (NdArray<T>* d = t.grad_buffer(y)) {
      for (int64_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * va[i];
    }
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const NdArray<T>& a = tape.value(x);
  double s = 0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i];
  return tape.record(NdArray<T>({1}, static_cast<T>(s)), {x},
                     [x](Tape<T>& t, const NdArray<T>& g) {
                       if (NdArray<T>* d = t.grad_buffer(x)) {
                         for (int64_t i = 0; i < d->size(); ++i) (*d)[i] += g[0];
                       }
                     });
}

// sum(x * weights) for a constant weight array; the probe loss of gradient checks.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, NdArray<T> weights) {
  const NdArray<T>& a = tape.value(x);
  if (!same_shape(a, weights)) throw ShapeError("weighted_sum: shape mismatch");
  double s = 0;
  for (int64_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * weights[i];
  auto w = std::make_shared<NdArray<T>>(std::move(weights));
  return tape.record(NdArray<T>({1}, static_cast<T>(s)), {x},
                     [x, w](Tape<T>& t, const NdArray<T>& g) {
                       if (NdArray<T>* d = t.grad_buffer(x)) {
                         for (int64_t i = 0; i < d->size(); ++i) (*d)[i] += g[0] * (*w)[i];
                       }
                     });
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  NdArray<T> y = tape.value(x).reshaped(shape);
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, const NdArray<T>& g) {
    if (NdArray<T>* d = t.grad_buffer(x)) {
      for (int64_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    }
  });
}

template <typename T>
Var broadcast_add(Tape<T>& tape, Var frames, Var per_group, const GroupIndex& groups) {
  NdArray<T> y = kernels::broadcast_add_forward(tape.value(frames), tape.value(per_group), groups);
  auto gi = std::make_shared<GroupIndex>(groups);
  return tape.record(std::move(y), {frames, per_group},
                     [frames, per_group, gi](Tape<T>& t, const NdArray<T>& g) {
                       kernels::broadcast_add_backward(g, *gi, t.grad_buffer(frames),
                                                       t.grad_buffer(per_group));
                     });
}

// Copies each group's entry to every frame slot of that group.
template <typename T>
Var broadcast(Tape<T>& tape, Var per_group, const GroupIndex& groups) {
  Shape shape = tape.value(per_group).shape();
  shape[0] = groups.num_slots();
  Var zeros = tape.constant(NdArray<T>(shape));
  return broadcast_add(tape, zeros, per_group, groups);
}

template <typename T>
Var group_max(Tape<T>& tape, Var frames, const GroupIndex& groups) {
  auto argmax = std::make_shared<std::vector<int>>();
  NdArray<T> y = kernels::group_max_forward(tape.value(frames), groups, argmax.get());
  return tape.record(std::move(y), {frames}, [frames, argmax](Tape<T>& t, const NdArray<T>& g) {
    kernels::group_max_backward(*argmax, g, t.grad_buffer(frames));
  });
}

template <typename T>
Var spatial_max_mean(Tape<T>& tape, Var x) {
  auto argmax = std::make_shared<std::vector<int>>();
  NdArray<T> y = kernels::spatial_max_mean_forward(tape.value(x), argmax.get());
  return tape.record(std::move(y), {x}, [x, argmax](Tape<T>& t, const NdArray<T>& g) {
    kernels::spatial_max_mean_backward(t.value(x), *argmax, g, t.grad_buffer(x));
  });
}

template <typename T>
Var part_pool(Tape<T>& tape, Var x, int parts) {
  auto argmax = std::make_shared<std::vector<int>>();
  NdArray<T> y = kernels::part_pool_forward(tape.value(x), parts, argmax.get());
  Shape shape = tape.value(x).shape();
  return tape.record(std::move(y), {x},
                     [x, parts, argmax, shape](Tape<T>& t, const NdArray<T>& g) {
                       kernels::part_pool_backward(shape, parts, *argmax, g, t.grad_buffer(x));
                     });
}

template <typename T>
Var part_linear(Tape<T>& tape, Var x, Var w) {
  NdArray<T> y = kernels::part_linear_forward(tape.value(x), tape.value(w));
  return tape.record(std::move(y), {x, w}, [x, w](Tape<T>& t, const NdArray<T>& g) {
    kernels::part_linear_backward(t.value(x), t.value(w), g, t.grad_buffer(x), t.grad_buffer(w));
  });
}

}  // namespace snpg::ad
