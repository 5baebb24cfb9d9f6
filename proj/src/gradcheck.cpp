#include "snpg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "snpg/loss.hpp"
#include "snpg/model.hpp"
#include "snpg/ops.hpp"
#include "snpg/rng.hpp"

namespace snpg {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / (std::abs(numeric) + floor);
}

namespace {

NdArray<double> random_array(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  NdArray<double> a(shape);
  for (int64_t i = 0; i < a.size(); ++i) a[i] = uniform_real(rng, lo, hi);
  return a;
}

std::vector<int64_t> pick_coords(int64_t size, int max_coords, Rng& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(size));
  std::iota(idx.begin(), idx.end(), 0);
  if (size > max_coords) {
    for (int64_t i = 0; i < max_coords; ++i) {
      std::swap(idx[static_cast<size_t>(i)],
                idx[static_cast<size_t>(i + static_cast<int64_t>(rng() % static_cast<uint64_t>(size - i)))]);
    }
    idx.resize(static_cast<size_t>(max_coords));
  }
  return idx;
}

// Central differences of `value` at each coordinate against `analytic`.
void compare(GradCheckResult& r, double* coord, double analytic,
             const std::function<double()>& value, double h) {
  const double saved = *coord;
  *coord = saved + h;
  const double up = value();
  *coord = saved - h;
  const double down = value();
  *coord = saved;
  const double numeric = (up - down) / (2 * h);
  r.max_rel_err = std::max(r.max_rel_err, relative_error(analytic, numeric));
  ++r.coords;
}

// Gradient check over the parameters of `net` (those accepted by `use`) and
// the input x, with `build` producing a scalar from the input variable.
GradCheckResult check_model(const std::string& name, SnippetNet<double>& net, NdArray<double> x,
                            const std::function<Var(Tape<double>&, Var)>& build,
                            const std::function<bool(const std::string&)>& use,
                            const GradCheckOptions& opts, double tolerance, Rng& rng) {
  GradCheckResult r{name, 0, tolerance, 0};
  net.store().zero_grad();
  NdArray<double> dx;
  {
    Tape<double> tape;
    Var xv = tape.input(x);
    Var loss = build(tape, xv);
    tape.backward(loss);
    dx = tape.grad(xv);
  }
  auto value = [&] {
    Tape<double> tape;
    Var xv = tape.constant(x);
    return tape.value(build(tape, xv))[0];
  };
  for (int64_t i : pick_coords(x.size(), opts.max_coords_per_tensor, rng)) {
    compare(r, &x[i], dx[i], value, opts.step);
  }
  for (Parameter<double>* p : net.store().params()) {
    if (!use(p->name)) continue;
    const NdArray<double> g = p->grad;
    for (int64_t i : pick_coords(p->value.size(), opts.max_coords_per_tensor, rng)) {
      compare(r, &p->value[i], g[i], value, opts.step);
    }
  }
  return r;
}

FeatNormState<double> norm_state(int64_t channels) {
  FeatNormState<double> s;
  s.running_mean = NdArray<double>({channels}, 0.0);
  s.running_var = NdArray<double>({channels}, 1.0);
  return s;
}

}  // namespace

GradCheckResult check_op(const std::string& name, std::vector<NdArray<double>> inputs,
                         const std::function<Var(Tape<double>&, const std::vector<Var>&)>& build,
                         const GradCheckOptions& opts, double tolerance) {
  GradCheckResult r{name, 0, tolerance, 0};
  std::vector<NdArray<double>> grads;
  {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.input(in));
    Var loss = build(tape, vars);
    tape.backward(loss);
    for (Var v : vars) grads.push_back(tape.grad(v));
  }
  auto value = [&] {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.constant(in));
    return tape.value(build(tape, vars))[0];
  };
  Rng rng = make_stream(opts.seed, std::hash<std::string>{}(name));
  for (size_t t = 0; t < inputs.size(); ++t) {
    for (int64_t i : pick_coords(inputs[t].size(), opts.max_coords_per_tensor, rng)) {
      compare(r, &inputs[t][i], grads[t][i], value, opts.step);
    }
  }
  return r;
}

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opts) {
  std::vector<GradCheckResult> out;
  Rng rng = make_stream(opts.seed, 0x6c);
  const double tol = opts.op_tolerance;

  // Scalar readout sum(R * y); R depends only on y's size so every
  // re-evaluation of a check sees the same weights.
  auto readout = [&opts](Tape<double>& tape, Var y) {
    Rng wr = make_stream(opts.seed, 0x7e, static_cast<uint64_t>(tape.value(y).size()));
    return ad::weighted_sum(tape, y, random_array(tape.value(y).shape(), wr));
  };
  using Vars = const std::vector<Var>&;

  out.push_back(check_op("conv2d_1x1", {random_array({2, 3, 5, 4}, rng), random_array({4, 3, 1, 1}, rng)},
                         [&](Tape<double>& t, Vars v) { return readout(t, ad::conv2d(t, v[0], v[1], 1, 0)); },
                         opts, tol));
  out.push_back(check_op("conv2d_3x3", {random_array({2, 3, 6, 5}, rng), random_array({4, 3, 3, 3}, rng)},
                         [&](Tape<double>& t, Vars v) { return readout(t, ad::conv2d(t, v[0], v[1], 1, 1)); },
                         opts, tol));
  out.push_back(check_op("conv2d_3x3_blocked",
                         {random_array({2, 8, 9, 7}, rng), random_array({16, 8, 3, 3}, rng)},
                         [&](Tape<double>& t, Vars v) { return readout(t, ad::conv2d(t, v[0], v[1], 1, 1)); },
                         opts, tol));
  out.push_back(check_op("conv2d_3x3_blocked_narrow_input",
                         {random_array({2, 3, 5, 11}, rng), random_array({8, 3, 3, 3}, rng)},
                         [&](Tape<double>& t, Vars v) { return readout(t, ad::conv2d(t, v[0], v[1], 1, 1)); },
                         opts, tol));
  out.push_back(check_op("conv2d_3x3_stride2",
                         {random_array({2, 3, 7, 6}, rng), random_array({4, 3, 3, 3}, rng)},
                         [&](Tape<double>& t, Vars v) { return readout(t, ad::conv2d(t, v[0], v[1], 2, 1)); },
                         opts, tol));
  out.push_back(check_op("conv2d_1x1_stride2",
                         {random_array({2, 3, 6, 5}, rng), random_array({4, 3, 1, 1}, rng)},
                         [&](Tape<double>& t, Vars v) { return readout(t, ad::conv2d(t, v[0], v[1], 2, 0)); },
                         opts, tol));
  {
    auto state = norm_state(4);
    out.push_back(check_op(
        "featnorm_train",
        {random_array({3, 4, 3, 2}, rng), random_array({4}, rng, 0.5, 1.5), random_array({4}, rng)},
        [&](Tape<double>& t, Vars v) {
          return readout(t, ad::featnorm(t, v[0], v[1], v[2], Phase::train, state));
        },
        opts, tol));
  }
  {
    auto state = norm_state(4);
    state.running_mean = random_array({4}, rng);
    state.running_var = random_array({4}, rng, 0.5, 2.0);
    state.populated = true;
    out.push_back(check_op(
        "featnorm_eval",
        {random_array({3, 4, 3, 2}, rng), random_array({4}, rng, 0.5, 1.5), random_array({4}, rng)},
        [&](Tape<double>& t, Vars v) {
          return readout(t, ad::featnorm(t, v[0], v[1], v[2], Phase::eval, state));
        },
        opts, tol));
  }
  {
    // Keep every input away from the kink at zero.
    NdArray<double> x = random_array({4, 3, 5}, rng);
    for (int64_t i = 0; i < x.size(); ++i) x[i] = (x[i] < 0 ? -0.05 : 0.05) + x[i];
    out.push_back(check_op("relu", {x},
                           [&](Tape<double>& t, Vars v) { return readout(t, ad::relu(t, v[0])); },
                           opts, tol));
  }
  out.push_back(check_op(
      "linear", {random_array({4, 5}, rng), random_array({3, 5}, rng), random_array({3}, rng)},
      [&](Tape<double>& t, Vars v) { return readout(t, ad::linear(t, v[0], v[1], v[2])); }, opts, tol));
  {
    const std::vector<int> sizes{2, 3, 1};
    const GroupIndex groups = GroupIndex::from_sizes(sizes);
    out.push_back(check_op("group_max", {random_array({6, 2, 3, 2}, rng)},
                           [&](Tape<double>& t, Vars v) { return readout(t, ad::group_max(t, v[0], groups)); },
                           opts, tol));
  }
  out.push_back(check_op("spatial_max_mean", {random_array({2, 3, 4, 5}, rng)},
                         [&](Tape<double>& t, Vars v) { return readout(t, ad::spatial_max_mean(t, v[0])); },
                         opts, tol));
  {
    const std::vector<int> sizes{3, 2};
    const GroupIndex groups = GroupIndex::from_sizes(sizes);
    out.push_back(check_op("broadcast_add", {random_array({5, 2, 3, 3}, rng), random_array({2, 2, 3, 3}, rng)},
                           [&](Tape<double>& t, Vars v) {
                             return readout(t, ad::broadcast_add(t, v[0], v[1], groups));
                           },
                           opts, tol));
  }
  out.push_back(check_op("part_pool", {random_array({2, 3, 8, 4}, rng)},
                         [&](Tape<double>& t, Vars v) { return readout(t, ad::part_pool(t, v[0], 4)); },
                         opts, tol));
  out.push_back(check_op("part_linear", {random_array({3, 4, 5}, rng), random_array({4, 6, 5}, rng)},
                         [&](Tape<double>& t, Vars v) { return readout(t, ad::part_linear(t, v[0], v[1])); },
                         opts, tol));

  // Residual snippet blocks, identity and projection skips.
  {
    BackboneConfig bb;
    bb.blocks = {1, 1};
    bb.channels = {3, 5};
    bb.strides = {1, 2};
    HeadConfig head{2, 4, 3, false};
    SnippetNet<double> net(bb, head, mix_seed(opts.seed, 0xb1));
    const std::vector<int> sizes{2, 3, 1};
    const GroupIndex groups = GroupIndex::from_sizes(sizes);
    for (const auto& [prefix, stride] :
         std::vector<std::pair<std::string, int>>{{"stage0.block0", 1}, {"stage1.block0", 2}}) {
      const std::string p = prefix;
      const int s = stride;
      out.push_back(check_model(
          "residual_snippet_block_" + std::string(s == 1 ? "identity" : "projection"), net,
          random_array({6, 3, 8, 6}, rng),
          [&](Tape<double>& t, Var x) {
            return readout(t, net.residual_snippet_block(t, x, groups, p, s, Phase::train));
          },
          [&](const std::string& name) { return name.rfind(p + ".", 0) == 0; }, opts, tol, rng));
    }
  }

  // Tiny end-to-end model with the training loss.
  {
    BackboneConfig bb;
    bb.blocks = {1, 1};
    bb.channels = {4, 6};
    bb.strides = {1, 2};
    const int U = 3, V = 2, M = 2, N = 2;
    HeadConfig head{2, 4, U, false};
    SnippetNet<double> net(bb, head, mix_seed(opts.seed, 0xe2));
    std::vector<int> snippet_sizes(static_cast<size_t>(U * V * M), N);
    const GroupIndex snippets = GroupIndex::from_sizes(snippet_sizes);
    const std::vector<int> per_seq(static_cast<size_t>(U * V), M);
    const GroupIndex sequences = GroupIndex::from_sizes(per_seq);
    std::vector<int> seq_labels, snip_labels;
    for (int u = 0; u < U; ++u) {
      seq_labels.insert(seq_labels.end(), V, u);
      snip_labels.insert(snip_labels.end(), V * M, u);
    }
    LossConfig loss_cfg;
    NdArray<double> frames = random_array({U * V * M * N, 1, 8, 6}, rng, 0, 1);
    out.push_back(check_model(
        "end_to_end_total_loss", net, frames,
        [&](Tape<double>& t, Var x) {
          Var fm = net.backbone_forward(t, x, snippets, Phase::train);
          HeadOutputs h = net.heads_forward(t, fm, snippets, sequences, Phase::train);
          return dual_level_loss(t, h, seq_labels, snip_labels, loss_cfg, nullptr);
        },
        [](const std::string&) { return true; }, opts, opts.model_tolerance, rng));
  }
  return out;
}

nlohmann::ordered_json gradcheck_json(const std::vector<GradCheckResult>& results) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  bool all = true;
  for (const auto& r : results) {
    rows.push_back({{"op", r.name},
                    {"max_rel_err", r.max_rel_err},
                    {"tolerance", r.tolerance},
                    {"coords", r.coords},
                    {"pass", r.pass()}});
    all = all && r.pass();
  }
  return {{"pass", all}, {"checks", rows}};
}

}  // namespace snpg
