#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "snpg/ndarray.hpp"
#include "snpg/tape.hpp"

namespace snpg {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0;
  double tolerance = 0;
  int64_t coords = 0;  // coordinates compared

  bool pass() const { return max_rel_err <= tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;           // central-difference step
  double op_tolerance = 1e-4;
  double model_tolerance = 1e-3;
  int max_coords_per_tensor = 48;
  uint64_t seed = 1;
};

// Relative error used by every check: |a - n| / (|n| + floor).
double relative_error(double analytic, double numeric, double floor = 1e-8);

// Compares tape gradients of a scalar built by `build` from `inputs` with
// central differences, on at most max_coords_per_tensor random coordinates
// of each input.
GradCheckResult check_op(
    const std::string& name, std::vector<NdArray<double>> inputs,
    const std::function<Var(Tape<double>&, const std::vector<Var>&)>& build,
    const GradCheckOptions& opts, double tolerance);

// The full suite: every differentiable op, the residual snippet block and a
// tiny end-to-end model with the training loss.
std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opts = {});

nlohmann::ordered_json gradcheck_json(const std::vector<GradCheckResult>& results);

}  // namespace snpg
