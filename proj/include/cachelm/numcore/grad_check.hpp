#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "cachelm/numcore/autograd.hpp"

namespace cachelm {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t probes = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences.
/// `loss_fn` must rebuild its graph from the current parameter values on
/// every call and be deterministic. With `samples_per_param` == 0 every
/// coordinate is probed; otherwise that many coordinates per parameter are
/// drawn with `sample_seed`. Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const std::function<Var()>& loss_fn, std::span<const Parameter> params,
                           double eps = 1e-5, std::size_t samples_per_param = 0,
                           std::uint64_t sample_seed = 0);

}  // namespace cachelm
