#include "cachelm/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cachelm/numcore/errors.hpp"
#include "cachelm/numcore/rng.hpp"

namespace cachelm {

namespace {

double probe(const std::function<Var()>& loss_fn) {
  NoGradGuard no_grad;
  double v = 0.0;
  try {
    v = loss_fn().value()[0];
  } catch (const NumericError& e) {
    throw ProbeError(std::string("loss evaluation failed at a finite-difference probe point: ") + e.what());
  }
  if (!std::isfinite(v)) throw ProbeError("loss is not finite at a finite-difference probe point");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Var()>& loss_fn, std::span<const Parameter> params,
                           double eps, std::size_t samples_per_param, std::uint64_t sample_seed) {
  if (!(eps >= 1e-6 && eps <= 1e-4)) throw ConfigurationError("grad_check: eps must lie in [1e-6, 1e-4]");

  zero_grads(params);
  Var loss = loss_fn();
  if (loss.value().size() != 1) throw DimensionError("grad_check: loss must be a scalar");
  if (!std::isfinite(loss.value()[0])) throw ProbeError("loss is not finite at the base point");
  backward(loss);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.var.node()->grad_buffer());
  zero_grads(params);

  GradCheckResult result;
  Rng rng(sample_seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params[pi].var.node()->value;
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (samples_per_param > 0 && samples_per_param < coords.size()) {
      for (std::size_t i = 0; i < samples_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(samples_per_param);
    }
    for (std::size_t idx : coords) {
      const double original = value[idx];
      value[idx] = original + eps;
      const double up = probe(loss_fn);
      value[idx] = original - eps;
      const double down = probe(loss_fn);
      value[idx] = original;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][idx];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.probes;
      if (result.worst_parameter.empty() || err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = params[pi].name;
        result.worst_index = idx;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace cachelm
