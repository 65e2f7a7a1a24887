#include "cachelm/numcore/optim.hpp"

#include <cmath>

#include "cachelm/numcore/errors.hpp"

namespace cachelm {

double global_grad_norm(std::span<const Parameter> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.var.has_grad()) continue;
    for (double g : p.var.node()->grad.data()) sq += g * g;
  }
  return std::sqrt(sq);
}

double sgd_step(std::span<const Parameter> params, double lr, double clip_norm) {
  if (!(lr >= 0.0) || !(clip_norm > 0.0)) {
    throw ConfigurationError("sgd_step: lr must be >= 0 and clip_norm > 0");
  }
  for (const auto& p : params) {
    if (p.var.has_grad() && !p.var.node()->grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  const double norm = global_grad_norm(params);
  const double factor = norm > clip_norm ? clip_norm / norm : 1.0;
  if (lr != 0.0) {
    for (const auto& p : params) {
      if (!p.var.has_grad()) continue;
      auto value = p.var.node()->value.data();
      const auto grad = p.var.node()->grad.data();
      for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr * (factor * grad[i]);
    }
  }
  zero_grads(params);
  return norm;
}

}  // namespace cachelm
