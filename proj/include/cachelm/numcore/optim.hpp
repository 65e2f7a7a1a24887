#pragma once

#include <span>

#include "cachelm/numcore/autograd.hpp"

namespace cachelm {

/// Plain SGD with global-norm clipping. Returns the pre-clip gradient norm.
/// A non-finite gradient aborts the step (values untouched) with a
/// NumericError naming the parameter. Gradients are zeroed afterwards.
double sgd_step(std::span<const Parameter> params, double lr, double clip_norm);

double global_grad_norm(std::span<const Parameter> params);

}  // namespace cachelm
