#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cachelm/numcore/tensor.hpp"

namespace cachelm {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

}  // namespace detail

/// Handle to a value in the computation graph. Copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  /// Gradient buffer; allocated (zeros) on first access.
  Tensor& grad() { return node_->grad_buffer(); }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }

  /// Same value, no history.
  Var detach() const { return Var(node_->value, false); }

  detail::Node* node() const noexcept { return node_.get(); }

  /// Records an operation. `backward` reads self.grad and accumulates into
  /// self.inputs[i]->grad_buffer() for inputs that require gradients.
  /// The result is checked for NaN/Inf (masked -inf allowed on request).
  static Var make(const char* op, Tensor value, std::vector<Var> inputs,
                  std::function<void(detail::Node&)> backward, bool allow_masked = false);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse sweep from a scalar (1x1) root, seeding dL/dL = 1.
void backward(const Var& root);

bool grad_enabled() noexcept;

/// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Named trainable leaf. Copies are handles to the same storage.
struct Parameter {
  std::string name;
  Var var;

  Parameter() = default;
  Parameter(std::string n, Tensor initial);

  Tensor& value() { return var.mutable_value(); }
  const Tensor& value() const { return var.value(); }
  Tensor& grad() { return var.grad(); }
  std::size_t size() const { return var.value().size(); }
};

void zero_grads(std::span<const Parameter> params);
std::size_t count_parameters(std::span<const Parameter> params);

}  // namespace cachelm
