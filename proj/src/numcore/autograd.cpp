#include "cachelm/numcore/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "cachelm/numcore/errors.hpp"

namespace cachelm {

namespace {

thread_local bool g_grad_enabled = true;

bool finite_or_masked(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v) && !is_masked(v)) return false;
  }
  return true;
}

}  // namespace

Tensor& detail::Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::make(const char* op, Tensor value, std::vector<Var> inputs,
              std::function<void(detail::Node&)> backward, bool allow_masked) {
  if (allow_masked ? !finite_or_masked(value) : !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
  out.node_->backward = std::move(backward);
  return out;
}

void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw DimensionError("backward() needs a scalar root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) {
      node->backward(*node);
      if (!node->grad.all_finite()) throw NumericError("non-finite gradient during backward");
    }
  }
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Parameter::Parameter(std::string n, Tensor initial) : name(std::move(n)), var(std::move(initial), true) {
  var.grad();
}

void zero_grads(std::span<const Parameter> params) {
  for (const auto& p : params) p.var.node()->grad_buffer().fill(0.0);
}

std::size_t count_parameters(std::span<const Parameter> params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

}  // namespace cachelm
