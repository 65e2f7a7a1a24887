#include "cachelm/pointer/pointer.hpp"

#include <algorithm>
#include <cmath>

#include "cachelm/numcore/ops.hpp"
#include "cachelm/numcore/eigen_view.hpp"
#include "cachelm/numcore/errors.hpp"

namespace cachelm {

using detail::view;

PointerHead::PointerHead(Parameter output_weight, const PointerConfig& cfg, Rng& init_rng)
    : cfg_(cfg), window_(cfg.enabled ? cfg.window : 0), output_weight_(std::move(output_weight)) {
  if (!output_weight_.var.defined() || output_weight_.value().rank() != 2) {
    throw ConfigurationError("pointer head needs a V x H output matrix");
  }
  const std::size_t v = vocab_size(), h = hidden_size();
  bias_ = Parameter("head.bias", Tensor::zeros(1, v));
  if (window_ > 0) {
    pointer_weight_ = Parameter("head.pointer", init_uniform(window_, h, init_rng));
    if (cfg_.memory_augmentation) memory_weight_ = Parameter("head.memory", init_uniform(h, 1, init_rng));
  }
  for (int id : cfg_.exclude_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) throw ConfigurationError("pointer exclude id out of range");
  }
}

bool PointerHead::excluded(int token) const {
  return std::find(cfg_.exclude_ids.begin(), cfg_.exclude_ids.end(), token) != cfg_.exclude_ids.end();
}

std::vector<Parameter> PointerHead::parameters() const {
  std::vector<Parameter> out{bias_};
  if (pointer_weight_.var.defined()) out.push_back(pointer_weight_);
  if (memory_weight_.var.defined()) out.push_back(memory_weight_);
  return out;
}

std::size_t PointerHead::parameter_count() const {
  return output_weight_.size() + count_parameters(parameters());
}

double PointerHead::memory_value(std::span<const double> h) const {
  if (!memory_augmented()) return 0.0;
  const auto w = memory_weight_.value().data();
  double m = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) m += w[k] * h[k];
  return m;
}

// ---------------------------------------------------------------- state

PointerState::PointerState(std::size_t window) : tokens_(window, -1), m_(window, 0.0), valid_(window, 0) {}

std::size_t PointerState::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), char{1}));
}

void PointerState::push(int token, double m_value, bool valid) {
  if (tokens_.empty()) return;
  tokens_[oldest_] = token;
  m_[oldest_] = m_value;
  valid_[oldest_] = valid ? 1 : 0;
  oldest_ = (oldest_ + 1) % tokens_.size();
}

void PointerState::clear() {
  std::fill(tokens_.begin(), tokens_.end(), -1);
  std::fill(m_.begin(), m_.end(), 0.0);
  std::fill(valid_.begin(), valid_.end(), char{0});
  oldest_ = 0;
}

// ------------------------------------------------------------ step form

namespace {

void check_hidden(std::span<const double> h, const PointerHead& head) {
  if (h.size() != head.hidden_size()) {
    throw DimensionError("hidden vector of " + std::to_string(h.size()) + " values for a head of width " +
                         std::to_string(head.hidden_size()));
  }
}

}  // namespace

std::vector<double> vocab_logits(std::span<const double> h, const PointerHead& head) {
  check_hidden(h, head);
  const Tensor& w = head.output_weight().value();
  std::vector<double> z(head.vocab_size());
  Eigen::Map<Eigen::VectorXd> out(z.data(), static_cast<Eigen::Index>(z.size()));
  Eigen::Map<const Eigen::VectorXd> hv(h.data(), static_cast<Eigen::Index>(h.size()));
  out.noalias() = view(w) * hv;
  const auto b = head.bias().value().data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += b[i];
  return z;
}

std::vector<double> pointer_logits(std::span<const double> h, const PointerHead& head, const PointerState& state) {
  std::vector<double> z = vocab_logits(h, head);
  const std::size_t l = head.window();
  if (l == 0) return z;
  if (state.window() != l) throw DimensionError("pointer state window does not match the head");
  const Tensor& wp = head.pointer_weight().value();
  z.resize(head.vocab_size() + l);
  for (std::size_t j = 0; j < l; ++j) {
    double& slot = z[head.vocab_size() + j];
    if (!state.valid(j)) {
      slot = kMasked;
      continue;
    }
    const auto row = wp.row(j);
    double p = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) p += row[k] * h[k];
    slot = p + state.m_value(j);
  }
  return z;
}

void update_state(PointerState& state, int token, std::span<const double> h, const PointerHead& head) {
  if (head.window() == 0) return;
  check_hidden(h, head);
  state.push(token, head.memory_value(h), !head.excluded(token));
}

SupervisionVector build_supervision(int target, const PointerState& state, std::size_t vocab_size) {
  if (target < 0 || static_cast<std::size_t>(target) >= vocab_size) {
    throw DimensionError("supervision target outside the vocabulary");
  }
  SupervisionVector s;
  s.indices.push_back(target);
  for (std::size_t j = 0; j < state.window(); ++j) {
    if (state.valid(j) && state.token(j) == target) s.indices.push_back(static_cast<int>(vocab_size + j));
  }
  return s;
}

double pointer_loss(std::span<const double> y, const SupervisionVector& s) {
  double mass = 0.0;
  for (int i : s.indices) mass += y[static_cast<std::size_t>(i)];
  if (!(mass > 0.0)) throw NumericError("supervised probability mass is zero");
  return -std::log(mass);
}

std::vector<double> aggregate_word_probs(std::span<const double> y, const PointerState& state,
                                         std::size_t vocab_size) {
  if (y.size() != vocab_size + state.window()) {
    throw DimensionError("distribution has " + std::to_string(y.size()) + " entries, expected " +
                         std::to_string(vocab_size + state.window()));
  }
  std::vector<double> q(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(vocab_size));
  for (std::size_t j = 0; j < state.window(); ++j) {
    if (state.valid(j)) q[static_cast<std::size_t>(state.token(j))] += y[vocab_size + j];
  }
  return q;
}

// ----------------------------------------------------------- chunk form

std::vector<std::ptrdiff_t> chunk_slot_sources(const PointerHead& head, std::span<const int> inputs,
                                               std::size_t steps, std::size_t batch) {
  const std::size_t l = head.window();
  std::vector<std::ptrdiff_t> sources(steps * batch * l, -1);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t row = t * batch + b;
      for (std::size_t j = 0; j < l; ++j) {
        // slot j at step t holds the input consumed at step t - (L - 1) + j
        const auto u = static_cast<std::ptrdiff_t>(t + j + 1) - static_cast<std::ptrdiff_t>(l);
        if (u < 0) continue;
        const std::size_t src = static_cast<std::size_t>(u) * batch + b;
        if (!head.excluded(inputs[src])) sources[row * l + j] = static_cast<std::ptrdiff_t>(src);
      }
    }
  }
  return sources;
}

Var chunk_logits(const Var& hiddens, const PointerHead& head, std::span<const int> inputs, std::size_t steps,
                 std::size_t batch) {
  if (hiddens.rows() != steps * batch || inputs.size() != steps * batch) {
    throw DimensionError("chunk_logits: hiddens/inputs do not cover steps x batch");
  }
  const Var vocab = add_row(matmul_nt(hiddens, head.output_weight().var), head.bias().var);
  if (head.window() == 0) return vocab;
  const Var pointer = matmul_nt(hiddens, head.pointer_weight().var);
  const auto sources = chunk_slot_sources(head, inputs, steps, batch);
  Var slots;
  if (head.memory_augmented()) {
    const Var memory = matmul(hiddens, head.memory_weight().var);
    slots = pointer_slots(pointer, &memory, sources);
  } else {
    slots = pointer_slots(pointer, nullptr, sources);
  }
  const std::vector<Var> parts{vocab, slots};
  return concat_cols(parts);
}

std::vector<std::vector<int>> chunk_supervision(const PointerHead& head, std::span<const int> inputs,
                                                std::span<const int> targets, std::size_t steps,
                                                std::size_t batch) {
  const std::size_t l = head.window();
  const std::size_t v = head.vocab_size();
  const auto sources = chunk_slot_sources(head, inputs, steps, batch);
  std::vector<std::vector<int>> out(steps * batch);
  for (std::size_t row = 0; row < steps * batch; ++row) {
    const int target = targets[row];
    if (target < 0 || static_cast<std::size_t>(target) >= v) throw DimensionError("target outside vocabulary");
    out[row].push_back(target);
    for (std::size_t j = 0; j < l; ++j) {
      const std::ptrdiff_t src = sources[row * l + j];
      if (src >= 0 && inputs[static_cast<std::size_t>(src)] == target) out[row].push_back(static_cast<int>(v + j));
    }
  }
  return out;
}

Var pointer_slots(const Var& pointer, const Var* memory, std::span<const std::ptrdiff_t> sources) {
  const std::size_t rows = pointer.rows(), l = pointer.cols();
  if (sources.size() != rows * l) throw DimensionError("pointer_slots: source table does not match");
  Tensor out = Tensor::zeros(rows, l);
  const Tensor& p = pointer.value();
  for (std::size_t i = 0; i < rows * l; ++i) {
    const std::ptrdiff_t src = sources[i];
    if (src < 0) {
      out[i] = kMasked;
    } else {
      out[i] = p[i] + (memory ? memory->value()[static_cast<std::size_t>(src)] : 0.0);
    }
  }
  std::vector<Var> inputs{pointer};
  if (memory) inputs.push_back(*memory);
  std::vector<std::ptrdiff_t> saved(sources.begin(), sources.end());
  return Var::make(
      "pointer_slots", std::move(out), std::move(inputs),
      [saved = std::move(saved)](detail::Node& self) {
        auto& pn = *self.inputs[0];
        Tensor* gp = pn.requires_grad ? &pn.grad_buffer() : nullptr;
        Tensor* gm = nullptr;
        if (self.inputs.size() > 1 && self.inputs[1]->requires_grad) gm = &self.inputs[1]->grad_buffer();
        for (std::size_t i = 0; i < saved.size(); ++i) {
          if (saved[i] < 0) continue;
          const double g = self.grad[i];
          if (gp) (*gp)[i] += g;
          if (gm) (*gm)[static_cast<std::size_t>(saved[i])] += g;
        }
      },
      true);
}

Var supervised_nll(const Var& logits, std::span<const std::vector<int>> supervision, std::vector<double>* per_row) {
  const Tensor& z = logits.value();
  const std::size_t rows = z.rows();
  if (supervision.size() != rows) throw DimensionError("supervised_nll: one supervision set per row required");
  std::vector<double> lse_all(rows), lse_sup(rows);
  double total = 0.0;
  std::vector<double> scratch;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto zr = z.row(r);
    lse_all[r] = log_sum_exp(zr);
    scratch.clear();
    for (int i : supervision[r]) scratch.push_back(zr[static_cast<std::size_t>(i)]);
    lse_sup[r] = log_sum_exp(scratch);
    if (is_masked(lse_sup[r]) || is_masked(lse_all[r])) throw NumericError("supervised probability mass is zero");
    const double nll = lse_all[r] - lse_sup[r];
    total += nll;
    if (per_row) per_row->push_back(nll);
  }
  const double mean = total / static_cast<double>(rows);
  std::vector<std::vector<int>> saved(supervision.begin(), supervision.end());
  return Var::make("supervised_nll", Tensor(Shape{1, 1}, mean), {logits},
                   [saved = std::move(saved), lse_all = std::move(lse_all),
                    lse_sup = std::move(lse_sup)](detail::Node& self) {
                     auto& in = *self.inputs[0];
                     if (!in.requires_grad) return;
                     Tensor& g = in.grad_buffer();
                     const Tensor& z = in.value;
                     const double scale = self.grad[0] / static_cast<double>(z.rows());
                     for (std::size_t r = 0; r < z.rows(); ++r) {
                       const auto zr = z.row(r);
                       auto gr = g.row(r);
                       for (std::size_t i = 0; i < zr.size(); ++i) {
                         if (!is_masked(zr[i])) gr[i] += scale * std::exp(zr[i] - lse_all[r]);
                       }
                       for (int i : saved[r]) {
                         const auto k = static_cast<std::size_t>(i);
                         gr[k] -= scale * std::exp(zr[k] - lse_sup[r]);
                       }
                     }
                   });
}

}  // namespace cachelm
