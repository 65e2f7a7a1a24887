#include "cachelm/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cachelm/numcore/errors.hpp"
#include "cachelm/numcore/eigen_view.hpp"

namespace cachelm {

using detail::Node;
using detail::view;

namespace {

void require_rank2(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + a.value().shape_string());
  }
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
}

// Gradient buffer of input i, or nullptr when that input needs none.
Tensor* input_grad(Node& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

const Tensor& input_value(const Node& self, std::size_t i) { return self.inputs[i]->value; }

template <typename F, typename D>
Var unary(const char* op, const Var& a, F f, D dfdx_from_y) {
  Tensor out(a.value().shape());
  const auto x = a.value().data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return Var::make(op, std::move(out), {a}, [dfdx_from_y](Node& self) {
    Tensor* gx = input_grad(self, 0);
    if (!gx) return;
    const auto x = input_value(self, 0).data();
    const auto y = self.value.data();
    const auto gy = self.grad.data();
    auto g = gx->data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * dfdx_from_y(x[i], y[i]);
  });
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor init_uniform(std::size_t rows, std::size_t cols, Rng& rng, double range) {
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = rng.uniform(-range, range);
  return t;
}

Var matmul(const Var& a, const Var& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.value().shape_string() + " x " + b.value().shape_string());
  }
  Tensor out = cachelm::matmul(a.value(), b.value());
  return Var::make("matmul", std::move(out), {a, b}, [](Node& self) {
    const auto gc = view(std::as_const(self.grad));
    if (Tensor* ga = input_grad(self, 0)) view(*ga).noalias() += gc * view(input_value(self, 1)).transpose();
    if (Tensor* gb = input_grad(self, 1)) view(*gb).noalias() += view(input_value(self, 0)).transpose() * gc;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + a.value().shape_string() + " x " +
                         b.value().shape_string() + "^T");
  }
  Tensor out = Tensor::zeros(a.rows(), b.rows());
  view(out).noalias() = view(a.value()) * view(b.value()).transpose();
  return Var::make("matmul_nt", std::move(out), {a, b}, [](Node& self) {
    const auto gc = view(std::as_const(self.grad));
    if (Tensor* ga = input_grad(self, 0)) view(*ga).noalias() += gc * view(input_value(self, 1));
    if (Tensor* gb = input_grad(self, 1)) view(*gb).noalias() += gc.transpose() * view(input_value(self, 0));
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  view(out) += view(b.value());
  return Var::make("add", std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (Tensor* g = input_grad(self, i)) view(*g) += view(std::as_const(self.grad));
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  require_rank2(a, "add_row");
  if (row.value().size() != a.cols()) {
    throw DimensionError("add_row: " + a.value().shape_string() + " + " + row.value().shape_string());
  }
  Tensor out = a.value();
  const auto r = row.value().data();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += r[j];
  }
  return Var::make("add_row", std::move(out), {a, row}, [](Node& self) {
    if (Tensor* ga = input_grad(self, 0)) view(*ga) += view(std::as_const(self.grad));
    if (Tensor* gr = input_grad(self, 1)) {
      auto g = gr->data();
      for (std::size_t i = 0; i < self.grad.rows(); ++i) {
        const auto src = std::as_const(self.grad).row(i);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
      }
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  view(out).array() *= view(b.value()).array();
  return Var::make("mul", std::move(out), {a, b}, [](Node& self) {
    const auto gc = view(std::as_const(self.grad)).array();
    if (Tensor* ga = input_grad(self, 0)) view(*ga).array() += gc * view(input_value(self, 1)).array();
    if (Tensor* gb = input_grad(self, 1)) view(*gb).array() += gc * view(input_value(self, 0)).array();
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return Var::make("scale", std::move(out), {a}, [factor](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      auto dst = g->data();
      const auto src = self.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
    }
  });
}

Var sigmoid(const Var& a) {
  return unary("sigmoid", a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  constexpr double inv_sqrt_2pi = std::numbers::inv_sqrtpi * inv_sqrt2;
  return unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return Var::make("sum", Tensor(Shape{1, 1}, total), {a}, [](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      const double gy = self.grad[0];
      for (double& v : g->data()) v += gy;
    }
  });
}

Var sum_squares(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v * v;
  return Var::make("sum_squares", Tensor(Shape{1, 1}, total), {a}, [](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      const double gy = self.grad[0];
      const auto x = input_value(self, 0).data();
      auto dst = g->data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += 2.0 * x[i] * gy;
    }
  });
}

Var embedding(const Var& table, std::span<const int> ids) {
  require_rank2(table, "embedding");
  const std::size_t width = table.cols();
  Tensor out = Tensor::zeros(ids.size(), width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(table.rows()) + " rows");
    }
    const auto src = table.value().row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return Var::make("embedding", std::move(out), {table}, [saved = std::move(saved)](Node& self) {
    Tensor* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto dst = g->row(static_cast<std::size_t>(saved[i]));
      const auto src = std::as_const(self.grad).row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  });
}

Var dropout(const Var& a, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigurationError("dropout rate must be in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.value().size());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = a.value();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return Var::make("dropout", std::move(out), {a}, [mask = std::move(mask)](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      auto dst = g->data();
      const auto src = self.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] * mask[i];
    }
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  require_rank2(a, "slice_rows");
  if (begin + count > a.rows()) throw DimensionError("slice_rows out of range");
  const std::size_t width = a.cols();
  const auto src = a.value().data().subspan(begin * width, count * width);
  Tensor out(Shape{count, width}, std::vector<double>(src.begin(), src.end()));
  return Var::make("slice_rows", std::move(out), {a}, [begin, width](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      auto dst = g->data().subspan(begin * width, self.grad.size());
      const auto gy = self.grad.data();
      for (std::size_t i = 0; i < gy.size(); ++i) dst[i] += gy[i];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t width = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != width) throw DimensionError("concat_rows: column counts differ");
    total += p.rows();
  }
  std::vector<double> data;
  data.reserve(total * width);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return Var::make("concat_rows", Tensor(Shape{total, width}, std::move(data)),
                   std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
                     std::size_t offset = 0;
                     const auto gy = self.grad.data();
                     for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                       const std::size_t n = self.inputs[i]->value.size();
                       if (Tensor* g = input_grad(self, i)) {
                         auto dst = g->data();
                         for (std::size_t k = 0; k < n; ++k) dst[k] += gy[offset + k];
                       }
                       offset += n;
                     }
                   });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  require_rank2(a, "slice_cols");
  if (begin + count > a.cols()) throw DimensionError("slice_cols out of range");
  Tensor out = Tensor::zeros(a.rows(), count);
  view(out) = view(a.value()).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  return Var::make("slice_cols", std::move(out), {a}, [begin, count](Node& self) {
    if (Tensor* g = input_grad(self, 0)) {
      view(*g).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) +=
          view(std::as_const(self.grad));
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor out = Tensor::zeros(rows, total);
  std::size_t offset = 0;
  bool masked = false;
  for (const auto& p : parts) {
    if (p.cols() > 0) {
      view(out).middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(p.cols())) =
          view(p.value());
    }
    offset += p.cols();
    masked = masked || !p.value().all_finite();
  }
  return Var::make(
      "concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
      [](Node& self) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
          const std::size_t width = self.inputs[i]->value.cols();
          if (Tensor* g = input_grad(self, i); g && width > 0) {
            view(*g) += view(std::as_const(self.grad))
                            .middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(width));
          }
          offset += width;
        }
      },
      masked);
}

Var lstm_cell(const Var& gates, const Var& c_prev) {
  require_rank2(gates, "lstm_cell");
  const std::size_t batch = gates.rows();
  const std::size_t hidden = c_prev.cols();
  if (gates.cols() != 4 * hidden || c_prev.rows() != batch) {
    throw DimensionError("lstm_cell: gates " + gates.value().shape_string() + ", cell " +
                         c_prev.value().shape_string());
  }
  Tensor out = Tensor::zeros(batch, 2 * hidden);
  // Activated gates are kept for the backward pass.
  Tensor act = Tensor::zeros(batch, 4 * hidden);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto g = gates.value().row(b);
    const auto cp = c_prev.value().row(b);
    auto a = act.row(b);
    auto o = out.row(b);
    for (std::size_t k = 0; k < hidden; ++k) {
      const double i_g = sigmoid_scalar(g[k]);
      const double f_g = sigmoid_scalar(g[hidden + k]);
      const double c_g = std::tanh(g[2 * hidden + k]);
      const double o_g = sigmoid_scalar(g[3 * hidden + k]);
      const double c = f_g * cp[k] + i_g * c_g;
      a[k] = i_g;
      a[hidden + k] = f_g;
      a[2 * hidden + k] = c_g;
      a[3 * hidden + k] = o_g;
      o[hidden + k] = c;
      o[k] = o_g * std::tanh(c);
    }
  }
  return Var::make("lstm_cell", std::move(out), {gates, c_prev}, [act = std::move(act), hidden](Node& self) {
    Tensor* g_gates = input_grad(self, 0);
    Tensor* g_cprev = input_grad(self, 1);
    const Tensor& cp_all = input_value(self, 1);
    for (std::size_t b = 0; b < self.value.rows(); ++b) {
      const auto a = act.row(b);
      const auto y = self.value.row(b);
      const auto gy = std::as_const(self.grad).row(b);
      const auto cp = cp_all.row(b);
      for (std::size_t k = 0; k < hidden; ++k) {
        const double i_g = a[k], f_g = a[hidden + k], c_g = a[2 * hidden + k], o_g = a[3 * hidden + k];
        const double tc = std::tanh(y[hidden + k]);
        const double dh = gy[k];
        const double dc = gy[hidden + k] + dh * o_g * (1.0 - tc * tc);
        if (g_gates) {
          auto gg = g_gates->row(b);
          gg[k] += dc * c_g * i_g * (1.0 - i_g);
          gg[hidden + k] += dc * cp[k] * f_g * (1.0 - f_g);
          gg[2 * hidden + k] += dc * i_g * (1.0 - c_g * c_g);
          gg[3 * hidden + k] += dh * tc * o_g * (1.0 - o_g);
        }
        if (g_cprev) g_cprev->row(b)[k] += dc * f_g;
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t n = x.cols();
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(n));
  }
  Tensor out(x.value().shape());
  Tensor normalized(x.value().shape());
  std::vector<double> inv_std(x.rows());
  const auto gm = gamma.value().data();
  const auto bt = beta.value().data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.value().row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto xh = normalized.row(r);
    auto y = out.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (in[j] - mean) * inv_std[r];
      y[j] = xh[j] * gm[j] + bt[j];
    }
  }
  return Var::make("layer_norm", std::move(out), {x, gamma, beta},
                   [normalized = std::move(normalized), inv_std = std::move(inv_std), n](Node& self) {
                     Tensor* gx = input_grad(self, 0);
                     Tensor* gg = input_grad(self, 1);
                     Tensor* gb = input_grad(self, 2);
                     const auto gm = input_value(self, 1).data();
                     std::vector<double> dxh(n);
                     for (std::size_t r = 0; r < self.value.rows(); ++r) {
                       const auto gy = std::as_const(self.grad).row(r);
                       const auto xh = normalized.row(r);
                       double mean_d = 0.0, mean_dx = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         if (gg) gg->data()[j] += gy[j] * xh[j];
                         if (gb) gb->data()[j] += gy[j];
                         dxh[j] = gy[j] * gm[j];
                         mean_d += dxh[j];
                         mean_dx += dxh[j] * xh[j];
                       }
                       if (!gx) continue;
                       mean_d /= static_cast<double>(n);
                       mean_dx /= static_cast<double>(n);
                       auto dst = gx->row(r);
                       for (std::size_t j = 0; j < n; ++j) {
                         dst[j] += inv_std[r] * (dxh[j] - mean_d - xh[j] * mean_dx);
                       }
                     }
                   });
}

Var causal_self_attention(const Var& qkv, std::size_t steps, std::size_t batch, std::size_t heads) {
  require_rank2(qkv, "causal_self_attention");
  if (qkv.rows() != steps * batch || qkv.cols() % 3 != 0) {
    throw DimensionError("causal_self_attention: qkv " + qkv.value().shape_string());
  }
  const std::size_t width = qkv.cols() / 3;
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("causal_self_attention: width not divisible by heads");
  }
  const std::size_t dh = width / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor& in = qkv.value();
  Tensor out = Tensor::zeros(steps * batch, width);
  // weights[((b * heads + h) * steps + t) * steps + u], zero for u > t
  std::vector<double> weights(batch * heads * steps * steps, 0.0);

  auto q_at = [&](std::size_t t, std::size_t b, std::size_t h) { return in.raw() + (t * batch + b) * 3 * width + h * dh; };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < steps; ++t) {
        double* w = weights.data() + ((b * heads + h) * steps + t) * steps;
        const double* q = q_at(t, b, h);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u <= t; ++u) {
          const double* k = q_at(u, b, h) + width;
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += q[d] * k[d];
          w[u] = s * inv_scale;
          mx = std::max(mx, w[u]);
        }
        double total = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          w[u] = std::exp(w[u] - mx);
          total += w[u];
        }
        double* o = out.raw() + (t * batch + b) * width + h * dh;
        for (std::size_t u = 0; u <= t; ++u) {
          w[u] /= total;
          const double* v = q_at(u, b, h) + 2 * width;
          for (std::size_t d = 0; d < dh; ++d) o[d] += w[u] * v[d];
        }
      }
    }
  }

  return Var::make("causal_self_attention", std::move(out), {qkv},
                   [weights = std::move(weights), steps, batch, heads, width, dh, inv_scale](Node& self) {
                     Tensor* g = input_grad(self, 0);
                     if (!g) return;
                     const Tensor& in = input_value(self, 0);
                     const Tensor& gy = self.grad;
                     std::vector<double> dw(steps);
                     for (std::size_t b = 0; b < batch; ++b) {
                       for (std::size_t h = 0; h < heads; ++h) {
                         for (std::size_t t = 0; t < steps; ++t) {
                           const double* w = weights.data() + ((b * heads + h) * steps + t) * steps;
                           const std::size_t row_t = t * batch + b;
                           const double* go = gy.raw() + row_t * width + h * dh;
                           const double* q = in.raw() + row_t * 3 * width + h * dh;
                           double* gq = g->raw() + row_t * 3 * width + h * dh;
                           double dot = 0.0;
                           for (std::size_t u = 0; u <= t; ++u) {
                             const std::size_t row_u = u * batch + b;
                             const double* v = in.raw() + row_u * 3 * width + 2 * width + h * dh;
                             double* gv = g->raw() + row_u * 3 * width + 2 * width + h * dh;
                             double s = 0.0;
                             for (std::size_t d = 0; d < dh; ++d) {
                               s += go[d] * v[d];
                               gv[d] += w[u] * go[d];
                             }
                             dw[u] = s;
                             dot += w[u] * s;
                           }
                           for (std::size_t u = 0; u <= t; ++u) {
                             const double ds = w[u] * (dw[u] - dot) * inv_scale;
                             const std::size_t row_u = u * batch + b;
                             const double* k = in.raw() + row_u * 3 * width + width + h * dh;
                             double* gk = g->raw() + row_u * 3 * width + width + h * dh;
                             for (std::size_t d = 0; d < dh; ++d) {
                               gq[d] += ds * k[d];
                               gk[d] += ds * q[d];
                             }
                           }
                         }
                       }
                     }
                   });
}

}  // namespace cachelm
