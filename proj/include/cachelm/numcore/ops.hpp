#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cachelm/numcore/autograd.hpp"
#include "cachelm/numcore/rng.hpp"

namespace cachelm {

enum class Mode { train, eval };

/// Weight-matrix initializer: i.i.d. uniform(-range, range).
Tensor init_uniform(std::size_t rows, std::size_t cols, Rng& rng, double range = 0.1);

// Differentiable operations on rank-2 values. Sequences use time-major rows:
// row t * batch + b holds step t of stream b.

Var matmul(const Var& a, const Var& b);
/// a * b^T, used for the tied output projection.
Var matmul_nt(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
/// Adds a 1 x n row to every row of `a`.
Var add_row(const Var& a, const Var& row);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);

Var sigmoid(const Var& a);
Var tanh(const Var& a);
/// Exact (erf) GELU.
Var gelu(const Var& a);

Var sum(const Var& a);
Var sum_squares(const Var& a);

/// Gathers rows of `table` (V x H) for each id.
Var embedding(const Var& table, std::span<const int> ids);

/// Inverted dropout; identity in eval mode or when rate is 0.
Var dropout(const Var& a, double rate, Mode mode, Rng& rng);

Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);

/// LSTM cell nonlinearity. `gates` is B x 4H in (input, forget, candidate,
/// output) order, `c_prev` is B x H. Returns B x 2H laid out as [h | c].
Var lstm_cell(const Var& gates, const Var& c_prev);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Multi-head causal self-attention core. `qkv` is (steps*batch) x 3H with
/// [Q | K | V] columns; returns (steps*batch) x H. Position t of a stream
/// attends to positions <= t of the same stream only.
Var causal_self_attention(const Var& qkv, std::size_t steps, std::size_t batch,
                          std::size_t heads);

}  // namespace cachelm
