#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cachelm/backbone/backbone.hpp"
#include "cachelm/numcore/errors.hpp"
#include "cachelm/numcore/grad_check.hpp"

using namespace cachelm;

namespace {

void randomize(const std::vector<Parameter>& params, Rng& rng, double range) {
  for (Parameter p : params) {
    for (double& x : p.value().data()) x = rng.uniform(-range, range);
  }
}

Tensor random_inputs(std::size_t rows, std::size_t cols, Rng& rng) { return init_uniform(rows, cols, rng, 1.0); }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TransformerConfig small_transformer(std::size_t layers, std::size_t d, std::size_t heads, bool positions) {
  TransformerConfig cfg;
  cfg.layers = layers;
  cfg.d_model = d;
  cfg.heads = heads;
  cfg.ffn_mult = 2;
  cfg.dropout = 0.0;
  cfg.use_positional_embedding = positions;
  cfg.max_len = 16;
  return cfg;
}

}  // namespace

TEST_CASE("lstm with all-zero weights emits zeros") {
  Rng rng(1);
  Lstm lstm({2, 6, 6, 0.0}, rng);
  for (Parameter p : lstm.parameters()) p.value().fill(0.0);
  HiddenState state;
  const Var h = lstm.forward(Var(random_inputs(10, 6, rng)), 5, 2, state, Mode::eval, rng);
  for (double x : h.value().data()) CHECK(x == 0.0);
}

TEST_CASE("lstm matches a scalar re-derivation of the cell equations") {
  Rng rng(2);
  Lstm lstm({1, 3, 3, 0.0}, rng);
  randomize(lstm.parameters(), rng, 0.8);
  const auto params = lstm.parameters();
  const Tensor& wx = params[0].value();
  const Tensor& wh = params[1].value();
  const Tensor& b = params[2].value();
  const Tensor x = random_inputs(4, 3, rng);
  HiddenState state;
  const Var out = lstm.forward(Var(x), 4, 1, state, Mode::eval, rng);

  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> h(3, 0.0), c(3, 0.0);
  for (std::size_t t = 0; t < 4; ++t) {
    std::vector<double> g(12);
    for (std::size_t j = 0; j < 12; ++j) {
      g[j] = b[j];
      for (std::size_t k = 0; k < 3; ++k) g[j] += x(t, k) * wx(k, j) + h[k] * wh(k, j);
    }
    for (std::size_t u = 0; u < 3; ++u) {
      c[u] = sig(g[3 + u]) * c[u] + sig(g[u]) * std::tanh(g[6 + u]);
      h[u] = sig(g[9 + u]) * std::tanh(c[u]);
      CHECK(out.value()(t, u) == doctest::Approx(h[u]).epsilon(1e-12));
    }
  }
  CHECK(max_abs_diff(state.h[0].data(), h) < 1e-12);
  CHECK(max_abs_diff(state.c[0].data(), c) < 1e-12);
}

TEST_CASE("lstm forget bias starts at one") {
  Rng rng(3);
  Lstm lstm({1, 4, 4, 0.0}, rng);
  const Tensor& b = lstm.parameters()[2].value();
  for (std::size_t k = 0; k < 16; ++k) CHECK(b[k] == (k >= 4 && k < 8 ? 1.0 : 0.0));
}

TEST_CASE("lstm state carry is associative") {
  Rng rng(4);
  Lstm lstm({2, 5, 5, 0.3}, rng);
  randomize(lstm.parameters(), rng, 0.6);
  const std::size_t batch = 3, steps = 9;
  const Tensor x = random_inputs(steps * batch, 5, rng);

  SUBCASE("two single steps equal one two-step chunk, bit for bit") {
    HiddenState one, split;
    const Var both = lstm.forward(slice_rows(Var(x), 0, 2 * batch), 2, batch, one, Mode::eval, rng);
    const Var first = lstm.forward(slice_rows(Var(x), 0, batch), 1, batch, split, Mode::eval, rng);
    const Var second = lstm.forward(slice_rows(Var(x), batch, batch), 1, batch, split, Mode::eval, rng);
    CHECK(std::ranges::equal(slice_rows(both, 0, batch).value().data(), first.value().data()));
    CHECK(std::ranges::equal(slice_rows(both, batch, batch).value().data(), second.value().data()));
  }
  SUBCASE("arbitrary split points") {
    HiddenState whole;
    const Var all = lstm.forward(Var(x), steps, batch, whole, Mode::eval, rng);
    for (std::size_t cut = 1; cut < steps; ++cut) {
      HiddenState carry;
      const Var a = lstm.forward(slice_rows(Var(x), 0, cut * batch), cut, batch, carry, Mode::eval, rng);
      const Var b = lstm.forward(slice_rows(Var(x), cut * batch, (steps - cut) * batch), steps - cut, batch, carry,
                                 Mode::eval, rng);
      CHECK(max_abs_diff(slice_rows(all, 0, cut * batch).value().data(), a.value().data()) < 1e-9);
      CHECK(max_abs_diff(slice_rows(all, cut * batch, (steps - cut) * batch).value().data(), b.value().data()) < 1e-9);
      CHECK(max_abs_diff(whole.h[1].data(), carry.h[1].data()) < 1e-9);
    }
  }
}

TEST_CASE("lstm gradients on a 2-layer toy") {
  Rng rng(5);
  Lstm lstm({2, 8, 8, 0.2}, rng);
  randomize(lstm.parameters(), rng, 0.5);
  Parameter x("inputs", random_inputs(5 * 2, 8, rng));
  const Tensor proj = random_inputs(5 * 2, 8, rng);
  auto params = lstm.parameters();
  params.push_back(x);
  const auto loss = [&] {
    HiddenState state;
    Rng mask(9);
    return sum(mul(lstm.forward(x.var, 5, 2, state, Mode::train, mask), Var(proj)));
  };
  const auto r = grad_check(loss, params, 1e-5);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("carried lstm state is gradient-free") {
  Rng rng(6);
  Lstm lstm({1, 4, 4, 0.0}, rng);
  Parameter first("first", random_inputs(3, 4, rng));
  Parameter second("second", random_inputs(3, 4, rng));
  HiddenState state;
  lstm.forward(first.var, 3, 1, state, Mode::train, rng);
  backward(sum(lstm.forward(second.var, 3, 1, state, Mode::train, rng)));
  for (double g : first.grad().data()) CHECK(g == 0.0);
  bool any = false;
  for (double g : second.grad().data()) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("backbone configuration errors") {
  Rng rng(7);
  CHECK_THROWS_AS(Lstm({1, 4, 5, 0.0}, rng), ConfigurationError);
  CHECK_THROWS_AS(Transformer(small_transformer(1, 6, 4, true), rng), ConfigurationError);
  Transformer t(small_transformer(1, 4, 2, true), rng);
  HiddenState none;
  CHECK_THROWS_AS(t.forward(Var(random_inputs(17, 4, rng)), 17, 1, none, Mode::eval, rng), ConfigurationError);
  Lstm lstm({1, 4, 4, 0.0}, rng);
  CHECK_THROWS_AS(lstm.forward(Var(random_inputs(6, 3, rng)), 3, 2, none, Mode::eval, rng), ConfigurationError);
}

TEST_CASE("transformer is causal") {
  Rng rng(8);
  Transformer t(small_transformer(2, 8, 2, true), rng);
  randomize(t.parameters(), rng, 0.5);
  const std::size_t steps = 7, batch = 2;
  const Tensor x = random_inputs(steps * batch, 8, rng);
  HiddenState none;
  const Var base = t.forward(Var(x), steps, batch, none, Mode::eval, rng);
  for (std::size_t j = 0; j < steps; ++j) {
    Tensor y = x;
    for (double& v : y.row(j * batch + 1)) v += 0.37;
    const Var moved = t.forward(Var(y), steps, batch, none, Mode::eval, rng);
    for (std::size_t s = 0; s < steps; ++s) {
      // stream 0 never changes; stream 1 only from position j on
      CHECK(std::ranges::equal(base.value().row(s * batch), moved.value().row(s * batch)));
      if (s < j) CHECK(std::ranges::equal(base.value().row(s * batch + 1), moved.value().row(s * batch + 1)));
    }
    CHECK_FALSE(std::ranges::equal(base.value().row(j * batch + 1), moved.value().row(j * batch + 1)));
  }
}

TEST_CASE("transformer without positions ignores the order of earlier tokens") {
  // Under a causal mask, h_t sees the set {x_0..x_{t-1}} plus x_t; reordering
  // that prefix leaves h_t unchanged unless positions are embedded.
  Rng rng(9);
  const std::size_t steps = 6;
  const Tensor x = random_inputs(steps, 4, rng);
  Tensor permuted = x;
  const std::size_t order[] = {3, 0, 4, 1, 2, 5};
  for (std::size_t s = 0; s < steps; ++s) std::ranges::copy(x.row(order[s]), permuted.row(s).begin());
  HiddenState none;
  for (bool positions : {false, true}) {
    Rng init(10);
    Transformer t(small_transformer(1, 4, 1, positions), init);
    randomize(t.parameters(), init, 0.8);
    const Var a = t.forward(Var(x), steps, 1, none, Mode::eval, rng);
    const Var b = t.forward(Var(permuted), steps, 1, none, Mode::eval, rng);
    const double diff = max_abs_diff(a.value().row(steps - 1), b.value().row(steps - 1));
    if (positions) {
      CHECK(diff > 1e-6);
    } else {
      CHECK(diff < 1e-12);
    }
  }
}

TEST_CASE("transformer gradients on a one-block toy") {
  Rng rng(11);
  Transformer t(small_transformer(1, 8, 2, true), rng);
  randomize(t.parameters(), rng, 0.5);
  Parameter x("inputs", random_inputs(4 * 2, 8, rng));
  const Tensor proj = random_inputs(4 * 2, 8, rng);
  auto params = t.parameters();
  params.push_back(x);
  const auto loss = [&] {
    HiddenState none;
    Rng mask(3);
    return sum(mul(t.forward(x.var, 4, 2, none, Mode::train, mask), Var(proj)));
  };
  CHECK(grad_check(loss, params, 1e-5).max_relative_error < 1e-4);
}

TEST_CASE("eval mode is deterministic and ignores the rng") {
  Rng init(12);
  Lstm lstm({2, 4, 4, 0.5}, init);
  TransformerConfig tcfg = small_transformer(1, 4, 2, true);
  tcfg.dropout = 0.3;
  Transformer t(tcfg, init);
  const Tensor x = random_inputs(6, 4, init);
  for (const Backbone* b : {static_cast<const Backbone*>(&lstm), static_cast<const Backbone*>(&t)}) {
    Rng r1(1), r2(999);
    HiddenState s1, s2;
    const Var a = b->forward(Var(x), 3, 2, s1, Mode::eval, r1);
    const Var c = b->forward(Var(x), 3, 2, s2, Mode::eval, r2);
    CHECK(a.value() == c.value());
    Rng r3(1), r4(2);
    HiddenState s3, s4;
    const Var d = b->forward(Var(x), 3, 2, s3, Mode::train, r3);
    const Var e = b->forward(Var(x), 3, 2, s4, Mode::train, r4);
    CHECK(d.value() != e.value());
  }
}
