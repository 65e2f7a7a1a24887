#include "cachelm/cli/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cachelm/numcore/optim.hpp"
#include "cachelm/training/checkpoint.hpp"
#include "cachelm/training/trainer.hpp"

namespace cachelm {

namespace {

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(3);
  s << x;
  return s.str();
}

std::vector<int> random_ids(std::size_t n, std::size_t vocab, Rng& rng) {
  std::vector<int> ids(n);
  // Bias towards a few ids so that history matches are common.
  for (int& id : ids) {
    const std::size_t range = rng.uniform() < 0.5 ? std::min<std::size_t>(vocab, 4) : vocab;
    id = static_cast<int>(rng.below(range));
  }
  return ids;
}

ChunkBatch random_batch(std::size_t steps, std::size_t batch, std::size_t vocab, Rng& rng) {
  ChunkBatch cb;
  cb.steps = steps;
  cb.batch = batch;
  cb.inputs = random_ids(steps * batch, vocab, rng);
  cb.targets = random_ids(steps * batch, vocab, rng);
  cb.stream_offsets.assign(batch, 0);
  return cb;
}

// Plain softmax output layer written out with scalar loops.
std::vector<double> plain_softmax_oracle(std::span<const double> h, const Tensor& w, const Tensor& b) {
  std::vector<double> z(w.rows());
  double top = -INFINITY;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < h.size(); ++k) s += w(i, k) * h[k];
    z[i] = s;
    top = std::max(top, s);
  }
  double norm = 0.0;
  for (double& x : z) norm += (x = std::exp(x - top));
  for (double& x : z) x /= norm;
  return z;
}

}  // namespace

LanguageModel toy_model(BackboneKind kind, std::size_t vocab, std::size_t hidden, std::size_t window,
                        std::uint64_t seed, double weight_scale, double dropout, std::size_t lstm_layers) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.backbone = kind;
  cfg.lstm = {lstm_layers, hidden, hidden, dropout};
  cfg.transformer.layers = 1;
  cfg.transformer.d_model = hidden;
  cfg.transformer.heads = 2;
  cfg.transformer.ffn_mult = 2;
  cfg.transformer.dropout = dropout;
  cfg.transformer.max_len = 32;
  cfg.pointer.enabled = window > 0;
  cfg.pointer.window = window;
  LanguageModel m(cfg, seed);
  Rng rng(seed ^ 0x5eedULL);
  for (Parameter p : m.parameters()) {
    for (double& x : p.value().data()) x = rng.uniform(-weight_scale, weight_scale);
  }
  return m;
}

GradCheckResult pipeline_grad_check(BackboneKind kind, std::uint64_t seed) {
  const std::size_t vocab = 20, hidden = 8, window = 5, steps = 6, batch = 2;
  const LanguageModel m = toy_model(kind, vocab, hidden, window, seed, 1.0, 0.1, 1);
  Rng data(seed + 1);
  const ChunkBatch cb = random_batch(steps, batch, vocab, data);
  const auto loss = [&] {
    HiddenState state;
    Rng dropout_rng(seed + 2);
    return m.chunk_loss(cb, state, Mode::train, dropout_rng).loss;
  };
  return grad_check(loss, m.parameters(), 1e-4);
}

PropertyResult check_pipeline_gradients(BackboneKind kind, std::uint64_t seed) {
  const auto r = pipeline_grad_check(kind, seed);
  return {"gradient_pipeline_" + to_string(kind), r.max_relative_error < 1e-4,
          "max_rel_err=" + fmt(r.max_relative_error) + " probes=" + std::to_string(r.probes) +
              " worst=" + r.worst_parameter};
}

PropertyResult check_reduction_to_baseline(std::size_t steps, std::uint64_t seed) {
  const std::size_t vocab = 30, hidden = 12;
  const LanguageModel plain = toy_model(BackboneKind::lstm, vocab, hidden, 0, seed);
  ModelConfig cfg = plain.config();
  cfg.pointer.enabled = true;
  cfg.pointer.window = 0;
  LanguageModel zero_window(cfg, seed + 7);
  load_parameters(zero_window, Checkpoint::capture(plain, Vocabulary(), {}).params);

  Rng rng(seed);
  const auto ids = random_ids(steps + 1, vocab, rng);
  CarryContext ca = plain.fresh_context(), cb = zero_window.fresh_context();
  bool identical = true;
  double oracle_gap = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const auto qa = plain.next_word_distribution(ca, ids[t]);
    const auto qb = zero_window.next_word_distribution(cb, ids[t]);
    identical = identical && qa == qb;
  }
  // Losses from the chunked training graph, compared bitwise and against a
  // scalar plain-softmax oracle driven by the same hidden states.
  const std::size_t chunk_len = std::max<std::size_t>(1, steps / 10);
  HiddenState sa, sb;
  Rng unused(0);
  NoGradGuard no_grad;
  for (const ChunkBatch& c : batchify(ids, 1, chunk_len)) {
    HiddenState before = sa;
    const auto la = plain.chunk_loss(c, sa, Mode::eval, unused);
    const auto lb = zero_window.chunk_loss(c, sb, Mode::eval, unused);
    identical = identical && la.token_nll == lb.token_nll;
    const Var h = plain.hiddens(c.inputs, c.steps, 1, before, Mode::eval, unused);
    for (std::size_t t = 0; t < c.steps; ++t) {
      const auto y = plain_softmax_oracle(h.value().row(t), plain.embedding().value(), plain.head().bias().value());
      oracle_gap = std::max(oracle_gap, std::abs(-std::log(y[static_cast<std::size_t>(c.target(t, 0))]) - la.token_nll[t]));
    }
  }
  return {"reduction_to_baseline", identical && oracle_gap < 1e-12,
          std::string(identical ? "bitwise_identical" : "MISMATCH") + " steps=" + std::to_string(steps) +
              " oracle_gap=" + fmt(oracle_gap)};
}

PropertyResult check_parameter_count(std::size_t configs, std::uint64_t seed) {
  Rng rng(seed);
  bool ok = true;
  std::ostringstream detail;
  for (std::size_t i = 0; i < configs; ++i) {
    const std::size_t h = 1 + rng.below(48), l = 1 + rng.below(120), v = 2 + rng.below(200);
    ModelConfig cfg;
    cfg.vocab_size = v;
    cfg.lstm = {1, h, h, 0.0};
    cfg.pointer = {true, l, true, {}};
    const std::size_t with = LanguageModel(cfg, seed).parameter_count();
    cfg.pointer.enabled = false;
    const std::size_t without = LanguageModel(cfg, seed).parameter_count();
    const bool match = with - without == (l + 1) * h;
    ok = ok && match;
    if (!match) detail << " H=" << h << ",L=" << l << ",V=" << v << " diff=" << with - without;
  }
  return {"parameter_count", ok, "configs=" + std::to_string(configs) + detail.str()};
}

PropertyResult check_normalization(std::size_t cases, std::uint64_t seed) {
  Rng rng(seed);
  double worst_y = 0.0, worst_q = 0.0;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t v = 1 + rng.below(60), l = rng.below(24);
    PointerState state(l);
    const std::size_t filled = rng.below(2 * l + 1);
    for (std::size_t k = 0; k < filled; ++k) {
      bool valid = rng.uniform() < 0.7;
      if (c % 3 == 0) valid = false;  // fully masked pointer
      if (c % 3 == 1) valid = true;
      state.push(static_cast<int>(rng.below(v)), 0.0, valid);
    }
    if (c % 3 == 1) {
      for (std::size_t k = 0; k < l; ++k) state.push(static_cast<int>(rng.below(v)), 0.0, true);
    }
    const double spread = c % 5 == 0 ? 500.0 : 20.0;
    std::vector<double> z(v + l);
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = i >= v && !state.valid(i - v) ? kMasked : rng.uniform(-spread, spread);
    }
    const auto y = softmax(z);
    double sy = 0.0;
    for (double x : y) sy += x;
    const auto q = aggregate_word_probs(y, state, v);
    double sq = 0.0;
    for (double x : q) sq += x;
    worst_y = std::max(worst_y, std::abs(sy - 1.0));
    worst_q = std::max(worst_q, std::abs(sq - 1.0));
  }
  return {"normalization", worst_y < 1e-6 && worst_q < 1e-6,
          "cases=" + std::to_string(cases) + " max_softmax_err=" + fmt(worst_y) + " max_aggregate_err=" + fmt(worst_q)};
}

PropertyResult check_perplexity_identity(std::uint64_t seed) {
  double worst = 0.0;
  Rng rng(seed);
  const auto ids = random_ids(601, 25, rng);
  for (BackboneKind kind : {BackboneKind::lstm, BackboneKind::transformer}) {
    for (std::size_t window : {std::size_t{0}, std::size_t{7}, std::size_t{20}}) {
      const LanguageModel m = toy_model(kind, 25, 8, window, seed + window);
      for (std::size_t streams : {std::size_t{1}, std::size_t{3}}) {
        const double a = training_objective_perplexity(m, ids, 20, streams);
        const double b = evaluate_perplexity(m, ids, 20, streams);
        worst = std::max(worst, std::abs(a - b));
      }
    }
  }
  return {"perplexity_identity", worst < 1e-9, "max_abs_diff=" + fmt(worst)};
}

PropertyResult check_softmax_shift_invariance(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < 1000; ++c) {
    std::vector<double> z(1 + rng.below(100));
    for (double& x : z) x = rng.uniform(-30, 30);
    const double shift = rng.uniform(-1000, 1000);
    auto shifted = z;
    for (double& x : shifted) x += shift;
    const auto a = softmax(z), b = softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return {"softmax_shift_invariance", worst < 1e-9, "max_abs_diff=" + fmt(worst)};
}

PropertyResult check_sgd_zero_lr(std::uint64_t seed) {
  const LanguageModel m = toy_model(BackboneKind::lstm, 20, 8, 5, seed);
  const auto before = Checkpoint::capture(m, Vocabulary(), {}).params;
  Rng rng(seed);
  HiddenState state;
  backward(m.chunk_loss(random_batch(6, 2, 20, rng), state, Mode::train, rng).loss);
  sgd_step(m.parameters(), 0.0, 5.0);
  const auto after = Checkpoint::capture(m, Vocabulary(), {}).params;
  return {"sgd_zero_lr_fixed_point", before == after, before == after ? "bitwise_identical" : "values changed"};
}

PropertyResult check_lstm_state_carry(std::uint64_t seed) {
  const LanguageModel m = toy_model(BackboneKind::lstm, 20, 8, 0, seed);
  Rng rng(seed);
  const auto ids = random_ids(12, 20, rng);
  NoGradGuard no_grad;
  HiddenState whole, split;
  const Var all = m.hiddens(ids, 12, 1, whole, Mode::eval, rng);
  const Var first = m.hiddens(std::span(ids).first(5), 5, 1, split, Mode::eval, rng);
  const Var second = m.hiddens(std::span(ids).subspan(5), 7, 1, split, Mode::eval, rng);
  double worst = 0.0;
  for (std::size_t t = 0; t < 12; ++t) {
    const auto a = all.value().row(t);
    const auto b = t < 5 ? first.value().row(t) : second.value().row(t - 5);
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  return {"lstm_state_carry", worst < 1e-9, "max_abs_diff=" + fmt(worst)};
}

PropertyResult check_transformer_causality(std::uint64_t seed) {
  const LanguageModel m = toy_model(BackboneKind::transformer, 20, 8, 0, seed);
  Rng rng(seed);
  auto ids = random_ids(10, 20, rng);
  NoGradGuard no_grad;
  HiddenState none;
  const Var before = m.hiddens(ids, 10, 1, none, Mode::eval, rng);
  bool causal = true;
  bool sensitive = false;
  for (std::size_t j = 1; j < 10; ++j) {
    auto changed = ids;
    changed[j] = (changed[j] + 1) % 20;
    const Var after = m.hiddens(changed, 10, 1, none, Mode::eval, rng);
    for (std::size_t t = 0; t < 10; ++t) {
      const bool same = std::ranges::equal(before.value().row(t), after.value().row(t));
      if (t < j && !same) causal = false;
      if (t >= j && !same) sensitive = true;
    }
  }
  return {"transformer_causality", causal && sensitive,
          std::string(causal ? "no_leak" : "future_leak") + (sensitive ? "" : " insensitive")};
}

PropertyResult check_memory_monotone(std::uint64_t seed) {
  Rng rng(seed);
  bool ok = true;
  for (int c = 0; c < 200; ++c) {
    const std::size_t v = 2 + rng.below(10), l = 1 + rng.below(6);
    PointerState base(l);
    for (std::size_t k = 0; k < l; ++k) base.push(static_cast<int>(rng.below(v)), rng.uniform(-1, 1), rng.uniform() < 0.8);
    std::size_t j = rng.below(l);
    if (!base.valid(j)) continue;
    std::vector<double> z(v + l);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = i >= v && !base.valid(i - v) ? kMasked : rng.uniform(-3, 3);
    auto raised = z;
    raised[v + j] += rng.uniform(0.01, 2.0);
    const auto y0 = softmax(z), y1 = softmax(raised);
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (i == v + j) {
        ok = ok && y1[i] > y0[i];
      } else if (!is_masked(z[i])) {
        ok = ok && y1[i] < y0[i];
      }
    }
  }
  return {"memory_monotone", ok, ok ? "200 cases" : "violated"};
}

std::vector<PropertyResult> run_selftest(std::uint64_t seed, std::ostream& out) {
  std::vector<PropertyResult> results;
  const auto record = [&](PropertyResult r) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ' ' << r.detail << '\n' << std::flush;
    results.push_back(std::move(r));
  };
  record(check_pipeline_gradients(BackboneKind::lstm, seed));
  record(check_pipeline_gradients(BackboneKind::transformer, seed));
  record(check_reduction_to_baseline(1000, seed));
  record(check_parameter_count(10, seed));
  record(check_normalization(10000, seed));
  record(check_perplexity_identity(seed));
  record(check_softmax_shift_invariance(seed));
  record(check_sgd_zero_lr(seed));
  record(check_lstm_state_carry(seed));
  record(check_transformer_causality(seed));
  record(check_memory_monotone(seed));
  return results;
}

}  // namespace cachelm
