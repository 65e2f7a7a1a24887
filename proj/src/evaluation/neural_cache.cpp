#include "cachelm/evaluation/neural_cache.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "cachelm/corpus/stream.hpp"
#include "cachelm/numcore/errors.hpp"

namespace cachelm {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

}  // namespace

NeuralCacheResult neural_cache_adapt(const LanguageModel& model, std::span<const int> ids, std::size_t chunk_len,
                                     const NeuralCacheConfig& cfg) {
  if (model.head().window() > 0) throw ConfigurationError("the neural cache adapter needs a pointer-free checkpoint");
  if (cfg.lam < 0.0 || cfg.lam > 1.0) throw ConfigurationError("cache interpolation weight must lie in [0, 1]");
  NoGradGuard no_grad;
  Rng unused(0);
  const std::size_t v = model.vocab_size();

  struct Entry {
    std::vector<double> h;
    int next;
  };
  std::deque<Entry> cache;
  std::vector<double> p_cache(v);
  std::vector<double> weights;
  NeuralCacheResult result;
  HiddenState state;
  for (const ChunkBatch& cb : batchify(ids, 1, chunk_len)) {
    const Var h = model.hiddens(cb.inputs, cb.steps, 1, state, Mode::eval, unused);
    for (std::size_t t = 0; t < cb.steps; ++t) {
      const auto ht = h.value().row(t);
      std::vector<double> q = softmax(vocab_logits(ht, model.head()));
      if (!cache.empty() && cfg.lam > 0.0) {
        weights.resize(cache.size());
        double top = kMasked;
        for (std::size_t i = 0; i < cache.size(); ++i) {
          weights[i] = cfg.theta * dot(ht, cache[i].h);
          top = std::max(top, weights[i]);
        }
        double norm = 0.0;
        for (double& w : weights) norm += (w = std::exp(w - top));
        std::fill(p_cache.begin(), p_cache.end(), 0.0);
        for (std::size_t i = 0; i < cache.size(); ++i) {
          p_cache[static_cast<std::size_t>(cache[i].next)] += weights[i] / norm;
        }
        for (std::size_t w = 0; w < v; ++w) q[w] = (1.0 - cfg.lam) * q[w] + cfg.lam * p_cache[w];
      }
      double mass = 0.0;
      for (double x : q) mass += x;
      result.max_mass_error = std::max(result.max_mass_error, std::abs(mass - 1.0));

      const int target = cb.target(t, 0);
      const double p = q[static_cast<std::size_t>(target)];
      if (!(p > 0.0)) throw NumericError("target probability underflowed to zero");
      result.token_nll.push_back(-std::log(p));

      if (cfg.cache_len > 0) {
        if (cache.size() == cfg.cache_len) cache.pop_front();
        cache.push_back({std::vector<double>(ht.begin(), ht.end()), target});
      }
    }
  }
  double total = 0.0;
  for (double x : result.token_nll) total += x;
  result.ppl = std::exp(total / static_cast<double>(result.token_nll.size()));
  return result;
}

std::vector<CacheGridPoint> cache_grid_search(const LanguageModel& model, std::span<const int> ids,
                                              std::size_t chunk_len, std::size_t cache_len,
                                              std::span<const double> thetas, std::span<const double> lams) {
  std::vector<CacheGridPoint> points;
  for (double theta : thetas) {
    for (double lam : lams) {
      const auto r = neural_cache_adapt(model, ids, chunk_len, {cache_len, theta, lam});
      points.push_back({theta, lam, r.ppl});
    }
  }
  std::stable_sort(points.begin(), points.end(),
                   [](const CacheGridPoint& a, const CacheGridPoint& b) { return a.ppl < b.ppl; });
  return points;
}

}  // namespace cachelm
