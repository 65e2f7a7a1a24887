#pragma once

#include <span>
#include <vector>

#include "cachelm/training/language_model.hpp"

namespace cachelm {

struct NeuralCacheConfig {
  std::size_t cache_len = 100;
  double theta = 0.3;
  double lam = 0.1;
};

struct NeuralCacheResult {
  double ppl = 0.0;
  std::vector<double> token_nll;  // per scored target, stream order
  double max_mass_error = 0.0;    // max over steps of |sum q - 1|
};

/// Test-time cache over the hidden states of a plain (pointer-free) LM.
/// The cache holds pairs (h_i, x_{i+1}) for the last cache_len scored
/// positions; it runs continuously over the whole stream. At each step
///   p_c(w) ~ sum_i 1{x_{i+1} = w} exp(theta * h_t . h_i),
///   q = (1 - lam) p_lm + lam p_c,
/// with q = p_lm while the cache is empty. Scored positions match
/// evaluate_perplexity with one stream.
NeuralCacheResult neural_cache_adapt(const LanguageModel& model, std::span<const int> ids, std::size_t chunk_len,
                                     const NeuralCacheConfig& cfg);

struct CacheGridPoint {
  double theta = 0.0;
  double lam = 0.0;
  double ppl = 0.0;
};

/// Evaluates every (theta, lam) pair; the lowest-perplexity point comes first.
std::vector<CacheGridPoint> cache_grid_search(const LanguageModel& model, std::span<const int> ids,
                                              std::size_t chunk_len, std::size_t cache_len,
                                              std::span<const double> thetas, std::span<const double> lams);

}  // namespace cachelm
