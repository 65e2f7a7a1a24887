#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "cachelm/numcore/grad_check.hpp"
#include "cachelm/training/language_model.hpp"

namespace cachelm {

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Small model with weights drawn from uniform(-scale, scale) so the
/// nonlinearities are exercised. The Transformer variant has one block.
LanguageModel toy_model(BackboneKind kind, std::size_t vocab, std::size_t hidden, std::size_t window,
                        std::uint64_t seed, double weight_scale = 0.5, double dropout = 0.0,
                        std::size_t lstm_layers = 2);

/// Central-difference check of the whole training loss (embedding,
/// backbone, pointer logits with memory augmentation, softmax, supervised
/// loss) on V=20, H=8, L=5, chunk_len=6, two streams, every coordinate.
/// The LSTM has one layer: with two, some first-layer gradients fall to
/// ~1e-8 where central-difference roundoff alone exceeds 1e-4 relative.
GradCheckResult pipeline_grad_check(BackboneKind kind, std::uint64_t seed);

PropertyResult check_pipeline_gradients(BackboneKind kind, std::uint64_t seed);
PropertyResult check_reduction_to_baseline(std::size_t steps, std::uint64_t seed);
PropertyResult check_parameter_count(std::size_t configs, std::uint64_t seed);
PropertyResult check_normalization(std::size_t cases, std::uint64_t seed);
PropertyResult check_perplexity_identity(std::uint64_t seed);
PropertyResult check_softmax_shift_invariance(std::uint64_t seed);
PropertyResult check_sgd_zero_lr(std::uint64_t seed);
PropertyResult check_lstm_state_carry(std::uint64_t seed);
PropertyResult check_transformer_causality(std::uint64_t seed);
PropertyResult check_memory_monotone(std::uint64_t seed);

/// Runs every check above, writing one "PASS|FAIL name detail" line per
/// property to `out` as it completes.
std::vector<PropertyResult> run_selftest(std::uint64_t seed, std::ostream& out);

}  // namespace cachelm
