#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cachelm/backbone/backbone.hpp"
#include "cachelm/corpus/stream.hpp"
#include "cachelm/pointer/pointer.hpp"

namespace cachelm {

struct ModelConfig {
  std::size_t vocab_size = 0;
  BackboneKind backbone = BackboneKind::lstm;
  LstmConfig lstm;
  TransformerConfig transformer;
  PointerConfig pointer;

  std::size_t hidden_size() const { return backbone == BackboneKind::lstm ? lstm.hidden : transformer.d_model; }
  double dropout() const { return backbone == BackboneKind::lstm ? lstm.dropout : transformer.dropout; }
};

/// Everything needed to continue scoring a stream after a break: the
/// backbone state, the pointer cache and (for the Transformer, which has no
/// recurrent state) the recent token history that gets re-encoded.
struct CarryContext {
  HiddenState hidden;
  PointerState pointer;
  std::vector<int> history;
};

/// Tied-embedding word LM: embedding -> backbone -> pointer head.
class LanguageModel {
 public:
  LanguageModel(const ModelConfig& cfg, std::uint64_t seed);

  LanguageModel(const LanguageModel&) = delete;
  LanguageModel& operator=(const LanguageModel&) = delete;
  LanguageModel(LanguageModel&&) = default;
  LanguageModel& operator=(LanguageModel&&) = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t vocab_size() const noexcept { return cfg_.vocab_size; }
  std::size_t hidden_size() const noexcept { return cfg_.hidden_size(); }
  const Backbone& backbone() const noexcept { return *backbone_; }
  const PointerHead& head() const noexcept { return *head_; }
  const Parameter& embedding() const noexcept { return embedding_; }

  std::vector<Parameter> parameters() const;
  std::size_t parameter_count() const;

  /// Top hidden vectors for a step-major block of inputs; includes the
  /// pre-softmax dropout in train mode.
  Var hiddens(std::span<const int> inputs, std::size_t steps, std::size_t batch, HiddenState& state, Mode mode,
              Rng& rng) const;

  struct ChunkLoss {
    Var loss;                       // mean -log(y . s) over positions
    std::vector<double> token_nll;  // step-major
  };

  /// Training objective for one chunk batch; pointer history starts empty.
  ChunkLoss chunk_loss(const ChunkBatch& batch, HiddenState& state, Mode mode, Rng& rng) const;

  CarryContext fresh_context() const;

  /// Consumes `inputs` one position at a time starting from `ctx` (eval
  /// mode) and returns -log q(target) for each position. `ctx` is advanced.
  std::vector<double> score(CarryContext& ctx, std::span<const int> inputs, std::span<const int> targets) const;

  /// Word distribution q over V after consuming `input` from `ctx`.
  std::vector<double> next_word_distribution(CarryContext& ctx, int input) const;

 private:
  Var context_hiddens(CarryContext& ctx, std::span<const int> inputs) const;

  ModelConfig cfg_;
  Parameter embedding_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<PointerHead> head_;
};

}  // namespace cachelm
