#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "cachelm/numcore/autograd.hpp"
#include "cachelm/numcore/ops.hpp"
#include "cachelm/numcore/rng.hpp"

namespace cachelm {

enum class BackboneKind { lstm, transformer };

std::string to_string(BackboneKind kind);
BackboneKind backbone_kind_from_string(const std::string& s);

struct LstmConfig {
  std::size_t layers = 2;
  std::size_t hidden = 650;
  std::size_t embed = 650;  // must equal hidden: the output layer is the tied embedding
  double dropout = 0.5;
};

struct TransformerConfig {
  std::size_t layers = 6;
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t ffn_mult = 4;
  double dropout = 0.1;
  bool use_positional_embedding = true;
  std::size_t max_len = 128;  // size of the learned position table
};

/// Recurrent state carried between chunks, one B x H tensor per layer.
/// Always gradient-free. Empty means "start from zeros".
struct HiddenState {
  std::vector<Tensor> h;
  std::vector<Tensor> c;

  bool empty() const noexcept { return h.empty(); }
  void reset() {
    h.clear();
    c.clear();
  }
};

/// Produces per-position hidden vectors from embedded inputs.
/// `inputs` is (steps * batch) x H, step-major.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::vector<Parameter> parameters() const = 0;
  virtual std::size_t hidden_size() const = 0;
  /// True when state flows from one chunk to the next.
  virtual bool carries_state() const = 0;

  virtual Var forward(const Var& inputs, std::size_t steps, std::size_t batch, HiddenState& state, Mode mode,
                      Rng& rng) const = 0;
};

class Lstm final : public Backbone {
 public:
  Lstm(const LstmConfig& cfg, Rng& init_rng);

  std::vector<Parameter> parameters() const override;
  std::size_t hidden_size() const override { return cfg_.hidden; }
  bool carries_state() const override { return true; }

  /// Stacked LSTM over one chunk. Updates `state` to the final position of
  /// each stream (detached).
  Var forward(const Var& inputs, std::size_t steps, std::size_t batch, HiddenState& state, Mode mode,
              Rng& rng) const override;

  const LstmConfig& config() const noexcept { return cfg_; }

 private:
  struct Layer {
    Parameter wx;  // in x 4H
    Parameter wh;  // H x 4H
    Parameter b;   // 1 x 4H, forget slice starts at 1
  };

  LstmConfig cfg_;
  std::vector<Layer> layers_;
};

/// Decoder-only pre-norm Transformer. Chunks are encoded independently;
/// `state` is ignored.
class Transformer final : public Backbone {
 public:
  Transformer(const TransformerConfig& cfg, Rng& init_rng);

  std::vector<Parameter> parameters() const override;
  std::size_t hidden_size() const override { return cfg_.d_model; }
  bool carries_state() const override { return false; }

  Var forward(const Var& inputs, std::size_t steps, std::size_t batch, HiddenState& state, Mode mode,
              Rng& rng) const override;

  const TransformerConfig& config() const noexcept { return cfg_; }

 private:
  struct Block {
    Parameter ln1_gain, ln1_bias;
    Parameter w_qkv;
    Parameter w_out, b_out;
    Parameter ln2_gain, ln2_bias;
    Parameter w_ff1, b_ff1;
    Parameter w_ff2, b_ff2;
  };

  TransformerConfig cfg_;
  Parameter positions_;
  std::vector<Block> blocks_;
  Parameter final_gain_, final_bias_;
};

}  // namespace cachelm
