#include "cachelm/backbone/backbone.hpp"

#include <cmath>

#include "cachelm/numcore/errors.hpp"

namespace cachelm {

std::string to_string(BackboneKind kind) { return kind == BackboneKind::lstm ? "lstm" : "transformer"; }

BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "lstm") return BackboneKind::lstm;
  if (s == "transformer") return BackboneKind::transformer;
  throw ConfigurationError("unknown backbone '" + s + "' (expected lstm or transformer)");
}

// ---------------------------------------------------------------- LSTM

Lstm::Lstm(const LstmConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  if (cfg.layers == 0 || cfg.hidden == 0) throw ConfigurationError("lstm needs at least one layer and unit");
  if (cfg.embed != cfg.hidden) {
    throw ConfigurationError("tied embeddings require embed == hidden (" + std::to_string(cfg.embed) +
                             " != " + std::to_string(cfg.hidden) + ")");
  }
  const std::size_t h = cfg.hidden;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string prefix = "lstm." + std::to_string(l) + ".";
    const std::size_t in = l == 0 ? cfg.embed : h;
    Tensor bias = Tensor::zeros(1, 4 * h);
    for (std::size_t k = h; k < 2 * h; ++k) bias[k] = 1.0;
    layers_.push_back({Parameter(prefix + "wx", init_uniform(in, 4 * h, init_rng)),
                       Parameter(prefix + "wh", init_uniform(h, 4 * h, init_rng)),
                       Parameter(prefix + "b", std::move(bias))});
  }
}

std::vector<Parameter> Lstm::parameters() const {
  std::vector<Parameter> out;
  for (const auto& l : layers_) {
    out.push_back(l.wx);
    out.push_back(l.wh);
    out.push_back(l.b);
  }
  return out;
}

Var Lstm::forward(const Var& inputs, std::size_t steps, std::size_t batch, HiddenState& state, Mode mode,
                  Rng& rng) const {
  const std::size_t h = cfg_.hidden;
  if (inputs.rows() != steps * batch || inputs.cols() != cfg_.embed) {
    throw ConfigurationError("lstm input " + inputs.value().shape_string() + " does not match " +
                             std::to_string(steps) + "x" + std::to_string(batch) + " steps of width " +
                             std::to_string(cfg_.embed));
  }
  if (!state.empty()) {
    if (state.h.size() != layers_.size() || state.h.front().rows() != batch || state.h.front().cols() != h) {
      throw ConfigurationError("carried lstm state does not match layers/batch/hidden");
    }
  } else {
    state.h.assign(layers_.size(), Tensor::zeros(batch, h));
    state.c.assign(layers_.size(), Tensor::zeros(batch, h));
  }

  Var x = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (l > 0) x = dropout(x, cfg_.dropout, mode, rng);
    const Var projected = add_row(matmul(x, layer.wx.var), layer.b.var);
    Var h_t(state.h[l]);
    Var c_t(state.c[l]);
    std::vector<Var> outputs;
    outputs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const Var gates = add(slice_rows(projected, t * batch, batch), matmul(h_t, layer.wh.var));
      const Var hc = lstm_cell(gates, c_t);
      h_t = slice_cols(hc, 0, h);
      c_t = slice_cols(hc, h, h);
      outputs.push_back(h_t);
    }
    state.h[l] = h_t.value();
    state.c[l] = c_t.value();
    x = concat_rows(outputs);
  }
  return x;
}

// ---------------------------------------------------------- Transformer

Transformer::Transformer(const TransformerConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  const std::size_t d = cfg.d_model;
  if (cfg.layers == 0 || d == 0) throw ConfigurationError("transformer needs at least one layer and unit");
  if (cfg.heads == 0 || d % cfg.heads != 0) {
    throw ConfigurationError("d_model " + std::to_string(d) + " is not divisible by heads " +
                             std::to_string(cfg.heads));
  }
  if (cfg.max_len == 0) throw ConfigurationError("transformer max_len must be positive");
  const std::size_t f = cfg.ffn_mult * d;
  auto ones = [](std::size_t n) { return Tensor(Shape{1, n}, 1.0); };
  if (cfg.use_positional_embedding) positions_ = Parameter("transformer.positions", init_uniform(cfg.max_len, d, init_rng));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "transformer." + std::to_string(l) + ".";
    blocks_.push_back({Parameter(p + "ln1.gain", ones(d)), Parameter(p + "ln1.bias", Tensor::zeros(1, d)),
                       Parameter(p + "attn.w_qkv", init_uniform(d, 3 * d, init_rng)),
                       Parameter(p + "attn.w_out", init_uniform(d, d, init_rng)),
                       Parameter(p + "attn.b_out", Tensor::zeros(1, d)), Parameter(p + "ln2.gain", ones(d)),
                       Parameter(p + "ln2.bias", Tensor::zeros(1, d)),
                       Parameter(p + "ffn.w1", init_uniform(d, f, init_rng)),
                       Parameter(p + "ffn.b1", Tensor::zeros(1, f)),
                       Parameter(p + "ffn.w2", init_uniform(f, d, init_rng)),
                       Parameter(p + "ffn.b2", Tensor::zeros(1, d))});
  }
  final_gain_ = Parameter("transformer.final.gain", ones(d));
  final_bias_ = Parameter("transformer.final.bias", Tensor::zeros(1, d));
}

std::vector<Parameter> Transformer::parameters() const {
  std::vector<Parameter> out;
  if (cfg_.use_positional_embedding) out.push_back(positions_);
  for (const auto& b : blocks_) {
    for (const Parameter* p : {&b.ln1_gain, &b.ln1_bias, &b.w_qkv, &b.w_out, &b.b_out, &b.ln2_gain,
                               &b.ln2_bias, &b.w_ff1, &b.b_ff1, &b.w_ff2, &b.b_ff2}) {
      out.push_back(*p);
    }
  }
  out.push_back(final_gain_);
  out.push_back(final_bias_);
  return out;
}

Var Transformer::forward(const Var& inputs, std::size_t steps, std::size_t batch, HiddenState& /*state*/,
                         Mode mode, Rng& rng) const {
  if (steps > cfg_.max_len) {
    throw ConfigurationError("chunk of " + std::to_string(steps) + " positions exceeds the transformer's " +
                             std::to_string(cfg_.max_len) + "-entry position table");
  }
  if (inputs.rows() != steps * batch || inputs.cols() != cfg_.d_model) {
    throw ConfigurationError("transformer input " + inputs.value().shape_string() + " does not match " +
                             std::to_string(steps) + "x" + std::to_string(batch) + " steps of width " +
                             std::to_string(cfg_.d_model));
  }
  Var x = inputs;
  if (cfg_.use_positional_embedding) {
    std::vector<int> pos(steps * batch);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t b = 0; b < batch; ++b) pos[t * batch + b] = static_cast<int>(t);
    }
    x = add(x, embedding(positions_.var, pos));
  }
  for (const Block& blk : blocks_) {
    const Var a_in = layer_norm(x, blk.ln1_gain.var, blk.ln1_bias.var);
    // No projection bias: a key bias cancels in the softmax.
    const Var qkv = matmul(a_in, blk.w_qkv.var);
    const Var attn = causal_self_attention(qkv, steps, batch, cfg_.heads);
    const Var a_out = add_row(matmul(attn, blk.w_out.var), blk.b_out.var);
    x = add(x, dropout(a_out, cfg_.dropout, mode, rng));

    const Var f_in = layer_norm(x, blk.ln2_gain.var, blk.ln2_bias.var);
    const Var hidden = gelu(add_row(matmul(f_in, blk.w_ff1.var), blk.b_ff1.var));
    const Var f_out = add_row(matmul(hidden, blk.w_ff2.var), blk.b_ff2.var);
    x = add(x, dropout(f_out, cfg_.dropout, mode, rng));
  }
  return layer_norm(x, final_gain_.var, final_bias_.var);
}

}  // namespace cachelm
