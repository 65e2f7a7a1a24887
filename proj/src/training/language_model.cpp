#include "cachelm/training/language_model.hpp"

#include <algorithm>
#include <cmath>

#include "cachelm/numcore/errors.hpp"

namespace cachelm {

LanguageModel::LanguageModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.vocab_size < 2) throw ConfigurationError("vocabulary must hold at least the two special tokens");
  Rng init(seed);
  embedding_ = Parameter("embedding", init_uniform(cfg.vocab_size, cfg.hidden_size(), init));
  if (cfg.backbone == BackboneKind::lstm) {
    backbone_ = std::make_unique<Lstm>(cfg.lstm, init);
  } else {
    backbone_ = std::make_unique<Transformer>(cfg.transformer, init);
  }
  head_ = std::make_unique<PointerHead>(embedding_, cfg.pointer, init);
}

std::vector<Parameter> LanguageModel::parameters() const {
  std::vector<Parameter> out{embedding_};
  for (auto& p : backbone_->parameters()) out.push_back(p);
  for (auto& p : head_->parameters()) out.push_back(p);
  return out;
}

std::size_t LanguageModel::parameter_count() const { return count_parameters(parameters()); }

Var LanguageModel::hiddens(std::span<const int> inputs, std::size_t steps, std::size_t batch, HiddenState& state,
                           Mode mode, Rng& rng) const {
  const double rate = cfg_.dropout();
  Var x = dropout(cachelm::embedding(embedding_.var, inputs), rate, mode, rng);
  x = backbone_->forward(x, steps, batch, state, mode, rng);
  return dropout(x, rate, mode, rng);
}

LanguageModel::ChunkLoss LanguageModel::chunk_loss(const ChunkBatch& batch, HiddenState& state, Mode mode,
                                                   Rng& rng) const {
  const Var h = hiddens(batch.inputs, batch.steps, batch.batch, state, mode, rng);
  const Var z = chunk_logits(h, *head_, batch.inputs, batch.steps, batch.batch);
  const auto sup = chunk_supervision(*head_, batch.inputs, batch.targets, batch.steps, batch.batch);
  ChunkLoss out;
  out.loss = supervised_nll(z, sup, &out.token_nll);
  return out;
}

CarryContext LanguageModel::fresh_context() const {
  CarryContext ctx;
  ctx.pointer = PointerState(head_->window());
  return ctx;
}

Var LanguageModel::context_hiddens(CarryContext& ctx, std::span<const int> inputs) const {
  NoGradGuard no_grad;
  Rng unused(0);
  if (backbone_->carries_state()) return hiddens(inputs, inputs.size(), 1, ctx.hidden, Mode::eval, unused);

  // No recurrent state: re-encode recent history together with the new
  // tokens, keeping at least half of the position table for context.
  const std::size_t max_len = cfg_.transformer.max_len;
  const std::size_t piece_len = std::max<std::size_t>(1, max_len / 2);
  std::vector<Var> pieces;
  std::size_t done = 0;
  while (done < inputs.size()) {
    const std::size_t n = std::min(piece_len, inputs.size() - done);
    const std::size_t keep = std::min(ctx.history.size(), max_len - n);
    std::vector<int> window(ctx.history.end() - static_cast<std::ptrdiff_t>(keep), ctx.history.end());
    window.insert(window.end(), inputs.begin() + static_cast<std::ptrdiff_t>(done),
                  inputs.begin() + static_cast<std::ptrdiff_t>(done + n));
    HiddenState none;
    const Var h = hiddens(window, window.size(), 1, none, Mode::eval, unused);
    pieces.push_back(slice_rows(h, keep, n));
    ctx.history.insert(ctx.history.end(), window.end() - static_cast<std::ptrdiff_t>(n), window.end());
    if (ctx.history.size() > max_len) {
      ctx.history.erase(ctx.history.begin(), ctx.history.end() - static_cast<std::ptrdiff_t>(max_len));
    }
    done += n;
  }
  return pieces.size() == 1 ? pieces.front() : concat_rows(pieces);
}

std::vector<double> LanguageModel::score(CarryContext& ctx, std::span<const int> inputs,
                                         std::span<const int> targets) const {
  if (inputs.size() != targets.size()) throw DimensionError("score needs one target per input");
  if (inputs.empty()) return {};
  const Var h = context_hiddens(ctx, inputs);
  std::vector<double> nll(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const auto row = h.value().row(t);
    update_state(ctx.pointer, inputs[t], row, *head_);
    const auto y = softmax(pointer_logits(row, *head_, ctx.pointer));
    const auto q = aggregate_word_probs(y, ctx.pointer, cfg_.vocab_size);
    const double p = q[static_cast<std::size_t>(targets[t])];
    if (!(p > 0.0)) throw NumericError("target probability underflowed to zero");
    nll[t] = -std::log(p);
  }
  return nll;
}

std::vector<double> LanguageModel::next_word_distribution(CarryContext& ctx, int input) const {
  const int one[] = {input};
  const Var h = context_hiddens(ctx, one);
  const auto row = h.value().row(0);
  update_state(ctx.pointer, input, row, *head_);
  return aggregate_word_probs(softmax(pointer_logits(row, *head_, ctx.pointer)), ctx.pointer, cfg_.vocab_size);
}

}  // namespace cachelm
