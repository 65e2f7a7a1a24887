#include "cachelm/training/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "cachelm/numcore/optim.hpp"

namespace cachelm {

namespace {

double mean_to_ppl(double total, std::size_t count) {
  if (count == 0) throw IngestionError("no scored positions");
  return std::exp(total / static_cast<double>(count));
}

}  // namespace

std::vector<TokenScore> score_tokens(const LanguageModel& model, std::span<const int> ids, std::size_t chunk_len,
                                     std::size_t streams) {
  NoGradGuard no_grad;
  Rng unused(0);
  const PointerHead& head = model.head();
  const std::size_t v = model.vocab_size();
  HiddenState state;
  std::vector<TokenScore> out;
  for (const ChunkBatch& cb : batchify(ids, streams, chunk_len)) {
    const Var h = model.hiddens(cb.inputs, cb.steps, cb.batch, state, Mode::eval, unused);
    for (std::size_t b = 0; b < cb.batch; ++b) {
      PointerState ptr(head.window());
      for (std::size_t t = 0; t < cb.steps; ++t) {
        const auto row = h.value().row(t * cb.batch + b);
        update_state(ptr, cb.input(t, b), row, head);
        const auto q = aggregate_word_probs(softmax(pointer_logits(row, head, ptr)), ptr, v);
        const int target = cb.target(t, b);
        const double p = q[static_cast<std::size_t>(target)];
        if (!(p > 0.0)) throw NumericError("target probability underflowed to zero");
        out.push_back({cb.stream_offsets[b] + t + 1, target, -std::log(p)});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const TokenScore& a, const TokenScore& b) { return a.position < b.position; });
  return out;
}

double evaluate_perplexity(const LanguageModel& model, std::span<const int> ids, std::size_t chunk_len,
                           std::size_t streams) {
  double total = 0.0;
  const auto scores = score_tokens(model, ids, chunk_len, streams);
  for (const auto& s : scores) total += s.nll;
  return mean_to_ppl(total, scores.size());
}

double evaluate_perplexity(const Checkpoint& ckpt, const Vocabulary& stream_vocab, std::span<const int> ids,
                           std::size_t streams) {
  require_same_vocab(ckpt.vocab, stream_vocab, "evaluation stream");
  const LanguageModel model = ckpt.instantiate();
  return evaluate_perplexity(model, ids, ckpt.train.chunk_len, streams);
}

double training_objective_perplexity(const LanguageModel& model, std::span<const int> ids, std::size_t chunk_len,
                                     std::size_t streams) {
  NoGradGuard no_grad;
  Rng unused(0);
  HiddenState state;
  double total = 0.0;
  std::size_t count = 0;
  for (const ChunkBatch& cb : batchify(ids, streams, chunk_len)) {
    const auto res = model.chunk_loss(cb, state, Mode::eval, unused);
    for (double x : res.token_nll) total += x;
    count += res.token_nll.size();
  }
  return mean_to_ppl(total, count);
}

TrainResult train(LanguageModel& model, const Vocabulary& vocab, std::span<const int> train_ids,
                  std::span<const int> dev_ids, const TrainConfig& tcfg, const EpochCallback& on_epoch) {
  if (vocab.size() != model.vocab_size()) {
    throw CompatibilityError("vocabulary has " + std::to_string(vocab.size()) + " words, model expects " +
                             std::to_string(model.vocab_size()));
  }
  if (tcfg.lr0 < 0.0 || tcfg.clip_norm <= 0.0 || tcfg.lr_decay <= 0.0 || tcfg.lr_decay > 1.0) {
    throw ConfigurationError("need lr0 >= 0, clip_norm > 0 and 0 < lr_decay <= 1");
  }
  const auto batches = batchify(train_ids, tcfg.batch_streams, tcfg.chunk_len);
  const auto params = model.parameters();
  Rng rng = Rng(tcfg.seed).split(2);

  TrainResult result;
  result.initial_dev_ppl = evaluate_perplexity(model, dev_ids, tcfg.chunk_len, tcfg.eval_streams);
  result.best = Checkpoint::capture(model, vocab, tcfg);
  result.best.dev_ppl = result.initial_dev_ppl;
  result.best.rng_state = rng.state();

  double lr = tcfg.lr0;
  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    HiddenState state;
    double total = 0.0;
    std::size_t count = 0;
    try {
      for (const ChunkBatch& cb : batches) {
        const auto res = model.chunk_loss(cb, state, Mode::train, rng);
        backward(res.loss);
        sgd_step(params, lr, tcfg.clip_norm);
        for (double x : res.token_nll) total += x;
        count += res.token_nll.size();
      }
    } catch (const NumericError& e) {
      throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " + e.what(), result.best);
    }
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_ppl = mean_to_ppl(total, count);
    log.dev_ppl = evaluate_perplexity(model, dev_ids, tcfg.chunk_len, tcfg.eval_streams);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (!std::isfinite(log.dev_ppl)) {
      throw TrainingDiverged("dev perplexity is not finite after epoch " + std::to_string(epoch), result.best);
    }
    if (log.dev_ppl < result.best.dev_ppl) {
      result.best = Checkpoint::capture(model, vocab, tcfg);
      result.best.epoch = epoch;
      result.best.dev_ppl = log.dev_ppl;
      result.best.rng_state = rng.state();
    } else {
      lr *= tcfg.lr_decay;
    }
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace cachelm
