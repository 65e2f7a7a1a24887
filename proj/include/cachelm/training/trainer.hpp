#pragma once

#include <functional>
#include <span>
#include <vector>

#include "cachelm/numcore/errors.hpp"
#include "cachelm/training/checkpoint.hpp"

namespace cachelm {

struct EpochLog {
  std::size_t epoch = 0;
  double train_ppl = 0.0;
  double dev_ppl = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> history;
  double initial_dev_ppl = 0.0;
};

/// Raised when the loss or a gradient stops being finite. Carries the best
/// checkpoint seen before the failure.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const noexcept { return last_good_; }

 private:
  Checkpoint last_good_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// SGD over `batch_streams` parallel streams of `chunk_len` chunks with
/// detached LSTM state carried across chunks. After every epoch the dev
/// perplexity is measured; the learning rate is multiplied by lr_decay when
/// it fails to improve. Returns the best-dev checkpoint (epoch 0 is the
/// initial model). `model` holds the final (not necessarily best) weights.
TrainResult train(LanguageModel& model, const Vocabulary& vocab, std::span<const int> train_ids,
                  std::span<const int> dev_ids, const TrainConfig& tcfg, const EpochCallback& on_epoch = {});

/// -log q(target) for every chunked target position, in stream order
/// (eval mode, fresh pointer history per chunk, LSTM state carried).
struct TokenScore {
  std::size_t position = 0;  // index of the target in the stream
  int target = 0;
  double nll = 0.0;
};

std::vector<TokenScore> score_tokens(const LanguageModel& model, std::span<const int> ids, std::size_t chunk_len,
                                     std::size_t streams = 1);

/// exp(mean -log q(target)) over the chunked stream.
double evaluate_perplexity(const LanguageModel& model, std::span<const int> ids, std::size_t chunk_len,
                           std::size_t streams = 1);

/// Same metric from a checkpoint; `stream_vocab` is the vocabulary the ids
/// were encoded with and must match the checkpoint's.
double evaluate_perplexity(const Checkpoint& ckpt, const Vocabulary& stream_vocab, std::span<const int> ids,
                           std::size_t streams = 1);

/// exp(mean chunk_loss) computed with the training graph in eval mode.
double training_objective_perplexity(const LanguageModel& model, std::span<const int> ids, std::size_t chunk_len,
                                     std::size_t streams = 1);

}  // namespace cachelm
