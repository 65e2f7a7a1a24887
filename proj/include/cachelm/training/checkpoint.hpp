#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cachelm/corpus/vocabulary.hpp"
#include "cachelm/training/language_model.hpp"
#include "json.hpp"

namespace cachelm {

struct TrainConfig {
  double lr0 = 1.0;
  double lr_decay = 0.5;
  double clip_norm = 5.0;
  std::size_t epochs = 10;
  std::size_t batch_streams = 20;
  std::size_t chunk_len = 100;
  std::size_t eval_streams = 1;
  std::uint64_t seed = 1;
  int precision = 64;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Snapshot of a trained model.
///
/// File layout (little-endian):
///   "CACHELM\0" magic, u32 format version,
///   u64 length + UTF-8 JSON header (model/train/run config, vocabulary,
///   vocabulary hash, epoch, dev perplexity, rng state),
///   u64 parameter count, then per parameter: u32 name length, name,
///   u32 rank, u64 dims..., raw f64 values.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig model;
  TrainConfig train;
  nlohmann::json run = nlohmann::json::object();  // free-form effective run configuration
  Vocabulary vocab;
  std::vector<std::pair<std::string, Tensor>> params;
  std::size_t epoch = 0;
  double dev_ppl = 0.0;
  std::string rng_state;

  /// Captures the current values of `m`'s parameters.
  static Checkpoint capture(const LanguageModel& m, const Vocabulary& vocab, const TrainConfig& tcfg);

  /// Builds a model with the stored configuration and weights.
  LanguageModel instantiate() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Copies stored values into `m`. Throws CompatibilityError on any
/// name/shape mismatch.
void load_parameters(const LanguageModel& m, const std::vector<std::pair<std::string, Tensor>>& params);

/// Throws CompatibilityError naming both hashes when the vocabularies differ.
void require_same_vocab(const Vocabulary& expected, const Vocabulary& actual, const std::string& what);

}  // namespace cachelm
