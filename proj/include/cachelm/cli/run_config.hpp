#pragma once

#include <filesystem>
#include <istream>
#include <set>
#include <string>

#include "cachelm/corpus/vocabulary.hpp"
#include "cachelm/training/checkpoint.hpp"
#include "json.hpp"

namespace cachelm {

/// Flattened "section.key" configuration merged from a TOML-style file and
/// command-line overrides. Every key has a fixed type; unknown keys and
/// ill-typed values raise ConfigurationError.
///
/// File syntax: `[section]` headers, `key = value` lines, `#` comments.
/// Values are quoted strings, true/false/on/off, integers, reals or bare
/// words.
class RunConfig {
 public:
  RunConfig();

  void load(std::istream& in, const std::string& source = "<config>");
  void load_file(const std::filesystem::path& path);

  /// Sets one key from its textual form.
  void set(const std::string& key, const std::string& text);
  /// "key=value".
  void assign(const std::string& assignment);

  bool explicitly_set(const std::string& key) const { return explicit_.count(key) > 0; }

  std::string str(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// All keys with backbone-dependent defaults filled in.
  nlohmann::json resolved() const;
  /// One "key = value" line per key, sorted.
  std::string echo() const;

  VocabPolicy vocab_policy() const;
  ModelConfig model_config(const Vocabulary& vocab) const;
  TrainConfig train_config() const;

 private:
  const nlohmann::json& value(const std::string& key) const;

  nlohmann::json values_;
  std::set<std::string> explicit_;
};

/// Token ids named by a comma-separated list; "eos" and "unk" alias the
/// special tokens, anything else must be a vocabulary word.
std::vector<int> parse_exclude_list(const std::string& list, const Vocabulary& vocab);

}  // namespace cachelm
