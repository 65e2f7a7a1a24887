#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cachelm {

inline constexpr std::string_view kUnkWord = "<unk>";
inline constexpr std::string_view kEosWord = "</s>";

/// Vocabulary truncation rule. top_k > 0 wins over min_count and caps the
/// total size (including the two special tokens).
struct VocabPolicy {
  std::size_t min_count = 1;
  std::size_t top_k = 0;
};

/// Dense word <-> id map. Ids are ordered by descending training frequency,
/// ties broken lexicographically; <unk> and </s> are always present.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Throws IngestionError on empty input.
  static Vocabulary build(std::span<const std::string> training_tokens, const VocabPolicy& policy);
  /// Entries in id order: (word, training frequency).
  static Vocabulary from_entries(std::vector<std::pair<std::string, std::uint64_t>> entries);

  std::size_t size() const noexcept { return words_.size(); }
  int unk_id() const noexcept { return unk_id_; }
  int eos_id() const noexcept { return eos_id_; }

  bool contains(std::string_view word) const;
  /// Id of `word`, or unk_id() for out-of-vocabulary words.
  int id(std::string_view word) const;
  const std::string& word(int id) const;
  std::span<const std::uint64_t> train_freq() const noexcept { return freq_; }

  std::vector<int> encode(std::span<const std::string> words) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  /// FNV-1a over "word\tid\n" lines in id order.
  std::uint64_t hash() const;
  std::string hash_hex() const;

  /// Text form: one "word<TAB>id<TAB>train_freq" line per id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  void index();

  std::vector<std::string> words_;
  std::vector<std::uint64_t> freq_;
  std::unordered_map<std::string, int> ids_;
  int unk_id_ = -1;
  int eos_id_ = -1;
};

/// Whitespace-tokenizes one sentence per line and appends </s> to each
/// non-blank line.
std::vector<std::string> tokenize_lines(std::string_view text);
std::vector<std::string> read_corpus(const std::filesystem::path& path);

}  // namespace cachelm
