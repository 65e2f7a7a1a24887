#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cachelm::testing {

/// Repetition corpus: sentences of uniformly drawn "common" words, each
/// carrying one "rare" word twice, both occurrences inside one sentence
/// of at most `max_sentence` tokens.
struct SyntheticOptions {
  std::size_t common_words = 200;
  std::size_t rare_words = 800;
  std::size_t max_sentence = 40;  // including </s>
  std::size_t min_sentence = 8;
  std::uint64_t seed = 1;
};

struct SyntheticSplit {
  std::vector<std::string> tokens;           // sentences joined, </s> after each
  std::vector<std::size_t> second_rare;      // stream index of each rare repeat
  std::vector<std::size_t> first_rare;
};

std::string common_word(std::size_t i);
std::string rare_word(std::size_t i);

/// Generates whole sentences until at least `tokens` tokens exist.
SyntheticSplit generate_split(const SyntheticOptions& opt, std::size_t tokens, std::uint64_t stream);

}  // namespace cachelm::testing
