#include "synthetic.hpp"

#include "cachelm/corpus/vocabulary.hpp"
#include "cachelm/numcore/rng.hpp"

namespace cachelm::testing {

std::string common_word(std::size_t i) { return "c" + std::to_string(i); }
std::string rare_word(std::size_t i) { return "r" + std::to_string(i); }

SyntheticSplit generate_split(const SyntheticOptions& opt, std::size_t tokens, std::uint64_t stream) {
  Rng rng = Rng(opt.seed).split(stream);
  SyntheticSplit out;
  while (out.tokens.size() < tokens) {
    // words before </s>
    const std::size_t len = opt.min_sentence - 1 + rng.below(opt.max_sentence - opt.min_sentence + 1);
    const std::string rare = rare_word(rng.below(opt.rare_words));
    const std::size_t first = rng.below(len - 1);
    const std::size_t second = first + 1 + rng.below(len - first - 1);
    const std::size_t base = out.tokens.size();
    for (std::size_t k = 0; k < len; ++k) {
      if (k == first || k == second) {
        out.tokens.push_back(rare);
      } else {
        out.tokens.push_back(common_word(rng.below(opt.common_words)));
      }
    }
    out.tokens.emplace_back(kEosWord);
    out.first_rare.push_back(base + first);
    out.second_rare.push_back(base + second);
  }
  return out;
}

}  // namespace cachelm::testing
