#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cachelm/corpus/vocabulary.hpp"
#include "cachelm/training/language_model.hpp"

namespace cachelm {

struct Hypothesis {
  std::vector<std::string> words;
  double score = 0.0;  // first-pass total
  std::optional<double> acoustic;
};

/// One utterance's N-best list; hyps[0] is the first-pass best.
struct NBestList {
  std::string utt;
  std::string conv;
  std::vector<Hypothesis> hyps;
};

/// JSON Lines: {"utt": id, "conv": id, "hyps": [{"words": [...], "score": f, "ac": f}]}
std::vector<NBestList> read_nbest(std::istream& in);
std::vector<NBestList> read_nbest(const std::filesystem::path& path);

struct RescoreConfig {
  double lm_weight = 1.0;
  double wip = 0.0;  // word insertion penalty, per word
  bool state_carry = false;
};

struct RescoreChoice {
  std::string utt;
  std::string conv;
  std::size_t best = 0;
  std::vector<std::string> words;
  std::vector<double> totals;    // per hypothesis
  std::vector<double> lm_logprob;  // per hypothesis, natural log incl. </s>
};

/// Sum of log q over the words of `words` followed by </s>, starting from
/// `ctx` (which is advanced past the sentence). The first input is </s>,
/// matching the sentence-joined training stream.
double sentence_logprob(const LanguageModel& model, const Vocabulary& vocab, CarryContext& ctx,
                        const std::vector<std::string>& words);

/// Picks argmax of score + lm_weight * logprob + wip * |words| per
/// utterance (ties go to the lower index). With state_carry every
/// hypothesis is scored from the context left by the previous chosen
/// hypothesis of the same conversation; otherwise from a fresh context.
std::vector<RescoreChoice> rescore(const LanguageModel& model, const Vocabulary& vocab,
                                   const std::vector<NBestList>& nbest, const RescoreConfig& cfg);

/// Reference transcripts, one "utt-id word word ..." line each.
std::map<std::string, std::vector<std::string>> read_references(const std::filesystem::path& path);

/// Minimum substitutions + insertions + deletions turning ref into hyp.
std::size_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

struct WerResult {
  std::size_t errors = 0;
  std::size_t ref_words = 0;
  double wer() const { return ref_words == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(ref_words); }
};

/// Throws IngestionError when a chosen utterance has no reference.
WerResult word_error_rate(const std::vector<RescoreChoice>& choices,
                          const std::map<std::string, std::vector<std::string>>& refs);

}  // namespace cachelm
