#include "cachelm/evaluation/rescore.hpp"

#include <fstream>
#include <sstream>

#include "cachelm/numcore/errors.hpp"
#include "json.hpp"

namespace cachelm {

std::vector<NBestList> read_nbest(std::istream& in) {
  std::vector<NBestList> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      NBestList list;
      list.utt = j.at("utt").is_string() ? j.at("utt").get<std::string>() : j.at("utt").dump();
      list.conv = j.contains("conv") ? (j.at("conv").is_string() ? j.at("conv").get<std::string>() : j.at("conv").dump())
                                     : list.utt;
      for (const auto& h : j.at("hyps")) {
        Hypothesis hyp;
        hyp.words = h.at("words").get<std::vector<std::string>>();
        hyp.score = h.at("score").get<double>();
        if (h.contains("ac") && !h.at("ac").is_null()) hyp.acoustic = h.at("ac").get<double>();
        list.hyps.push_back(std::move(hyp));
      }
      if (list.hyps.empty()) throw IngestionError("utterance " + list.utt + " has no hypotheses");
      out.push_back(std::move(list));
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError("n-best line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<NBestList> read_nbest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open n-best file " + path.string());
  return read_nbest(in);
}

double sentence_logprob(const LanguageModel& model, const Vocabulary& vocab, CarryContext& ctx,
                        const std::vector<std::string>& words) {
  std::vector<int> inputs{vocab.eos_id()};
  std::vector<int> targets;
  for (const auto& w : words) {
    const int id = vocab.id(w);
    inputs.push_back(id);
    targets.push_back(id);
  }
  targets.push_back(vocab.eos_id());
  double lp = 0.0;
  for (double nll : model.score(ctx, inputs, targets)) lp -= nll;
  return lp;
}

std::vector<RescoreChoice> rescore(const LanguageModel& model, const Vocabulary& vocab,
                                   const std::vector<NBestList>& nbest, const RescoreConfig& cfg) {
  if (vocab.size() != model.vocab_size()) throw CompatibilityError("vocabulary does not match the model");
  std::map<std::string, CarryContext> carried;
  std::vector<RescoreChoice> out;
  for (const NBestList& list : nbest) {
    if (list.hyps.empty()) throw IngestionError("utterance " + list.utt + " has no hypotheses");
    auto it = carried.find(list.conv);
    if (it == carried.end()) it = carried.emplace(list.conv, model.fresh_context()).first;
    const CarryContext start = cfg.state_carry ? it->second : model.fresh_context();

    RescoreChoice choice;
    choice.utt = list.utt;
    choice.conv = list.conv;
    for (std::size_t k = 0; k < list.hyps.size(); ++k) {
      const Hypothesis& hyp = list.hyps[k];
      CarryContext ctx = start;
      const double lp = sentence_logprob(model, vocab, ctx, hyp.words);
      const double total = hyp.score + cfg.lm_weight * lp + cfg.wip * static_cast<double>(hyp.words.size());
      choice.lm_logprob.push_back(lp);
      choice.totals.push_back(total);
      if (total > choice.totals[choice.best]) choice.best = k;
    }
    choice.words = list.hyps[choice.best].words;

    CarryContext next = start;
    sentence_logprob(model, vocab, next, choice.words);
    it->second = std::move(next);
    out.push_back(std::move(choice));
  }
  return out;
}

std::map<std::string, std::vector<std::string>> read_references(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open reference file " + path.string());
  std::map<std::string, std::vector<std::string>> refs;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::string utt;
    if (!(words >> utt)) continue;
    auto& ref = refs[utt];
    ref.clear();
    for (std::string w; words >> w;) ref.push_back(w);
  }
  return refs;
}

std::size_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

WerResult word_error_rate(const std::vector<RescoreChoice>& choices,
                          const std::map<std::string, std::vector<std::string>>& refs) {
  WerResult r;
  for (const auto& c : choices) {
    const auto it = refs.find(c.utt);
    if (it == refs.end()) throw IngestionError("no reference for utterance " + c.utt);
    r.errors += edit_distance(it->second, c.words);
    r.ref_words += it->second.size();
  }
  return r;
}

}  // namespace cachelm
