#include "cachelm/corpus/vocabulary.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cachelm/numcore/errors.hpp"

namespace cachelm {

Vocabulary Vocabulary::build(std::span<const std::string> training_tokens, const VocabPolicy& policy) {
  if (training_tokens.empty()) throw IngestionError("cannot build a vocabulary from empty text");

  std::map<std::string, std::uint64_t, std::less<>> counts;
  for (const auto& w : training_tokens) ++counts[w];
  const std::string unk(kUnkWord), eos(kEosWord);
  counts.try_emplace(unk, 0);
  counts.try_emplace(eos, 0);

  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  auto by_freq = [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  };
  std::stable_sort(ranked.begin(), ranked.end(), by_freq);

  std::uint64_t unk_count = counts[unk];
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  std::size_t regular_budget = ranked.size();
  if (policy.top_k > 0) {
    if (policy.top_k < 2) throw ConfigurationError("top_k must leave room for <unk> and </s>");
    regular_budget = policy.top_k - 2;
  }
  for (const auto& [word, n] : ranked) {
    if (word == unk || word == eos) continue;
    const bool keep = policy.top_k > 0 ? kept.size() < regular_budget : n >= policy.min_count;
    if (keep) {
      kept.emplace_back(word, n);
    } else {
      unk_count += n;
    }
  }
  kept.emplace_back(unk, unk_count);
  kept.emplace_back(eos, counts[eos]);
  std::stable_sort(kept.begin(), kept.end(), by_freq);
  return from_entries(std::move(kept));
}

Vocabulary Vocabulary::from_entries(std::vector<std::pair<std::string, std::uint64_t>> entries) {
  Vocabulary v;
  v.words_.reserve(entries.size());
  v.freq_.reserve(entries.size());
  for (auto& [w, n] : entries) {
    v.words_.push_back(std::move(w));
    v.freq_.push_back(n);
  }
  v.index();
  return v;
}

void Vocabulary::index() {
  ids_.clear();
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!ids_.emplace(words_[i], static_cast<int>(i)).second) {
      throw IngestionError("duplicate vocabulary entry '" + words_[i] + "'");
    }
  }
  const auto unk = ids_.find(std::string(kUnkWord));
  const auto eos = ids_.find(std::string(kEosWord));
  if (unk == ids_.end() || eos == ids_.end()) throw IngestionError("vocabulary lacks <unk> or </s>");
  unk_id_ = unk->second;
  eos_id_ = eos->second;
}

bool Vocabulary::contains(std::string_view word) const { return ids_.contains(std::string(word)); }

int Vocabulary::id(std::string_view word) const {
  const auto it = ids_.find(std::string(word));
  return it == ids_.end() ? unk_id_ : it->second;
}

const std::string& Vocabulary::word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

std::vector<int> Vocabulary::encode(std::span<const std::string> words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(word(i));
  return out;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < words_.size(); ++i) {
    feed(words_[i]);
    feed("\t");
    feed(std::to_string(i));
    feed("\n");
  }
  return h;
}

std::string Vocabulary::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write vocabulary to " + path.string());
  for (std::size_t i = 0; i < words_.size(); ++i) out << words_[i] << '\t' << i << '\t' << freq_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read vocabulary " + path.string());
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string word;
    std::size_t id = 0;
    std::uint64_t freq = 0;
    if (!std::getline(fields, word, '\t') || !(fields >> id >> freq) || id != entries.size()) {
      throw IngestionError("malformed vocabulary line " + std::to_string(entries.size() + 1) + " in " +
                           path.string());
    }
    entries.emplace_back(std::move(word), freq);
  }
  return from_entries(std::move(entries));
}

std::vector<std::string> tokenize_lines(std::string_view text) {
  std::vector<std::string> tokens;
  std::istringstream lines{std::string(text)};
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream words(line);
    std::string w;
    bool any = false;
    while (words >> w) {
      tokens.push_back(std::move(w));
      any = true;
    }
    if (any) tokens.emplace_back(kEosWord);
  }
  return tokens;
}

std::vector<std::string> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open corpus file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return tokenize_lines(buf.str());
}

}  // namespace cachelm
