#include "cachelm/cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "cachelm/numcore/errors.hpp"

namespace cachelm {

namespace {

enum class Kind { text, integer, real, boolean };

struct KeySpec {
  Kind kind;
  nlohmann::json fallback;  // null: resolved from other keys
};

const std::map<std::string, KeySpec>& schema() {
  static const std::map<std::string, KeySpec> keys = {
      {"corpus.train", {Kind::text, ""}},
      {"corpus.dev", {Kind::text, ""}},
      {"corpus.test", {Kind::text, ""}},
      {"corpus.min_count", {Kind::integer, 1}},
      {"corpus.top_k", {Kind::integer, 0}},
      {"model.backbone", {Kind::text, "lstm"}},
      {"model.layers", {Kind::integer, nullptr}},
      {"model.hidden", {Kind::integer, nullptr}},
      {"model.heads", {Kind::integer, 8}},
      {"model.ffn_mult", {Kind::integer, 4}},
      {"model.dropout", {Kind::real, nullptr}},
      {"model.positional_embedding", {Kind::boolean, true}},
      {"model.max_len", {Kind::integer, nullptr}},
      {"pointer.enabled", {Kind::boolean, true}},
      {"pointer.window", {Kind::integer, nullptr}},
      {"pointer.memory_augmentation", {Kind::boolean, true}},
      {"pointer.exclude", {Kind::text, ""}},
      {"train.lr0", {Kind::real, nullptr}},
      {"train.lr_decay", {Kind::real, 0.5}},
      {"train.clip_norm", {Kind::real, 5.0}},
      {"train.epochs", {Kind::integer, 10}},
      {"train.batch_streams", {Kind::integer, 20}},
      {"train.chunk_len", {Kind::integer, 100}},
      {"train.eval_streams", {Kind::integer, 1}},
      {"train.seed", {Kind::integer, 1}},
      {"train.precision", {Kind::integer, 64}},
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

nlohmann::json parse_value(const std::string& key, const std::string& raw) {
  const KeySpec& spec = schema().at(key);
  std::string text = trim(raw);
  const bool quoted = text.size() >= 2 && (text.front() == '"' || text.front() == '\'') && text.back() == text.front();
  if (quoted) text = text.substr(1, text.size() - 2);
  auto fail = [&](const char* expected) {
    return ConfigurationError("config key " + key + " expects " + expected + ", got '" + raw + "'");
  };
  switch (spec.kind) {
    case Kind::text:
      return text;
    case Kind::boolean:
      if (!quoted && (text == "true" || text == "on" || text == "yes")) return true;
      if (!quoted && (text == "false" || text == "off" || text == "no")) return false;
      throw fail("true/false/on/off");
    case Kind::integer: {
      std::int64_t v = 0;
      if (quoted || !parse_number(text, v)) throw fail("an integer");
      return v;
    }
    case Kind::real: {
      double v = 0.0;
      if (quoted || !parse_number(text, v)) throw fail("a number");
      return v;
    }
  }
  throw fail("a value");
}

}  // namespace

RunConfig::RunConfig() : values_(nlohmann::json::object()) {
  for (const auto& [key, spec] : schema()) values_[key] = spec.fallback;
}

void RunConfig::load(std::istream& in, const std::string& source) {
  std::string section;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // '#' starts a comment unless it sits inside a quoted value
    bool in_quote = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quote = !in_quote;
      if (line[i] == '#' && !in_quote) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigurationError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigurationError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    try {
      set(section.empty() ? key : section + "." + key, line.substr(eq + 1));
    } catch (const ConfigurationError& e) {
      throw ConfigurationError(where + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open config file " + path.string());
  load(in, path.string());
}

void RunConfig::set(const std::string& key, const std::string& text) {
  if (!schema().count(key)) throw ConfigurationError("unknown config key '" + key + "'");
  values_[key] = parse_value(key, text);
  explicit_.insert(key);
}

void RunConfig::assign(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigurationError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const nlohmann::json& RunConfig::value(const std::string& key) const {
  if (!schema().count(key)) throw ConfigurationError("unknown config key '" + key + "'");
  return values_.at(key);
}

std::string RunConfig::str(const std::string& key) const { return resolved().at(key).get<std::string>(); }
double RunConfig::real(const std::string& key) const { return resolved().at(key).get<double>(); }
std::int64_t RunConfig::integer(const std::string& key) const { return resolved().at(key).get<std::int64_t>(); }
bool RunConfig::flag(const std::string& key) const { return resolved().at(key).get<bool>(); }

nlohmann::json RunConfig::resolved() const {
  nlohmann::json r = values_;
  const auto backbone = backbone_kind_from_string(value("model.backbone").get<std::string>());
  const bool lstm = backbone == BackboneKind::lstm;
  auto fill = [&](const char* key, nlohmann::json v) {
    if (r[key].is_null()) r[key] = std::move(v);
  };
  fill("model.layers", lstm ? 2 : 6);
  fill("model.hidden", lstm ? 650 : 512);
  fill("model.dropout", lstm ? 0.5 : 0.1);
  fill("model.max_len", std::max<std::int64_t>(128, r["train.chunk_len"].get<std::int64_t>()));
  fill("pointer.window", r["train.chunk_len"]);
  fill("train.lr0", lstm ? 1.0 : 0.1);
  return r;
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  const nlohmann::json r = resolved();
  for (const auto& [key, v] : r.items()) {
    out << key << " = " << (v.is_string() ? "\"" + v.get<std::string>() + "\"" : v.dump()) << '\n';
  }
  return out.str();
}

VocabPolicy RunConfig::vocab_policy() const {
  const auto min_count = integer("corpus.min_count");
  const auto top_k = integer("corpus.top_k");
  if (min_count < 1 || top_k < 0) throw ConfigurationError("corpus.min_count must be >= 1 and corpus.top_k >= 0");
  return {static_cast<std::size_t>(min_count), static_cast<std::size_t>(top_k)};
}

ModelConfig RunConfig::model_config(const Vocabulary& vocab) const {
  const auto r = resolved();
  auto positive = [&](const char* key) {
    const auto v = r.at(key).get<std::int64_t>();
    if (v <= 0) throw ConfigurationError(std::string(key) + " must be positive");
    return static_cast<std::size_t>(v);
  };
  ModelConfig m;
  m.vocab_size = vocab.size();
  m.backbone = backbone_kind_from_string(r.at("model.backbone").get<std::string>());
  const double dropout = r.at("model.dropout").get<double>();
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigurationError("model.dropout must lie in [0, 1)");
  m.lstm.layers = m.transformer.layers = positive("model.layers");
  m.lstm.hidden = m.lstm.embed = m.transformer.d_model = positive("model.hidden");
  m.lstm.dropout = m.transformer.dropout = dropout;
  m.transformer.heads = positive("model.heads");
  m.transformer.ffn_mult = positive("model.ffn_mult");
  m.transformer.use_positional_embedding = r.at("model.positional_embedding").get<bool>();
  m.transformer.max_len = positive("model.max_len");
  m.pointer.enabled = r.at("pointer.enabled").get<bool>();
  const auto window = r.at("pointer.window").get<std::int64_t>();
  if (window < 0) throw ConfigurationError("pointer.window must be >= 0");
  m.pointer.window = static_cast<std::size_t>(window);
  m.pointer.memory_augmentation = r.at("pointer.memory_augmentation").get<bool>();
  m.pointer.exclude_ids = parse_exclude_list(r.at("pointer.exclude").get<std::string>(), vocab);
  return m;
}

TrainConfig RunConfig::train_config() const {
  const auto r = resolved();
  auto count = [&](const char* key) {
    const auto v = r.at(key).get<std::int64_t>();
    if (v <= 0) throw ConfigurationError(std::string(key) + " must be positive");
    return static_cast<std::size_t>(v);
  };
  TrainConfig t;
  t.lr0 = r.at("train.lr0").get<double>();
  t.lr_decay = r.at("train.lr_decay").get<double>();
  t.clip_norm = r.at("train.clip_norm").get<double>();
  t.epochs = static_cast<std::size_t>(std::max<std::int64_t>(0, r.at("train.epochs").get<std::int64_t>()));
  t.batch_streams = count("train.batch_streams");
  t.chunk_len = count("train.chunk_len");
  t.eval_streams = count("train.eval_streams");
  t.seed = static_cast<std::uint64_t>(r.at("train.seed").get<std::int64_t>());
  t.precision = static_cast<int>(r.at("train.precision").get<std::int64_t>());
  if (t.precision != 32 && t.precision != 64) throw ConfigurationError("train.precision must be 32 or 64");
  return t;
}

std::vector<int> parse_exclude_list(const std::string& list, const Vocabulary& vocab) {
  std::vector<int> ids;
  std::istringstream in(list);
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    if (item.empty()) continue;
    if (item == "eos") {
      ids.push_back(vocab.eos_id());
    } else if (item == "unk") {
      ids.push_back(vocab.unk_id());
    } else if (vocab.contains(item)) {
      ids.push_back(vocab.id(item));
    } else {
      throw ConfigurationError("pointer.exclude names '" + item + "', which is not in the vocabulary");
    }
  }
  return ids;
}

}  // namespace cachelm
