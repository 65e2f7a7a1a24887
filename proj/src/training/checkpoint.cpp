#include "cachelm/training/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "cachelm/numcore/errors.hpp"

namespace cachelm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'A', 'C', 'H', 'E', 'L', 'M', '\0'};

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CompatibilityError("truncated checkpoint " + path);
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n, const std::string& path) {
  if (n > (1ull << 32)) throw CompatibilityError("implausible field length in checkpoint " + path);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw CompatibilityError("truncated checkpoint " + path);
  }
  return s;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size},
          {"backbone", to_string(cfg.backbone)},
          {"lstm",
           {{"layers", cfg.lstm.layers},
            {"hidden", cfg.lstm.hidden},
            {"embed", cfg.lstm.embed},
            {"dropout", cfg.lstm.dropout}}},
          {"transformer",
           {{"layers", cfg.transformer.layers},
            {"d_model", cfg.transformer.d_model},
            {"heads", cfg.transformer.heads},
            {"ffn_mult", cfg.transformer.ffn_mult},
            {"dropout", cfg.transformer.dropout},
            {"use_positional_embedding", cfg.transformer.use_positional_embedding},
            {"max_len", cfg.transformer.max_len}}},
          {"pointer",
           {{"enabled", cfg.pointer.enabled},
            {"window", cfg.pointer.window},
            {"memory_augmentation", cfg.pointer.memory_augmentation},
            {"exclude_ids", cfg.pointer.exclude_ids}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.backbone = backbone_kind_from_string(j.at("backbone").get<std::string>());
  const auto& l = j.at("lstm");
  c.lstm = {l.at("layers").get<std::size_t>(), l.at("hidden").get<std::size_t>(), l.at("embed").get<std::size_t>(),
            l.at("dropout").get<double>()};
  const auto& t = j.at("transformer");
  c.transformer.layers = t.at("layers").get<std::size_t>();
  c.transformer.d_model = t.at("d_model").get<std::size_t>();
  c.transformer.heads = t.at("heads").get<std::size_t>();
  c.transformer.ffn_mult = t.at("ffn_mult").get<std::size_t>();
  c.transformer.dropout = t.at("dropout").get<double>();
  c.transformer.use_positional_embedding = t.at("use_positional_embedding").get<bool>();
  c.transformer.max_len = t.at("max_len").get<std::size_t>();
  const auto& p = j.at("pointer");
  c.pointer.enabled = p.at("enabled").get<bool>();
  c.pointer.window = p.at("window").get<std::size_t>();
  c.pointer.memory_augmentation = p.at("memory_augmentation").get<bool>();
  c.pointer.exclude_ids = p.at("exclude_ids").get<std::vector<int>>();
  return c;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"lr0", cfg.lr0},
          {"lr_decay", cfg.lr_decay},
          {"clip_norm", cfg.clip_norm},
          {"epochs", cfg.epochs},
          {"batch_streams", cfg.batch_streams},
          {"chunk_len", cfg.chunk_len},
          {"eval_streams", cfg.eval_streams},
          {"seed", cfg.seed},
          {"precision", cfg.precision}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr0 = j.at("lr0").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_streams = j.at("batch_streams").get<std::size_t>();
  c.chunk_len = j.at("chunk_len").get<std::size_t>();
  c.eval_streams = j.at("eval_streams").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.precision = j.at("precision").get<int>();
  return c;
}

Checkpoint Checkpoint::capture(const LanguageModel& m, const Vocabulary& vocab, const TrainConfig& tcfg) {
  Checkpoint c;
  c.model = m.config();
  c.train = tcfg;
  c.vocab = vocab;
  for (const auto& p : m.parameters()) c.params.emplace_back(p.name, p.value());
  return c;
}

LanguageModel Checkpoint::instantiate() const {
  LanguageModel m(model, train.seed);
  load_parameters(m, params);
  return m;
}

void load_parameters(const LanguageModel& m, const std::vector<std::pair<std::string, Tensor>>& params) {
  std::map<std::string, const Tensor*> stored;
  for (const auto& [name, t] : params) stored[name] = &t;
  const auto targets = m.parameters();
  if (targets.size() != stored.size()) {
    throw CompatibilityError("checkpoint holds " + std::to_string(stored.size()) + " parameters, model expects " +
                             std::to_string(targets.size()));
  }
  for (const auto& p : targets) {
    const auto it = stored.find(p.name);
    if (it == stored.end()) throw CompatibilityError("checkpoint lacks parameter " + p.name);
    if (!it->second->same_shape(p.value())) {
      throw CompatibilityError("parameter " + p.name + " has shape " + it->second->shape_string() + ", expected " +
                               p.value().shape_string());
    }
    Parameter q = p;
    q.var.mutable_value() = *it->second;
  }
}

void require_same_vocab(const Vocabulary& expected, const Vocabulary& actual, const std::string& what) {
  if (expected.hash() != actual.hash()) {
    throw CompatibilityError(what + ": vocabulary hash " + actual.hash_hex() + " does not match checkpoint hash " +
                             expected.hash_hex());
  }
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["model"] = to_json(model);
  header["train"] = to_json(train);
  header["run"] = run;
  header["epoch"] = epoch;
  header["dev_ppl"] = dev_ppl;
  header["rng_state"] = rng_state;
  header["rng_algorithm"] = std::string(Rng::kAlgorithm);
  header["vocab_hash"] = vocab.hash_hex();
  auto words = nlohmann::json::array();
  auto freqs = nlohmann::json::array();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    words.push_back(vocab.word(static_cast<int>(i)));
    freqs.push_back(vocab.train_freq()[i]);
  }
  header["vocab_words"] = std::move(words);
  header["vocab_freqs"] = std::move(freqs);
  const std::string blob = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, blob.size());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  put<std::uint64_t>(out, params.size());
  for (const auto& [name, t] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + where);
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CompatibilityError(where + " is not a cachelm checkpoint");
  }
  const auto version = get<std::uint32_t>(in, where);
  if (version != kFormatVersion) {
    throw CompatibilityError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kFormatVersion) + ")");
  }
  const auto blob = get_bytes(in, get<std::uint64_t>(in, where), where);
  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(blob);
    c.model = model_config_from_json(header.at("model"));
    c.train = train_config_from_json(header.at("train"));
    c.run = header.at("run");
    c.epoch = header.at("epoch").get<std::size_t>();
    c.dev_ppl = header.at("dev_ppl").get<double>();
    c.rng_state = header.at("rng_state").get<std::string>();
    const auto words = header.at("vocab_words").get<std::vector<std::string>>();
    const auto freqs = header.at("vocab_freqs").get<std::vector<std::uint64_t>>();
    if (words.size() != freqs.size()) throw CompatibilityError("vocabulary words/frequencies differ in length");
    std::vector<std::pair<std::string, std::uint64_t>> entries;
    for (std::size_t i = 0; i < words.size(); ++i) entries.emplace_back(words[i], freqs[i]);
    c.vocab = Vocabulary::from_entries(std::move(entries));
    const auto stored_hash = header.at("vocab_hash").get<std::string>();
    if (stored_hash != c.vocab.hash_hex()) {
      throw CompatibilityError("checkpoint vocabulary hash " + stored_hash + " does not match its word list (" +
                               c.vocab.hash_hex() + ")");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError("malformed checkpoint header in " + where + ": " + e.what());
  }
  const auto n = get<std::uint64_t>(in, where);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = get_bytes(in, get<std::uint32_t>(in, where), where);
    const auto rank = get<std::uint32_t>(in, where);
    if (rank == 0 || rank > 2) throw CompatibilityError("parameter " + name + " has unsupported rank");
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(get<std::uint64_t>(in, where));
      count *= shape.back();
    }
    std::vector<double> data(count);
    if (count > 0 && !in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
      throw CompatibilityError("truncated checkpoint " + where);
    }
    c.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return c;
}

}  // namespace cachelm
