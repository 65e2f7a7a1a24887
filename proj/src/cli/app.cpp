#include "cachelm/cli/app.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "cachelm/cli/run_config.hpp"
#include "cachelm/cli/selftest.hpp"
#include "cachelm/evaluation/bucket_analysis.hpp"
#include "cachelm/evaluation/neural_cache.hpp"
#include "cachelm/evaluation/rescore.hpp"
#include "cachelm/training/trainer.hpp"

namespace cachelm {

namespace {

namespace fs = std::filesystem;

struct TrainArgs {
  std::string config;
  std::string out;
  std::string train, dev, test;
  std::optional<std::int64_t> min_count, top_k, chunk_len;
  std::optional<std::string> exclude;
  std::vector<std::string> overrides;
};

struct EvalArgs {
  std::string ckpt, text, vocab;
  std::size_t streams = 1;
  std::size_t cache_len = 0;
  double theta = 0.3, lam = 0.1;
  bool grid = false;
  std::string cache_dev;
};

struct AnalyzeArgs {
  std::string ckpt_a, ckpt_b, text, out;
  std::size_t buckets = 10;
};

struct RescoreArgs {
  std::string ckpt, nbest, ref, out;
  RescoreConfig cfg;
};

std::vector<int> encode_file(const Vocabulary& vocab, const std::string& path) {
  return vocab.encode(read_corpus(path));
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg.load_file(a.config);
  if (const char* seed = std::getenv("CACHELM_SEED")) cfg.set("train.seed", seed);
  if (!a.train.empty()) cfg.set("corpus.train", a.train);
  if (!a.dev.empty()) cfg.set("corpus.dev", a.dev);
  if (!a.test.empty()) cfg.set("corpus.test", a.test);
  if (a.min_count) cfg.set("corpus.min_count", std::to_string(*a.min_count));
  if (a.top_k) cfg.set("corpus.top_k", std::to_string(*a.top_k));
  if (a.chunk_len) cfg.set("train.chunk_len", std::to_string(*a.chunk_len));
  if (a.exclude) cfg.set("pointer.exclude", *a.exclude);
  for (const auto& o : a.overrides) cfg.assign(o);

  std::cerr << "effective configuration:\n" << cfg.echo();
  const TrainConfig tcfg = cfg.train_config();
  if (tcfg.precision == 32) {
    std::cerr << "warning: precision=32 requested; this build computes in 64-bit\n";
  }
  if (cfg.str("corpus.train").empty() || cfg.str("corpus.dev").empty()) {
    throw ConfigurationError("training needs corpus.train and corpus.dev");
  }
  const Vocabulary vocab = Vocabulary::build(read_corpus(cfg.str("corpus.train")), cfg.vocab_policy());
  const auto train_ids = vocab.encode(read_corpus(cfg.str("corpus.train")));
  const auto dev_ids = encode_file(vocab, cfg.str("corpus.dev"));
  const ModelConfig mcfg = cfg.model_config(vocab);
  LanguageModel model(mcfg, tcfg.seed);
  std::cerr << "vocab=" << vocab.size() << " vocab_hash=" << vocab.hash_hex() << " params=" << model.parameter_count()
            << " train_tokens=" << train_ids.size() << '\n';

  fs::create_directories(a.out);
  const fs::path ckpt_path = fs::path(a.out) / "model.ckpt";
  vocab.save(fs::path(a.out) / "vocab.txt");
  std::ofstream(fs::path(a.out) / "config.json") << cfg.resolved().dump(2) << '\n';

  const auto log = [](const EpochLog& e) {
    std::cerr << "epoch=" << e.epoch << " train_ppl=" << std::setprecision(6) << e.train_ppl
              << " dev_ppl=" << e.dev_ppl << " lr=" << e.lr << " sec=" << std::setprecision(3) << e.seconds << '\n';
  };
  TrainResult result;
  try {
    result = train(model, vocab, train_ids, dev_ids, tcfg, log);
  } catch (const TrainingDiverged& e) {
    Checkpoint last = e.last_good();
    last.run = cfg.resolved();
    last.save(ckpt_path);
    std::cerr << "error: " << e.what() << "; last good checkpoint written to " << ckpt_path.string() << '\n';
    return 3;
  }
  result.best.run = cfg.resolved();
  result.best.save(ckpt_path);

  std::cout << std::setprecision(10) << "best_epoch=" << result.best.epoch << " dev_ppl=" << result.best.dev_ppl;
  if (!cfg.str("corpus.test").empty()) {
    const LanguageModel best = result.best.instantiate();
    const auto test_ids = encode_file(vocab, cfg.str("corpus.test"));
    std::cout << " test_ppl=" << evaluate_perplexity(best, test_ids, tcfg.chunk_len, tcfg.eval_streams);
  }
  std::cout << " checkpoint=" << ckpt_path.string() << '\n';
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ckpt = Checkpoint::load(a.ckpt);
  if (!a.vocab.empty()) require_same_vocab(ckpt.vocab, Vocabulary::load(a.vocab), a.vocab);
  std::cerr << "checkpoint epoch=" << ckpt.epoch << " vocab_hash=" << ckpt.vocab.hash_hex() << '\n';
  const LanguageModel model = ckpt.instantiate();
  const auto ids = encode_file(ckpt.vocab, a.text);
  const std::size_t chunk_len = ckpt.train.chunk_len;
  double ppl = 0.0;
  if (a.grid) {
    if (a.cache_dev.empty()) throw ConfigurationError("--cache-grid needs --cache-dev");
    const std::vector<double> thetas{0.0, 0.1, 0.3, 0.5, 1.0};
    const std::vector<double> lams{0.05, 0.1, 0.2, 0.3};
    const std::size_t len = a.cache_len > 0 ? a.cache_len : 100;
    const auto points = cache_grid_search(model, encode_file(ckpt.vocab, a.cache_dev), chunk_len, len, thetas, lams);
    for (const auto& p : points) std::cerr << "theta=" << p.theta << " lam=" << p.lam << " dev_ppl=" << p.ppl << '\n';
    std::cerr << "selected theta=" << points.front().theta << " lam=" << points.front().lam << '\n';
    ppl = neural_cache_adapt(model, ids, chunk_len, {len, points.front().theta, points.front().lam}).ppl;
  } else if (a.cache_len > 0) {
    ppl = neural_cache_adapt(model, ids, chunk_len, {a.cache_len, a.theta, a.lam}).ppl;
  } else {
    ppl = evaluate_perplexity(model, ids, chunk_len, a.streams);
  }
  std::cout << std::setprecision(10) << "ppl=" << ppl << '\n';
  return 0;
}

int cmd_analyze(const AnalyzeArgs& a) {
  const Checkpoint ca = Checkpoint::load(a.ckpt_a);
  const Checkpoint cb = Checkpoint::load(a.ckpt_b);
  const auto ids = encode_file(ca.vocab, a.text);
  const BucketReport report = bucket_analysis(ca, cb, ids, a.buckets);
  std::ofstream out(a.out);
  if (!out) throw Error("cannot write " + a.out);
  nlohmann::json header{{"ckpt_a", a.ckpt_a}, {"ckpt_b", a.ckpt_b}, {"run_a", ca.run}, {"run_b", cb.run},
                        {"text", a.text}, {"buckets", a.buckets}};
  out << "# " << header.dump() << '\n';
  report.write_csv(out);

  std::size_t best = 0;
  for (const auto& r : report.rows) {
    if (r.delta > report.rows[best].delta) best = r.bucket;
  }
  std::cout << std::setprecision(10) << "tokens=" << report.tokens << " ce_a=" << report.ce_a
            << " ce_b=" << report.ce_b << " max_delta_bucket=" << best << '\n';
  return 0;
}

int cmd_rescore(const RescoreArgs& a) {
  const Checkpoint ckpt = Checkpoint::load(a.ckpt);
  const LanguageModel model = ckpt.instantiate();
  const auto nbest = read_nbest(a.nbest);
  const auto choices = rescore(model, ckpt.vocab, nbest, a.cfg);
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw Error("cannot write " + a.out);
  }
  std::ostream& hyp_out = a.out.empty() ? std::cerr : file;
  for (const auto& c : choices) {
    hyp_out << c.utt;
    for (const auto& w : c.words) hyp_out << ' ' << w;
    hyp_out << '\n';
  }
  if (!a.ref.empty()) {
    const auto wer = word_error_rate(choices, read_references(a.ref));
    std::cout << std::setprecision(10) << "errors=" << wer.errors << " ref_words=" << wer.ref_words
              << " WER=" << wer.wer() << '\n';
  } else {
    std::cout << "utterances=" << choices.size() << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"cachelm: word-level language models with an implicit pointer cache"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model and write <out>/model.ckpt");
  train_cmd->add_option("--config", ta.config, "TOML-style config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", ta.out, "output directory")->required();
  train_cmd->add_option("--train", ta.train, "training text")->check(CLI::ExistingFile);
  train_cmd->add_option("--dev", ta.dev, "dev text")->check(CLI::ExistingFile);
  train_cmd->add_option("--test", ta.test, "test text")->check(CLI::ExistingFile);
  train_cmd->add_option("--min-count", ta.min_count, "vocabulary frequency threshold");
  train_cmd->add_option("--top-k", ta.top_k, "vocabulary size cap (specials included)");
  train_cmd->add_option("--chunk-len", ta.chunk_len, "truncated BPTT length");
  train_cmd->add_option("--pointer-exclude", ta.exclude, "comma list of tokens that never enter the pointer history");
  train_cmd->add_option("--set", ta.overrides, "override a config key: section.key=value");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "perplexity of a checkpoint on a text");
  eval_cmd->add_option("--ckpt", ea.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--text", ea.text, "text to score")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--vocab", ea.vocab, "vocabulary the caller expects")->check(CLI::ExistingFile);
  eval_cmd->add_option("--streams", ea.streams, "parallel evaluation streams");
  eval_cmd->add_option("--cache-len", ea.cache_len, "neural cache length (pointer-free checkpoints)");
  eval_cmd->add_option("--cache-theta", ea.theta, "neural cache flatness");
  eval_cmd->add_option("--cache-lam", ea.lam, "neural cache interpolation weight");
  eval_cmd->add_flag("--cache-grid", ea.grid, "pick theta/lam by grid search on --cache-dev");
  eval_cmd->add_option("--cache-dev", ea.cache_dev, "dev text for --cache-grid")->check(CLI::ExistingFile);

  AnalyzeArgs aa;
  auto* analyze_cmd = app.add_subcommand("analyze", "per-frequency-bucket cross-entropy of two checkpoints");
  analyze_cmd->add_option("--ckpt-a", aa.ckpt_a, "reference checkpoint")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--ckpt-b", aa.ckpt_b, "compared checkpoint")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--text", aa.text, "test text")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--buckets", aa.buckets, "number of buckets");
  analyze_cmd->add_option("--out", aa.out, "CSV report")->required();

  RescoreArgs ra;
  auto* rescore_cmd = app.add_subcommand("rescore", "N-best rescoring");
  rescore_cmd->add_option("--ckpt", ra.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  rescore_cmd->add_option("--nbest", ra.nbest, "JSON Lines n-best file")->required()->check(CLI::ExistingFile);
  rescore_cmd->add_option("--lm-weight", ra.cfg.lm_weight, "LM log-probability weight");
  rescore_cmd->add_option("--wip", ra.cfg.wip, "word insertion penalty");
  rescore_cmd->add_flag("--state-carry", ra.cfg.state_carry, "carry LM state across utterances of a conversation");
  rescore_cmd->add_option("--ref", ra.ref, "reference transcripts (utt word ...)")->check(CLI::ExistingFile);
  rescore_cmd->add_option("--out", ra.out, "write chosen hypotheses here instead of stderr");

  std::uint64_t selftest_seed = 1;
  auto* selftest_cmd = app.add_subcommand("selftest", "gradient and invariant checks");
  selftest_cmd->add_option("--seed", selftest_seed, "seed for the randomized checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*eval_cmd) return cmd_eval(ea);
    if (*analyze_cmd) return cmd_analyze(aa);
    if (*rescore_cmd) return cmd_rescore(ra);
    if (*selftest_cmd) {
      bool all = true;
      for (const auto& r : run_selftest(selftest_seed, std::cout)) all = all && r.passed;
      std::cout << "selftest=" << (all ? "PASS" : "FAIL") << '\n';
      return all ? 0 : 1;
    }
  } catch (const ConfigurationError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace cachelm
