#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include "cachelm/cli/app.hpp"
#include "cachelm/cli/run_config.hpp"
#include "cachelm/numcore/errors.hpp"
#include "synthetic.hpp"

using namespace cachelm;
namespace fs = std::filesystem;

namespace {

RunConfig parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  cfg.load(in);
  return cfg;
}

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "cachelm");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Outcome o;
  o.code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string last_line(const std::string& s) {
  std::istringstream in(s);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  return last;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::vector<std::string>& tokens) {
  std::ofstream out(p);
  for (const auto& t : tokens) out << (t == "</s>" ? "\n" : t + " ");
}

// Small corpora and a config that trains in well under a second.
struct Workspace {
  fs::path dir;
  Workspace() : dir(fs::temp_directory_path() / "cachelm_cli_test") {
    fs::remove_all(dir);
    fs::create_directories(dir);
    testing::SyntheticOptions opt;
    opt.common_words = 15;
    opt.rare_words = 20;
    opt.max_sentence = 10;
    opt.min_sentence = 5;
    write_text(dir / "train.txt", testing::generate_split(opt, 800, 1).tokens);
    write_text(dir / "dev.txt", testing::generate_split(opt, 200, 2).tokens);
    write_text(dir / "test.txt", testing::generate_split(opt, 200, 3).tokens);
    std::ofstream(dir / "toy.toml") << "# toy run\n"
                                       "[corpus]\n"
                                       "train = \"" << (dir / "train.txt").string() << "\"\n"
                                    << "dev = \"" << (dir / "dev.txt").string() << "\"\n"
                                    << "[model]\nlayers = 1\nhidden = 8\ndropout = 0.0\n"
                                       "[train]\nepochs = 2\nbatch_streams = 2\nchunk_len = 10\nseed = 3\n";
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("config file parsing") {
  const RunConfig cfg = parse(
      "# comment\n"
      "[model]\n"
      "backbone = transformer   # trailing comment\n"
      "hidden = 64\n"
      "dropout = 0.25\n"
      "[pointer]\n"
      "enabled = off\n"
      "exclude = \"eos,unk\"\n"
      "[train]\n"
      "lr0 = 2e-1\n");
  CHECK(cfg.str("model.backbone") == "transformer");
  CHECK(cfg.integer("model.hidden") == 64);
  CHECK(cfg.real("model.dropout") == 0.25);
  CHECK_FALSE(cfg.flag("pointer.enabled"));
  CHECK(cfg.str("pointer.exclude") == "eos,unk");
  CHECK(cfg.real("train.lr0") == 0.2);
  CHECK(cfg.explicitly_set("model.hidden"));
  CHECK_FALSE(cfg.explicitly_set("model.layers"));

  CHECK_THROWS_AS(parse("[model]\nnonsense = 1\n"), ConfigurationError);
  CHECK_THROWS_AS(parse("hidden = 3\n"), ConfigurationError);
  CHECK_THROWS_AS(parse("[model]\nhidden = big\n"), ConfigurationError);
  CHECK_THROWS_AS(parse("[model]\nhidden\n"), ConfigurationError);
  CHECK_THROWS_AS(parse("[pointer]\nenabled = maybe\n"), ConfigurationError);
}

TEST_CASE("defaults depend on the backbone") {
  const auto lstm = RunConfig().resolved();
  CHECK(lstm["model.layers"] == 2);
  CHECK(lstm["model.hidden"] == 650);
  CHECK(lstm["model.dropout"] == 0.5);
  CHECK(lstm["train.lr0"] == 1.0);
  CHECK(lstm["pointer.window"] == lstm["train.chunk_len"]);

  RunConfig t;
  t.set("model.backbone", "transformer");
  t.set("train.chunk_len", "200");
  const auto tr = t.resolved();
  CHECK(tr["model.layers"] == 6);
  CHECK(tr["model.hidden"] == 512);
  CHECK(tr["model.dropout"] == 0.1);
  CHECK(tr["model.max_len"] == 200);
  CHECK(tr["train.lr0"] == 0.1);
  CHECK(tr["pointer.window"] == 200);
}

TEST_CASE("overrides shadow file values") {
  RunConfig cfg = parse("[train]\nseed = 5\nepochs = 4\n");
  cfg.assign("train.seed=9");
  cfg.set("pointer.window", "7");
  CHECK(cfg.integer("train.seed") == 9);
  CHECK(cfg.integer("train.epochs") == 4);
  CHECK(cfg.train_config().seed == 9);
  CHECK(cfg.echo().find("train.seed = 9") != std::string::npos);
  CHECK_THROWS_AS(cfg.assign("train.seed"), ConfigurationError);
  CHECK_THROWS_AS(cfg.assign("train.nope=1"), ConfigurationError);
}

TEST_CASE("pointer exclusion list") {
  const Vocabulary vocab = Vocabulary::build(std::vector<std::string>{"the", "cat", "the"}, {});
  const auto ids = parse_exclude_list("eos, unk,the", vocab);
  CHECK(ids == std::vector<int>{vocab.eos_id(), vocab.unk_id(), vocab.id("the")});
  CHECK(parse_exclude_list("", vocab).empty());
  CHECK_THROWS_AS(parse_exclude_list("dog", vocab), ConfigurationError);
}

TEST_CASE("model config from the run config") {
  const Vocabulary vocab = Vocabulary::build(std::vector<std::string>{"a", "b"}, {});
  RunConfig cfg = parse("[model]\nhidden = 16\nlayers = 1\n[pointer]\nwindow = 12\nexclude = eos\n");
  const ModelConfig m = cfg.model_config(vocab);
  CHECK(m.vocab_size == vocab.size());
  CHECK(m.lstm.hidden == 16);
  CHECK(m.lstm.embed == 16);
  CHECK(m.pointer.window == 12);
  CHECK(m.pointer.exclude_ids == std::vector<int>{vocab.eos_id()});
  cfg.set("pointer.enabled", "false");
  CHECK_FALSE(cfg.model_config(vocab).pointer.enabled);
}

TEST_CASE("train, eval, analyze and rescore end to end") {
  Workspace ws;
  const Outcome t = run({"train", "--config", ws.path("toy.toml"), "--out", ws.path("run"), "--test",
                         ws.path("test.txt")});
  INFO(t.err);
  REQUIRE(t.code == 0);
  CHECK(last_line(t.out).rfind("best_epoch=", 0) == 0);
  CHECK(last_line(t.out).find(" test_ppl=") != std::string::npos);
  CHECK(t.err.find("effective configuration") != std::string::npos);
  CHECK(t.err.find("epoch=2 train_ppl=") != std::string::npos);
  CHECK(fs::exists(ws.dir / "run" / "model.ckpt"));
  CHECK(fs::exists(ws.dir / "run" / "vocab.txt"));
  CHECK(fs::exists(ws.dir / "run" / "config.json"));

  SUBCASE("repeated training is byte-identical") {
    REQUIRE(run({"train", "--config", ws.path("toy.toml"), "--out", ws.path("again"), "--test", ws.path("test.txt")})
                .code == 0);
    CHECK(slurp(ws.dir / "run" / "model.ckpt") == slurp(ws.dir / "again" / "model.ckpt"));
  }
  SUBCASE("seed precedence: env under flags") {
    ::setenv("CACHELM_SEED", "11", 1);
    const Outcome env = run({"train", "--config", ws.path("toy.toml"), "--out", ws.path("env")});
    const Outcome flag =
        run({"train", "--config", ws.path("toy.toml"), "--out", ws.path("flag"), "--set", "train.seed=12"});
    ::unsetenv("CACHELM_SEED");
    CHECK(env.err.find("train.seed = 11") != std::string::npos);
    CHECK(flag.err.find("train.seed = 12") != std::string::npos);
  }
  SUBCASE("eval reproduces the dev perplexity") {
    const Outcome e = run({"eval", "--ckpt", ws.path("run/model.ckpt"), "--text", ws.path("dev.txt")});
    REQUIRE(e.code == 0);
    const std::string line = last_line(e.out);
    REQUIRE(line.rfind("ppl=", 0) == 0);
    const std::string dev = last_line(t.out).substr(last_line(t.out).find("dev_ppl=") + 8);
    CHECK(std::stod(line.substr(4)) == doctest::Approx(std::stod(dev)).epsilon(1e-8));
  }
  SUBCASE("eval with a foreign vocabulary names both hashes") {
    const Vocabulary other = Vocabulary::build(std::vector<std::string>{"x", "y"}, {});
    other.save(ws.dir / "other_vocab.txt");
    const Vocabulary mine = Vocabulary::load(ws.dir / "run" / "vocab.txt");
    const Outcome e = run({"eval", "--ckpt", ws.path("run/model.ckpt"), "--text", ws.path("dev.txt"), "--vocab",
                           ws.path("other_vocab.txt")});
    CHECK(e.code != 0);
    CHECK(e.err.find(mine.hash_hex()) != std::string::npos);
    CHECK(e.err.find(other.hash_hex()) != std::string::npos);
  }
  SUBCASE("analyze a pointer model against a baseline") {
    REQUIRE(run({"train", "--config", ws.path("toy.toml"), "--out", ws.path("base"), "--set",
                 "pointer.enabled=false"})
                .code == 0);
    const Outcome a = run({"analyze", "--ckpt-a", ws.path("base/model.ckpt"), "--ckpt-b", ws.path("run/model.ckpt"),
                           "--text", ws.path("test.txt"), "--buckets", "4", "--out", ws.path("report.csv")});
    REQUIRE(a.code == 0);
    CHECK(last_line(a.out).rfind("tokens=", 0) == 0);
    std::istringstream csv(slurp(ws.dir / "report.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line.rfind("# {", 0) == 0);
    std::getline(csv, line);
    CHECK(line == "bucket,freq_lo,freq_hi,tokens,ce_a,ce_b,delta");

    const Outcome cache = run({"eval", "--ckpt", ws.path("base/model.ckpt"), "--text", ws.path("test.txt"),
                               "--cache-grid", "--cache-dev", ws.path("dev.txt")});
    CHECK(cache.code == 0);
    CHECK(last_line(cache.out).rfind("ppl=", 0) == 0);
    const Outcome refused =
        run({"eval", "--ckpt", ws.path("run/model.ckpt"), "--text", ws.path("test.txt"), "--cache-len", "20"});
    CHECK(refused.code == 2);
  }
  SUBCASE("rescore with references") {
    std::ofstream(ws.dir / "nbest.jsonl")
        << "{\"utt\": \"u1\", \"conv\": \"c\", \"hyps\": [{\"words\": [\"c1\", \"c2\"], \"score\": 0}, "
           "{\"words\": [\"c1\"], \"score\": -1}]}\n"
           "{\"utt\": \"u2\", \"conv\": \"c\", \"hyps\": [{\"words\": [\"c3\"], \"score\": 0}]}\n";
    std::ofstream(ws.dir / "refs.txt") << "u1 c1 c2\nu2 c4\n";
    const Outcome r = run({"rescore", "--ckpt", ws.path("run/model.ckpt"), "--nbest", ws.path("nbest.jsonl"),
                           "--lm-weight", "0", "--state-carry", "--ref", ws.path("refs.txt"), "--out",
                           ws.path("hyps.txt")});
    REQUIRE(r.code == 0);
    CHECK(last_line(r.out) == "errors=1 ref_words=3 WER=0.3333333333");
    CHECK(slurp(ws.dir / "hyps.txt") == "u1 c1 c2\nu2 c3\n");
  }
}

TEST_CASE("usage errors exit nonzero") {
  Workspace ws;
  CHECK(run({"eval", "--no-such-flag"}).code != 0);
  CHECK(run({"eval", "--ckpt", ws.path("missing.ckpt"), "--text", ws.path("dev.txt")}).code != 0);
  CHECK(run({}).code != 0);
  CHECK(run({"train", "--out", ws.path("x")}).code == 2);
  CHECK(run({"train", "--config", ws.path("toy.toml"), "--out", ws.path("x"), "--set", "model.bogus=1"}).code == 2);
  std::ofstream(ws.dir / "junk.ckpt") << "not a checkpoint";
  CHECK(run({"eval", "--ckpt", ws.path("junk.ckpt"), "--text", ws.path("dev.txt")}).code == 1);
}

TEST_CASE("selftest subcommand") {
  const Outcome o = run({"selftest", "--seed", "2"});
  CHECK(o.code == 0);
  CHECK(last_line(o.out) == "selftest=PASS");
  CHECK(o.out.find("FAIL") == std::string::npos);
}
