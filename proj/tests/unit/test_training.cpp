#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "cachelm/numcore/ops.hpp"
#include "cachelm/numcore/optim.hpp"
#include "cachelm/training/trainer.hpp"
#include "synthetic.hpp"

using namespace cachelm;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(std::size_t v, std::size_t h, std::size_t window, BackboneKind kind = BackboneKind::lstm) {
  ModelConfig cfg;
  cfg.vocab_size = v;
  cfg.backbone = kind;
  cfg.lstm = {1, h, h, 0.0};
  cfg.transformer = {1, h, 2, 2, 0.0, true, 32};
  cfg.pointer = {window > 0, window, true, {}};
  return cfg;
}

struct Corpus {
  Vocabulary vocab;
  std::vector<int> train, dev;
};

Corpus small_corpus(std::size_t train_tokens = 1200, std::size_t dev_tokens = 300) {
  testing::SyntheticOptions opt;
  opt.common_words = 20;
  opt.rare_words = 30;
  opt.max_sentence = 12;
  opt.min_sentence = 6;
  const auto tr = testing::generate_split(opt, train_tokens, 1);
  const auto dv = testing::generate_split(opt, dev_tokens, 2);
  Corpus c;
  c.vocab = Vocabulary::build(tr.tokens, {});
  c.train = c.vocab.encode(tr.tokens);
  c.dev = c.vocab.encode(dv.tokens);
  return c;
}

TrainConfig small_train(std::size_t epochs, std::size_t chunk_len = 10) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_streams = 4;
  t.chunk_len = chunk_len;
  t.seed = 7;
  return t;
}

void zero_all(const LanguageModel& m) {
  for (Parameter p : m.parameters()) p.value().fill(0.0);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("cachelm_training_" + std::to_string(std::rand()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("lr0 = 0 leaves dev perplexity unchanged") {
  const Corpus c = small_corpus();
  LanguageModel m(small_config(c.vocab.size(), 8, 10), 3);
  TrainConfig t = small_train(2);
  t.lr0 = 0.0;
  const auto r = train(m, c.vocab, c.train, c.dev, t);
  REQUIRE(r.history.size() == 2);
  for (const auto& e : r.history) CHECK(e.dev_ppl == r.initial_dev_ppl);
  CHECK(r.best.epoch == 0);
}

TEST_CASE("same seed twice gives bit-identical checkpoints") {
  const Corpus c = small_corpus();
  TempDir dir;
  for (BackboneKind kind : {BackboneKind::lstm, BackboneKind::transformer}) {
    std::string bytes[2];
    for (int run = 0; run < 2; ++run) {
      LanguageModel m(small_config(c.vocab.size(), 8, 10, kind), 5);
      TrainConfig t = small_train(2);
      t.lr0 = 0.5;
      const auto r = train(m, c.vocab, c.train, c.dev, t);
      const fs::path p = dir.path / ("run" + std::to_string(run) + ".ckpt");
      r.best.save(p);
      bytes[run] = slurp(p);
    }
    CHECK(bytes[0].size() > 100);
    CHECK(bytes[0] == bytes[1]);
  }
}

TEST_CASE("memorizes a single repeated sentence") {
  std::vector<std::string> sentence;
  for (int i = 0; i < 49; ++i) sentence.push_back("w" + std::to_string(i));
  sentence.emplace_back(kEosWord);
  std::vector<std::string> text;
  for (int r = 0; r < 100; ++r) text.insert(text.end(), sentence.begin(), sentence.end());
  const Vocabulary vocab = Vocabulary::build(text, {});
  const auto ids = vocab.encode(text);

  LanguageModel m(small_config(vocab.size(), 32, 25), 1);
  TrainConfig t = small_train(50, 25);
  std::size_t reached = 0;
  double last = 0.0;
  train(m, vocab, ids, ids, t, [&](const EpochLog& e) {
    last = e.train_ppl;
    if (reached == 0 && e.train_ppl < 1.1) reached = e.epoch;
  });
  MESSAGE("train ppl < 1.1 after epoch " << reached << " (final " << last << ")");
  CHECK(reached > 0);
}

TEST_CASE("zero weights: first-position probabilities") {
  const std::size_t v = 12;
  SUBCASE("pointer off gives 1/V") {
    LanguageModel m(small_config(v, 4, 0), 1);
    zero_all(m);
    auto ctx = m.fresh_context();
    const auto q = m.next_word_distribution(ctx, 3);
    for (double p : q) CHECK(p == doctest::Approx(1.0 / v).epsilon(1e-15));
  }
  SUBCASE("pointer on: the current input occupies one valid slot") {
    LanguageModel m(small_config(v, 4, 6), 1);
    zero_all(m);
    auto ctx = m.fresh_context();
    const auto q = m.next_word_distribution(ctx, 3);
    for (std::size_t w = 0; w < v; ++w) {
      const double expect = (w == 3 ? 2.0 : 1.0) / static_cast<double>(v + 1);
      CHECK(q[w] == doctest::Approx(expect).epsilon(1e-15));
    }
  }
}

TEST_CASE("uniform prediction gives perplexity V") {
  const Corpus c = small_corpus();
  LanguageModel m(small_config(c.vocab.size(), 4, 0), 1);
  zero_all(m);
  CHECK(evaluate_perplexity(m, c.dev, 10) == doctest::Approx(static_cast<double>(c.vocab.size())).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip") {
  const Corpus c = small_corpus();
  TempDir dir;
  LanguageModel m(small_config(c.vocab.size(), 8, 10), 2);
  const auto r = train(m, c.vocab, c.train, c.dev, small_train(2));
  const fs::path p = dir.path / "model.ckpt";
  r.best.save(p);
  const Checkpoint back = Checkpoint::load(p);
  CHECK(back.epoch == r.best.epoch);
  CHECK(back.vocab.hash() == c.vocab.hash());
  CHECK(back.rng_state == r.best.rng_state);
  CHECK(std::abs(evaluate_perplexity(back, c.vocab, c.dev) - back.dev_ppl) < 1e-6);

  SUBCASE("vocabulary mismatch names both hashes") {
    Vocabulary shifted = Vocabulary::build(std::vector<std::string>{"x", "y", "y"}, {});
    try {
      (void)evaluate_perplexity(back, shifted, c.dev);
      FAIL("expected CompatibilityError");
    } catch (const CompatibilityError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(c.vocab.hash_hex()) != std::string::npos);
      CHECK(msg.find(shifted.hash_hex()) != std::string::npos);
    }
  }
  SUBCASE("truncated file") {
    const std::string bytes = slurp(p);
    std::ofstream(dir.path / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
    CHECK_THROWS_AS(Checkpoint::load(dir.path / "cut.ckpt"), Error);
  }
  SUBCASE("bad magic") {
    std::string bytes = slurp(p);
    bytes[0] = 'X';
    std::ofstream(dir.path / "bad.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(Checkpoint::load(dir.path / "bad.ckpt"), Error);
  }
  SUBCASE("shape mismatch on load") {
    Checkpoint wrong = back;
    wrong.params.front().second = Tensor::zeros(1, 1);
    CHECK_THROWS_AS((void)wrong.instantiate(), CompatibilityError);
  }
}

TEST_CASE("carried lstm state does not route gradients into the previous chunk") {
  const Corpus c = small_corpus();
  const auto batches = batchify(c.train, 2, 10);
  REQUIRE(batches.size() >= 2);
  std::vector<Tensor> grads[2];
  for (int variant = 0; variant < 2; ++variant) {
    LanguageModel m(small_config(c.vocab.size(), 8, 10), 4);
    Rng rng(1);
    HiddenState state;
    if (variant == 0) {
      (void)m.chunk_loss(batches[0], state, Mode::eval, rng);  // graph recorded, then dropped
    } else {
      NoGradGuard off;
      (void)m.chunk_loss(batches[0], state, Mode::eval, rng);
    }
    const auto params = m.parameters();
    zero_grads(params);
    backward(m.chunk_loss(batches[1], state, Mode::eval, rng).loss);
    for (Parameter p : params) grads[variant].push_back(p.grad());
  }
  for (std::size_t i = 0; i < grads[0].size(); ++i) CHECK(std::ranges::equal(grads[0][i].data(), grads[1][i].data()));
}

TEST_CASE("a small SGD step lowers the loss on a fixed batch") {
  const Corpus c = small_corpus();
  const auto batches = batchify(c.train, 4, 10);
  for (std::size_t window : {0, 10}) {
    LanguageModel m(small_config(c.vocab.size(), 8, window), 6);
    Rng rng(1);
    HiddenState s0, s1;
    const auto params = m.parameters();
    const Var before = m.chunk_loss(batches[0], s0, Mode::eval, rng).loss;
    backward(before);
    sgd_step(params, 1e-3, 5.0);
    NoGradGuard off;
    const double after = m.chunk_loss(batches[0], s1, Mode::eval, rng).loss.value()[0];
    CHECK(after < before.value()[0]);
  }
}

TEST_CASE("evaluation is invariant to the number of streams when chunks coincide") {
  const Corpus c = small_corpus();
  LanguageModel m(small_config(c.vocab.size(), 8, 10, BackboneKind::transformer), 8);
  // 4 streams of 101 tokens hold 10 chunks each; one stream of 404 tokens
  // would chunk across segment boundaries, so compare per-segment instead.
  std::vector<int> ids(c.train.begin(), c.train.begin() + 404);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::span<const int> seg(ids.data() + s * 101, 101);
    for (const auto& t : score_tokens(m, seg, 10, 1)) {
      total += t.nll;
      ++count;
    }
  }
  const double multi = evaluate_perplexity(m, ids, 10, 4);
  CHECK(std::abs(std::exp(total / count) - multi) < 1e-6);
}

TEST_CASE("lstm evaluation with one stream equals the sequential scan") {
  const Corpus c = small_corpus();
  LanguageModel m(small_config(c.vocab.size(), 8, 10), 9);
  const auto scores = score_tokens(m, c.dev, 10, 1);
  const auto chunks = chunk(c.dev, 10);
  REQUIRE(scores.size() == chunks.size() * 10);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    CHECK(scores[i].position == i + 1);
    CHECK(scores[i].target == c.dev[i + 1]);
  }
}

TEST_CASE("training objective and evaluation perplexity agree") {
  const Corpus c = small_corpus();
  for (BackboneKind kind : {BackboneKind::lstm, BackboneKind::transformer}) {
    LanguageModel m(small_config(c.vocab.size(), 8, 10, kind), 10);
    const double a = training_objective_perplexity(m, c.dev, 10, 2);
    const double b = evaluate_perplexity(m, c.dev, 10, 2);
    CHECK(std::abs(a - b) < 1e-9 * b);
  }
}

TEST_CASE("divergence aborts with the last good checkpoint") {
  const Corpus c = small_corpus();
  LanguageModel m(small_config(c.vocab.size(), 8, 10), 11);
  TrainConfig t = small_train(3);
  t.lr0 = 1e300;
  t.clip_norm = 1e300;
  try {
    train(m, c.vocab, c.train, c.dev, t);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.last_good().epoch == 0);
    CHECK(std::isfinite(e.last_good().dev_ppl));
  }
}

TEST_CASE("train rejects bad configuration") {
  const Corpus c = small_corpus();
  LanguageModel m(small_config(c.vocab.size(), 8, 10), 12);
  TrainConfig t = small_train(1);
  t.clip_norm = 0.0;
  CHECK_THROWS_AS(train(m, c.vocab, c.train, c.dev, t), ConfigurationError);
  const Vocabulary tiny = Vocabulary::build(std::vector<std::string>{"a"}, {});
  CHECK_THROWS_AS(train(m, tiny, c.train, c.dev, small_train(1)), CompatibilityError);
}
