#include <doctest.h>

#include <filesystem>
#include <map>
#include <numeric>

#include "cachelm/corpus/buckets.hpp"
#include "cachelm/corpus/stream.hpp"
#include "cachelm/corpus/vocabulary.hpp"
#include "cachelm/numcore/errors.hpp"
#include "cachelm/numcore/rng.hpp"
#include "synthetic.hpp"

using namespace cachelm;

namespace {

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

TEST_CASE("vocabulary examples") {
  const auto v = Vocabulary::build(words("a b a </s>"), {});
  CHECK(v.size() == 4);
  for (const char* w : {"a", "b", "</s>", "<unk>"}) CHECK(v.contains(w));
  CHECK(v.word(0) == "a");  // most frequent first

  const auto v2 = Vocabulary::build(words("a b a"), {2, 0});
  CHECK_FALSE(v2.contains("b"));
  CHECK(v2.id("b") == v2.unk_id());
  CHECK(v2.train_freq()[static_cast<std::size_t>(v2.unk_id())] == 1);
}

TEST_CASE("vocabulary ordering, counts and policies") {
  const auto toks = words("d c c b b a a </s> </s> x");
  const auto v = Vocabulary::build(toks, {});
  // counts: a=2 b=2 c=2 </s>=2 d=1 x=1 <unk>=0; ties lexicographic
  CHECK(v.decode(iota_ids(v.size())) ==
        std::vector<std::string>{"</s>", "a", "b", "c", "d", "x", "<unk>"});
  const auto freq = v.train_freq();
  CHECK(std::accumulate(freq.begin(), freq.end(), std::uint64_t{0}) == toks.size());

  const auto capped = Vocabulary::build(toks, {1, 4});
  CHECK(capped.size() == 4);
  CHECK(capped.contains("a"));
  CHECK(capped.contains("b"));
  CHECK_FALSE(capped.contains("c"));
  const auto cfreq = capped.train_freq();
  CHECK(std::accumulate(cfreq.begin(), cfreq.end(), std::uint64_t{0}) == toks.size());
  CHECK(cfreq[static_cast<std::size_t>(capped.unk_id())] == 4);

  CHECK_THROWS_AS(Vocabulary::build(std::vector<std::string>{}, {}), IngestionError);
}

TEST_CASE("pre-tokenized unk passes through") {
  const auto v = Vocabulary::build(words("<unk> a <unk> </s>"), {});
  CHECK(v.train_freq()[static_cast<std::size_t>(v.unk_id())] == 2);
  CHECK(v.size() == 3);
}

TEST_CASE("encode/decode round trip replaces OOV words with <unk>") {
  const auto v = Vocabulary::build(words("the cat sat </s> the dog </s>"), {2, 0});
  const auto text = words("the cat sat on the mat </s>");
  const auto back = v.decode(v.encode(text));
  REQUIRE(back.size() == text.size());
  for (std::size_t i = 0; i < text.size(); ++i) CHECK(back[i] == (v.contains(text[i]) ? text[i] : "<unk>"));
}

TEST_CASE("tokenize_lines appends </s> to each non-blank line") {
  const auto toks = tokenize_lines("a b\n\n  c  \n");
  CHECK(toks == std::vector<std::string>{"a", "b", "</s>", "c", "</s>"});
}

TEST_CASE("vocabulary file round trip and hash") {
  const auto v = Vocabulary::build(words("x y y z </s>"), {});
  const auto path = std::filesystem::temp_directory_path() / "cachelm_vocab_test.txt";
  v.save(path);
  const auto w = Vocabulary::load(path);
  std::filesystem::remove(path);
  CHECK(w.hash() == v.hash());
  CHECK(w.decode(iota_ids(w.size())) == v.decode(iota_ids(v.size())));
  CHECK(w.train_freq()[0] == v.train_freq()[0]);
  CHECK(v.hash_hex().size() == 16);
  const auto other = Vocabulary::build(words("x y y q </s>"), {});
  CHECK(other.hash() != v.hash());
}

TEST_CASE("chunk examples") {
  const auto seven = iota_ids(7);
  const auto chunks = chunk(seven, 3);
  REQUIRE(chunks.size() == 2);
  CHECK(std::vector<int>(chunks[1].inputs.begin(), chunks[1].inputs.end()) == std::vector<int>{3, 4, 5});
  CHECK(std::vector<int>(chunks[1].targets.begin(), chunks[1].targets.end()) == std::vector<int>{4, 5, 6});

  const auto six = iota_ids(6);
  REQUIRE(chunk(six, 3).size() == 1);
  CHECK(chunk(six, 3)[0].targets.back() == 3);

  const auto three = iota_ids(3);
  CHECK_THROWS_AS(chunk(three, 3), IngestionError);
}

TEST_CASE("chunking partitions the usable prefix") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(300), len = 1 + rng.below(20);
    if (n < len + 1) continue;
    const auto ids = iota_ids(n);
    std::vector<int> seen(n, 0);
    for (const auto& c : chunk(ids, len)) {
      CHECK(c.inputs.size() == len);
      for (std::size_t k = 0; k < len; ++k) {
        ++seen[static_cast<std::size_t>(c.inputs[k])];
        CHECK(c.targets[k] == c.inputs[k] + 1);
      }
    }
    const std::size_t usable = (n - 1) / len * len;
    for (std::size_t i = 0; i < n; ++i) CHECK(seen[i] == (i < usable ? 1 : 0));
  }
}

TEST_CASE("batchify splits into contiguous streams") {
  const auto ids = iota_ids(25);
  const auto one = batchify(ids, 1, 4);
  const auto plain = chunk(ids, 4);
  REQUIRE(one.size() == plain.size());
  for (std::size_t c = 0; c < one.size(); ++c) {
    CHECK(one[c].inputs == std::vector<int>(plain[c].inputs.begin(), plain[c].inputs.end()));
  }
  // 3 streams of 8 ids: stream b covers [8b, 8b+8), 7 positions usable -> 1 chunk of 4
  const auto three = batchify(ids, 3, 4);
  REQUIRE(three.size() == 1);
  CHECK(three[0].batch == 3);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(three[0].stream_offsets[b] == 8 * b);
    for (std::size_t t = 0; t < 4; ++t) {
      CHECK(three[0].input(t, b) == static_cast<int>(8 * b + t));
      CHECK(three[0].target(t, b) == static_cast<int>(8 * b + t + 1));
    }
  }
}

TEST_CASE("bucket examples") {
  const auto v = Vocabulary::build(words("a a a b b c </s>"), {});
  const auto test = v.encode(words("a b c c </s>"));
  const auto one = build_buckets(v, test, 1);
  for (int id = 0; id < static_cast<int>(v.size()); ++id) CHECK(one.bucket_of(id) == 0);

  // ten equal-frequency words with equal test counts split 5/5
  std::vector<std::string> train, test_words;
  for (int i = 0; i < 10; ++i) {
    for (int k = 0; k < 3; ++k) train.push_back("w" + std::to_string(i));
    test_words.push_back("w" + std::to_string(i));
  }
  // the specials get training frequency 0 and no test tokens
  const auto uv = Vocabulary::build(train, {});
  const auto two = build_buckets(uv, uv.encode(test_words), 2);
  CHECK(two.word_counts[0] == 5);
  CHECK(two.test_token_counts[0] == 5);
  CHECK(two.test_token_counts[1] == 5);

  CHECK_THROWS_AS(build_buckets(v, test, 0), ConfigurationError);
  CHECK_THROWS_AS(build_buckets(v, test, v.size() + 1), ConfigurationError);
}

TEST_CASE("bucket invariants on a synthetic corpus") {
  testing::SyntheticOptions opt;
  opt.common_words = 50;
  opt.rare_words = 200;
  const auto train = testing::generate_split(opt, 20000, 0);
  const auto test = testing::generate_split(opt, 5000, 2);
  const auto v = Vocabulary::build(train.tokens, {});
  const auto ids = v.encode(test.tokens);
  const auto fb = build_buckets(v, ids, 10);
  CHECK(std::accumulate(fb.test_token_counts.begin(), fb.test_token_counts.end(), std::uint64_t{0}) == ids.size());
  for (std::size_t b = 0; b + 1 < fb.n_buckets; ++b) {
    if (fb.word_counts[b + 1] > 0) CHECK(fb.freq_lo[b] >= fb.freq_hi[b + 1]);
  }
  for (int id = 0; id < static_cast<int>(v.size()); ++id) {
    CHECK(fb.bucket_of(id) >= 0);
    CHECK(fb.bucket_of(id) < 10);
  }
  // rare words end up in the last bucket
  CHECK(fb.bucket_of(v.id(testing::rare_word(0))) == 9);
}

TEST_CASE("synthetic generator places each rare repeat inside its sentence") {
  testing::SyntheticOptions opt;
  const auto s = testing::generate_split(opt, 5000, 0);
  REQUIRE(s.first_rare.size() == s.second_rare.size());
  for (std::size_t i = 0; i < s.first_rare.size(); ++i) {
    CHECK(s.tokens[s.first_rare[i]] == s.tokens[s.second_rare[i]]);
    CHECK(s.tokens[s.first_rare[i]][0] == 'r');
    CHECK(s.second_rare[i] - s.first_rare[i] < 40);
  }
}
