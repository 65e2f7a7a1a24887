#include "cachelm/corpus/buckets.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "cachelm/numcore/errors.hpp"

namespace cachelm {

FrequencyBuckets build_buckets(const Vocabulary& vocab, std::span<const int> test_ids, std::size_t n_buckets) {
  const std::size_t v = vocab.size();
  if (n_buckets == 0 || n_buckets > v) {
    throw ConfigurationError("n_buckets=" + std::to_string(n_buckets) + " must lie in [1, " + std::to_string(v) +
                             "]");
  }
  std::vector<std::uint64_t> test_count(v, 0);
  for (int id : test_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) throw IngestionError("test id outside vocabulary");
    ++test_count[static_cast<std::size_t>(id)];
  }
  const auto freq = vocab.train_freq();
  std::vector<int> order(v);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return freq[static_cast<std::size_t>(a)] > freq[static_cast<std::size_t>(b)];
  });

  FrequencyBuckets fb;
  fb.n_buckets = n_buckets;
  fb.assignment.assign(v, -1);
  fb.test_token_counts.assign(n_buckets, 0);
  fb.freq_lo.assign(n_buckets, std::numeric_limits<std::uint64_t>::max());
  fb.freq_hi.assign(n_buckets, 0);
  fb.word_counts.assign(n_buckets, 0);

  const double quota = static_cast<double>(test_ids.size()) / static_cast<double>(n_buckets);
  std::size_t bucket = 0;
  for (int id : order) {
    const auto i = static_cast<std::size_t>(id);
    fb.assignment[i] = static_cast<int>(bucket);
    fb.test_token_counts[bucket] += test_count[i];
    fb.freq_lo[bucket] = std::min(fb.freq_lo[bucket], freq[i]);
    fb.freq_hi[bucket] = std::max(fb.freq_hi[bucket], freq[i]);
    ++fb.word_counts[bucket];
    if (bucket + 1 < n_buckets && static_cast<double>(fb.test_token_counts[bucket]) >= quota) ++bucket;
  }
  for (std::size_t b = 0; b < n_buckets; ++b) {
    if (fb.word_counts[b] == 0) fb.freq_lo[b] = 0;
  }
  return fb;
}

}  // namespace cachelm
