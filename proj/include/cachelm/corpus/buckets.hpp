#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cachelm/corpus/vocabulary.hpp"

namespace cachelm {

/// Partition of the vocabulary by training frequency such that buckets hold
/// roughly equal numbers of test tokens. Bucket 0 holds the most frequent words.
struct FrequencyBuckets {
  std::size_t n_buckets = 0;
  std::vector<int> assignment;                // id -> bucket
  std::vector<std::uint64_t> test_token_counts;
  std::vector<std::uint64_t> freq_lo;         // min training frequency in bucket
  std::vector<std::uint64_t> freq_hi;
  std::vector<std::size_t> word_counts;

  int bucket_of(int id) const { return assignment[static_cast<std::size_t>(id)]; }
};

/// Greedy closing at total/n_buckets test tokens over ids in descending
/// training frequency; the last bucket takes the remainder.
FrequencyBuckets build_buckets(const Vocabulary& vocab, std::span<const int> test_ids, std::size_t n_buckets);

}  // namespace cachelm
