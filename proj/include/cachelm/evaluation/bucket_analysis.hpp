#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <vector>

#include "cachelm/corpus/buckets.hpp"
#include "cachelm/training/trainer.hpp"

namespace cachelm {

struct BucketRow {
  std::size_t bucket = 0;
  std::uint64_t freq_lo = 0;  // smallest training frequency in the bucket
  std::uint64_t freq_hi = 0;
  std::size_t tokens = 0;     // scored test targets falling in the bucket
  double ce_a = 0.0;          // mean -log q under model A (0 when empty)
  double ce_b = 0.0;
  double delta = 0.0;         // ce_a - ce_b
};

struct BucketReport {
  std::vector<BucketRow> rows;
  std::size_t tokens = 0;
  double ce_a = 0.0;  // overall mean, i.e. log perplexity of A
  double ce_b = 0.0;

  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Per-bucket cross-entropy of two models over the same scored test targets.
/// Both models must use `vocab`; `chunk_len` fixes the scored positions.
BucketReport bucket_analysis(const LanguageModel& a, const LanguageModel& b, const FrequencyBuckets& buckets,
                             std::span<const int> test_ids, std::size_t chunk_len);

BucketReport bucket_analysis(const Checkpoint& a, const Checkpoint& b, std::span<const int> test_ids,
                             std::size_t n_buckets);

}  // namespace cachelm
