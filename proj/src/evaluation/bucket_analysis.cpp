#include "cachelm/evaluation/bucket_analysis.hpp"

#include <fstream>
#include <iomanip>

namespace cachelm {

BucketReport bucket_analysis(const LanguageModel& a, const LanguageModel& b, const FrequencyBuckets& buckets,
                             std::span<const int> test_ids, std::size_t chunk_len) {
  if (a.vocab_size() != b.vocab_size() || a.vocab_size() != buckets.assignment.size()) {
    throw CompatibilityError("bucket analysis needs both models and the buckets on one vocabulary");
  }
  const auto sa = score_tokens(a, test_ids, chunk_len);
  const auto sb = score_tokens(b, test_ids, chunk_len);

  BucketReport report;
  report.rows.resize(buckets.n_buckets);
  for (std::size_t k = 0; k < buckets.n_buckets; ++k) {
    report.rows[k].bucket = k;
    report.rows[k].freq_lo = buckets.freq_lo[k];
    report.rows[k].freq_hi = buckets.freq_hi[k];
  }
  for (std::size_t i = 0; i < sa.size(); ++i) {
    BucketRow& row = report.rows[static_cast<std::size_t>(buckets.bucket_of(sa[i].target))];
    ++row.tokens;
    row.ce_a += sa[i].nll;
    row.ce_b += sb[i].nll;
    report.ce_a += sa[i].nll;
    report.ce_b += sb[i].nll;
  }
  report.tokens = sa.size();
  for (BucketRow& row : report.rows) {
    if (row.tokens == 0) continue;
    row.ce_a /= static_cast<double>(row.tokens);
    row.ce_b /= static_cast<double>(row.tokens);
    row.delta = row.ce_a - row.ce_b;
  }
  if (report.tokens > 0) {
    report.ce_a /= static_cast<double>(report.tokens);
    report.ce_b /= static_cast<double>(report.tokens);
  }
  return report;
}

BucketReport bucket_analysis(const Checkpoint& a, const Checkpoint& b, std::span<const int> test_ids,
                             std::size_t n_buckets) {
  require_same_vocab(a.vocab, b.vocab, "second checkpoint");
  const auto buckets = build_buckets(a.vocab, test_ids, n_buckets);
  const LanguageModel ma = a.instantiate();
  const LanguageModel mb = b.instantiate();
  return bucket_analysis(ma, mb, buckets, test_ids, a.train.chunk_len);
}

void BucketReport::write_csv(std::ostream& out) const {
  out << "bucket,freq_lo,freq_hi,tokens,ce_a,ce_b,delta\n" << std::setprecision(17);
  for (const BucketRow& r : rows) {
    out << r.bucket << ',' << r.freq_lo << ',' << r.freq_hi << ',' << r.tokens << ',' << r.ce_a << ',' << r.ce_b
        << ',' << r.delta << '\n';
  }
}

void BucketReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_csv(out);
}

}  // namespace cachelm
