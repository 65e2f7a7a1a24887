#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cachelm/numcore/autograd.hpp"
#include "cachelm/numcore/rng.hpp"

namespace cachelm {

struct PointerConfig {
  bool enabled = true;
  std::size_t window = 100;  // L
  bool memory_augmentation = true;
  /// Token ids that never occupy a valid history slot (ablation of the
  /// default, which treats every token as copyable).
  std::vector<int> exclude_ids;
};

/// Output layer extended by `window` history slots.
///
/// Vocabulary logits are W h + b with W the (tied) embedding matrix. The
/// pointer logits are W_p h, and with memory augmentation each history slot
/// additionally receives the scalar w_m . h that was computed when the token
/// in that slot was consumed. The extra parameters are W_p (L x H) and w_m
/// (H), i.e. (L + 1) * H in total.
class PointerHead {
 public:
  /// `output_weight` is the V x H embedding shared with the input layer.
  /// A disabled config (or window 0) yields a plain softmax head.
  PointerHead(Parameter output_weight, const PointerConfig& cfg, Rng& init_rng);

  std::size_t vocab_size() const { return output_weight_.value().rows(); }
  std::size_t hidden_size() const { return output_weight_.value().cols(); }
  std::size_t window() const noexcept { return window_; }
  bool memory_augmented() const noexcept { return window_ > 0 && cfg_.memory_augmentation; }
  bool excluded(int token) const;
  const PointerConfig& config() const noexcept { return cfg_; }

  const Parameter& output_weight() const noexcept { return output_weight_; }
  const Parameter& bias() const noexcept { return bias_; }
  const Parameter& pointer_weight() const noexcept { return pointer_weight_; }
  const Parameter& memory_weight() const noexcept { return memory_weight_; }

  /// Parameters owned by the head (bias, W_p, w_m). W belongs to the embedding.
  std::vector<Parameter> parameters() const;
  /// W + b + W_p + w_m element count.
  std::size_t parameter_count() const;

  /// w_m . h, or 0 without memory augmentation.
  double memory_value(std::span<const double> h) const;

 private:
  PointerConfig cfg_;
  std::size_t window_ = 0;
  Parameter output_weight_;
  Parameter bias_;
  Parameter pointer_weight_;
  Parameter memory_weight_;
};

/// Ring buffer over the last L consumed tokens. Logical slot j holds the
/// token consumed j - (L - 1) steps ago; slot L - 1 is the current input.
class PointerState {
 public:
  explicit PointerState(std::size_t window = 0);

  std::size_t window() const noexcept { return tokens_.size(); }
  int token(std::size_t slot) const { return tokens_[physical(slot)]; }
  double m_value(std::size_t slot) const { return m_[physical(slot)]; }
  bool valid(std::size_t slot) const { return valid_[physical(slot)] != 0; }
  std::size_t valid_count() const;

  /// Shifts every slot one position older and writes the new entry at L - 1.
  void push(int token, double m_value, bool valid);
  void clear();

 private:
  std::size_t physical(std::size_t slot) const { return (oldest_ + slot) % tokens_.size(); }

  std::vector<int> tokens_;
  std::vector<double> m_;
  std::vector<char> valid_;
  std::size_t oldest_ = 0;
};

/// Sparse at-least-one-hot target over V + L slots. indices[0] is the
/// vocabulary id; the rest are V + j for matching valid history slots.
struct SupervisionVector {
  std::vector<int> indices;
};

/// W h + b. Shared by the plain and the extended head.
std::vector<double> vocab_logits(std::span<const double> h, const PointerHead& head);

/// Extended logits z (V + L); invalid slots carry kMasked.
std::vector<double> pointer_logits(std::span<const double> h, const PointerHead& head, const PointerState& state);

/// Records the token consumed at this step, with h its hidden vector.
void update_state(PointerState& state, int token, std::span<const double> h, const PointerHead& head);

SupervisionVector build_supervision(int target, const PointerState& state, std::size_t vocab_size);

/// -log(y . s) for probabilities y over V + L slots.
double pointer_loss(std::span<const double> y, const SupervisionVector& s);

/// Folds pointer-slot mass onto the word occupying each slot:
/// q[w] = y[w] + sum over valid slots j holding w of y[V + j].
std::vector<double> aggregate_word_probs(std::span<const double> y, const PointerState& state,
                                         std::size_t vocab_size);

// ---- Differentiable chunk form (fresh state at the start of every stream) ----

/// For each row r = t * batch + b and slot j, the row of the memory vector
/// that feeds the slot, or -1 when the slot is masked.
std::vector<std::ptrdiff_t> chunk_slot_sources(const PointerHead& head, std::span<const int> inputs,
                                               std::size_t steps, std::size_t batch);

/// Extended logits for every position of a chunk: (steps*batch) x (V + L).
Var chunk_logits(const Var& hiddens, const PointerHead& head, std::span<const int> inputs, std::size_t steps,
                 std::size_t batch);

/// Supervision index sets for every position of a chunk.
std::vector<std::vector<int>> chunk_supervision(const PointerHead& head, std::span<const int> inputs,
                                                std::span<const int> targets, std::size_t steps,
                                                std::size_t batch);

/// A[r, j] = P[r, j] + M[source(r, j)] (M optional), kMasked where source < 0.
Var pointer_slots(const Var& pointer, const Var* memory, std::span<const std::ptrdiff_t> sources);

/// Mean over rows of -log(sum_{i in s_r} softmax(z_r)_i). Per-row values are
/// written to `per_row` when given.
Var supervised_nll(const Var& logits, std::span<const std::vector<int>> supervision,
                   std::vector<double>* per_row = nullptr);

}  // namespace cachelm
