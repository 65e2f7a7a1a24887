#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace cachelm {

using Shape = std::vector<std::size_t>;

/// Logit value for a pointer slot that holds no history. Softmax maps it to
/// exactly zero probability.
inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

inline bool is_masked(double v) noexcept { return v == kMasked; }

/// Dense row-major array of doubles. Rank 1 tensors behave as a single row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(Shape{rows, cols}); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(double v);
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Plain (non-differentiable) matrix product of two rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Numerically stable softmax. Masked entries become exactly 0.
/// Throws NumericError when every entry is masked.
std::vector<double> softmax(std::span<const double> logits);
Tensor softmax(const Tensor& logits);

/// log(sum(exp(v))) over the unmasked entries; kMasked if all are masked.
double log_sum_exp(std::span<const double> values);

}  // namespace cachelm
