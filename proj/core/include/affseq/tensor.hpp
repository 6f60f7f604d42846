// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace affseq {

/// Dense row-major array of doubles. Every layer treats the last axis as the
/// feature axis and the leading axes as independent rows.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Width of the last axis.
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
  /// Product of all leading axes.
  std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(double v) noexcept;
  /// Same data under a new shape with an equal element count.
  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_string(const Tensor::Shape& shape);

/// Throws NumericFault naming `where` if the tensor holds NaN or Inf.
void check_finite(const Tensor& t, const std::string& where);

/// C[m x n] (+)= A[m x k] * B[k x n]
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c, bool accumulate);
/// C[k x n] (+)= A^T * B where A is [m x k], B is [m x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
/// C[m x k] (+)= A * B^T where A is [m x n], B is [k x n]
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);

/// Deterministic, platform-independent generator (xoshiro256** seeded through
/// splitmix64). Distribution helpers are implemented here rather than via
/// <random> distributions, whose outputs vary across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);
  std::uint64_t next();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

 private:
  std::uint64_t s_[4] = {};
};

/// Rounds every element to the nearest float32 value.
void round_to_float(Tensor& t) noexcept;

}  // namespace affseq
