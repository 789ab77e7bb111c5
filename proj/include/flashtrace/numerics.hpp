#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "flashtrace/error.hpp"

namespace flashtrace {

using Vector = std::vector<double>;

/// Dense row-major matrix. The shape is fixed at construction; only element
/// values may change afterwards.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(Errc::shape_mismatch, "matrix data does not match its shape");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

/// Sum of absolute values. Throws Errc::non_finite on NaN/Inf input.
double l1_norm(std::span<const double> v);

/// Returns sum_k weights[k] * m.row(indices[k]).
Vector weighted_row_sum(const Matrix& m, std::span<const std::size_t> indices,
                        std::span<const double> weights);

bool all_finite(std::span<const double> v) noexcept;
bool all_finite(std::span<const float> v) noexcept;

/// Seeded Gaussian tensor, N(0, scale^2), rounded to float storage.
///
/// Generator: std::mt19937_64 seeded with `seed`, each pair of 53-bit
/// uniforms (u1, u2) in (0, 1] turned into two normals with the
/// Box-Muller transform (r = sqrt(-2 ln u1), angles 2*pi*u2). The engine
/// sequence is fixed by the C++ standard, so identical arguments give
/// bitwise-identical tensors on every conforming platform that shares a
/// libm.
std::vector<float> deterministic_tensor(std::uint64_t seed, std::span<const std::size_t> shape,
                                        double scale);

MatrixF deterministic_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols, double scale);

/// Derives an independent stream seed from a base seed and a stream tag.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) noexcept;

/// Portable draws on top of std::mt19937_64. The standard distributions are
/// implementation-defined, these are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform in [0, n); n must be positive.
  std::size_t below(std::size_t n);
  /// Uniform in [lo, hi].
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace flashtrace
