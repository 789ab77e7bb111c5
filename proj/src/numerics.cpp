#include "flashtrace/numerics.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace flashtrace {

bool all_finite(std::span<const double> v) noexcept {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool all_finite(std::span<const float> v) noexcept {
  for (float x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double l1_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(Errc::non_finite, "l1_norm input");
    acc += std::fabs(x);
  }
  return acc;
}

Vector weighted_row_sum(const Matrix& m, std::span<const std::size_t> indices,
                        std::span<const double> weights) {
  if (indices.size() != weights.size()) {
    throw Error(Errc::shape_mismatch, "weighted_row_sum: one weight per index required");
  }
  Vector out(m.cols(), 0.0);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= m.rows()) {
      throw Error(Errc::out_of_range, "weighted_row_sum: row " + std::to_string(indices[k]));
    }
    const double w = weights[k];
    if (w == 0.0) continue;
    auto r = m.row(indices[k]);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * r[c];
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) noexcept {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<float> deterministic_tensor(std::uint64_t seed, std::span<const std::size_t> shape,
                                        double scale) {
  if (!(scale >= 0.0)) throw Error(Errc::invalid_argument, "deterministic_tensor: scale < 0");
  std::size_t count = 1;
  for (std::size_t d : shape) count *= d;
  std::vector<float> out(count, 0.0f);
  if (scale == 0.0) return out;

  std::mt19937_64 engine(seed);
  auto uniform = [&engine] {
    // (0, 1]: never zero so the log below stays finite
    return (static_cast<double>(engine() >> 11) + 1.0) * 0x1.0p-53;
  };
  for (std::size_t i = 0; i < count; i += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    out[i] = static_cast<float>(scale * r * std::cos(theta));
    if (i + 1 < count) out[i + 1] = static_cast<float>(scale * r * std::sin(theta));
  }
  return out;
}

MatrixF deterministic_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols, double scale) {
  const std::size_t shape[] = {rows, cols};
  return MatrixF(rows, cols, deterministic_tensor(seed, shape, scale));
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw Error(Errc::invalid_argument, "Rng::below(0)");
  // rejection keeps the draw unbiased
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

}  // namespace flashtrace
