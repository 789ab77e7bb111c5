#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "flashtrace/attribution.hpp"

namespace flashtrace {

inline constexpr std::size_t kDeletionSteps = 20;

enum class CurveMode {
  mean_token,  // exp of the mean per-token logprob over the target
  joint,       // exp of the summed logprob; underflows on long targets
};

struct DeletionCurve {
  std::vector<std::size_t> counts;      // cumulative masked tokens per step
  std::vector<double> probabilities;    // f_k
  std::vector<std::size_t> order;       // input positions, most important first
  std::optional<double> baseline;       // f_0, unmasked
  CurveMode mode = CurveMode::mean_token;
};

/// All indices ordered by descending score; ties go to the lower index.
std::vector<std::size_t> rank_descending(std::span<const double> scores);

/// Fraction of `ground_truth` inside the top floor(0.1 * input_len) scores.
double recovery_rate(std::span<const double> attr, std::span<const std::size_t> ground_truth,
                     std::size_t input_len);

/// Cumulative masked counts round(0.05 * m * n) for m = 1..20, round half up,
/// duplicates pushed upward. Requires n >= 20.
std::vector<std::size_t> deletion_schedule(std::size_t input_len);

/// Masks input tokens in descending attribution order following the schedule
/// and scores T and O after each step: exactly 20 scorer evaluations. The
/// unmasked baseline is recorded when supplied, never computed here.
DeletionCurve deletion_curve(SequenceScorer& scorer, std::span<const TokenId> tokens,
                             const Segments& seg, std::span<const double> attr,
                             CurveMode mode = CurveMode::mean_token,
                             std::optional<double> baseline = std::nullopt);

/// Probability of T and O under `mode` with `masked` replaced (one evaluation).
double target_probability(SequenceScorer& scorer, std::span<const TokenId> tokens,
                          const Segments& seg, std::span<const std::size_t> masked,
                          CurveMode mode);

/// Mean of the curve.
double rise_deletion(std::span<const double> probabilities);

/// RISE plus the mean gap between each f_k and the share of |attribution|
/// masked so far. `order` and `counts` describe the masking; throws
/// Errc::undefined_alignment when the attribution is all zero.
double mas_deletion(std::span<const double> probabilities, std::span<const std::size_t> counts,
                    std::span<const std::size_t> order, std::span<const double> attr);

double mas_deletion(const DeletionCurve& curve, std::span<const double> attr);

}  // namespace flashtrace
