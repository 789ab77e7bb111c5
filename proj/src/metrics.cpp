#include "flashtrace/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flashtrace {

std::vector<std::size_t> rank_descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t x, std::size_t y) { return scores[x] > scores[y]; });
  return idx;
}

double recovery_rate(std::span<const double> attr, std::span<const std::size_t> ground_truth,
                     std::size_t input_len) {
  if (ground_truth.empty()) throw Error(Errc::invalid_argument, "empty ground truth");
  if (attr.size() != input_len) throw Error(Errc::shape_mismatch, "attribution length != input length");
  const std::size_t k = input_len / 10;
  if (k == 0) throw Error(Errc::context_too_short, "context too short for top-10%");
  std::vector<bool> is_gt(input_len, false);
  for (std::size_t g : ground_truth) {
    if (g >= input_len) throw Error(Errc::out_of_range, "ground-truth index " + std::to_string(g));
    is_gt[g] = true;
  }
  const std::size_t gt_count = static_cast<std::size_t>(std::count(is_gt.begin(), is_gt.end(), true));
  auto order = rank_descending(attr);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < k; ++r) hit += is_gt[order[r]] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(gt_count);
}

std::vector<std::size_t> deletion_schedule(std::size_t n) {
  if (n < kDeletionSteps) {
    throw Error(Errc::context_too_short, "deletion schedule needs at least 20 input tokens");
  }
  std::vector<std::size_t> counts(kDeletionSteps);
  for (std::size_t m = 1; m <= kDeletionSteps; ++m) {
    // round(m * n / 20), half up, in integers
    counts[m - 1] = (m * n + kDeletionSteps / 2) / kDeletionSteps;
  }
  for (std::size_t m = 1; m < kDeletionSteps; ++m) counts[m] = std::max(counts[m], counts[m - 1] + 1);
  return counts;
}

double target_probability(SequenceScorer& scorer, std::span<const TokenId> tokens,
                          const Segments& seg, std::span<const std::size_t> masked, CurveMode mode) {
  const LogprobResult r = scorer.score(tokens, IndexRange{seg.a, seg.n}, masked);
  if (r.span_tokens == 0) return 1.0;
  const double lp = mode == CurveMode::joint ? r.logprob : r.logprob / static_cast<double>(r.span_tokens);
  return std::exp(lp);
}

DeletionCurve deletion_curve(SequenceScorer& scorer, std::span<const TokenId> tokens,
                             const Segments& seg, std::span<const double> attr, CurveMode mode,
                             std::optional<double> baseline) {
  seg.validate();
  if (attr.size() != seg.a) throw Error(Errc::shape_mismatch, "attribution length != input length");
  DeletionCurve curve;
  curve.mode = mode;
  curve.baseline = baseline;
  curve.counts = deletion_schedule(seg.a);
  curve.order = rank_descending(attr);
  std::vector<std::size_t> masked;
  for (std::size_t k : curve.counts) {
    masked.assign(curve.order.begin(), curve.order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(masked.begin(), masked.end());
    curve.probabilities.push_back(target_probability(scorer, tokens, seg, masked, mode));
  }
  return curve;
}

double rise_deletion(std::span<const double> f) {
  if (f.empty()) throw Error(Errc::invalid_argument, "empty deletion curve");
  return std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
}

double mas_deletion(std::span<const double> f, std::span<const std::size_t> counts,
                    std::span<const std::size_t> order, std::span<const double> attr) {
  if (f.size() != counts.size()) throw Error(Errc::shape_mismatch, "curve and schedule differ in length");
  double total = 0.0;
  for (double a : attr) total += std::fabs(a);
  if (!(total > 0.0)) throw Error(Errc::undefined_alignment, "attribution is all zero");

  double penalty = 0.0;
  double cum = 0.0;
  std::size_t done = 0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (counts[k] > order.size() || counts[k] < done) {
      throw Error(Errc::invalid_argument, "masking counts must be nondecreasing and within the input");
    }
    for (; done < counts[k]; ++done) cum += std::fabs(attr[order[done]]);
    penalty += std::fabs(f[k] - cum / total);
  }
  return rise_deletion(f) + penalty / static_cast<double>(f.size());
}

double mas_deletion(const DeletionCurve& curve, std::span<const double> attr) {
  return mas_deletion(curve.probabilities, curve.counts, curve.order, attr);
}

}  // namespace flashtrace
