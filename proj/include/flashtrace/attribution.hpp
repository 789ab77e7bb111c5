#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flashtrace/model.hpp"
#include "flashtrace/working_memory.hpp"

namespace flashtrace {

/// Partition of a sequence into input I = [0, a), reasoning T = [a, b) and
/// output O = [b, n).
struct Segments {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t n = 0;

  /// Requires 0 < a <= b < n.
  void validate() const;

  IndexRange input() const noexcept { return {0, a}; }
  IndexRange reasoning() const noexcept { return {a, b}; }
  IndexRange output() const noexcept { return {b, n}; }
};

struct SpanTarget {
  std::vector<std::size_t> indices;
  std::vector<double> weights;

  static SpanTarget uniform(IndexRange range, double weight = 1.0);
  static SpanTarget single(std::size_t index) { return {{index}, {1.0}}; }

  /// Strictly increasing indices below `n`, finite non-negative weights,
  /// at least one positive.
  void validate(std::size_t n) const;
  std::size_t last() const { return indices.back(); }
};

struct HopRecord {
  Vector w;           // distribution over all n positions
  double rho = 0.0;   // mass of w on the reasoning segment
};

struct AttributionResult {
  std::string method;
  std::size_t n = 0;
  Segments segments;
  std::vector<HopRecord> hops;
  Vector final;  // over the input segment
  std::vector<std::string> flags;
  int hops_requested = 0;

  /// Number of recursive hops actually executed (hop 0 excluded).
  std::size_t hops_completed() const noexcept { return hops.empty() ? 0 : hops.size() - 1; }
};

struct Instrumentation {
  /// Source-token contribution vectors evaluated: one per (layer, head,
  /// source) visited, each a D-dimensional projection plus proximity.
  std::uint64_t vector_ops = 0;
  MemoryTracker* memory = nullptr;
};

struct AttributionOptions {
  std::size_t source_block = 256;
};

/// max(0, ||y||_1 - ||y - z||_1)
double proximity(std::span<const double> z, std::span<const double> y);

/// alpha^S_j = sum_k weights[k] * attn(indices[k], j), for every column j.
Vector span_attention_sum(const Matrix& attn, const SpanTarget& target);

/// Span-wise attribution of the weighted target to every position; sums to
/// one, zero after the last target index.
Vector span_attribute(const ForwardTrace& trace, const ModelWeights& weights,
                      const SpanTarget& target, const AttributionOptions& options = {},
                      Instrumentation* instr = nullptr);

/// Mean of single-token span attributions over `span`, renormalized. Tokens
/// whose own attribution is degenerate are left out; throws
/// Errc::degenerate_target only when all of them are.
Vector naive_token_attribution(const ForwardTrace& trace, const ModelWeights& weights,
                               IndexRange span, const AttributionOptions& options = {},
                               Instrumentation* instr = nullptr);

Vector renormalize_to_input(std::span<const double> w, const Segments& seg);

/// inputs[0] + sum_{k>=1} (prod_{j<k} rhos[j]) * inputs[k]. `rhos` needs at
/// least inputs.size() - 1 entries.
Vector accumulate_hops(std::span<const Vector> inputs, std::span<const double> rhos);

AttributionResult recursive_attribute(const ForwardTrace& trace, const ModelWeights& weights,
                                      const Segments& seg, int hops,
                                      const AttributionOptions& options = {},
                                      Instrumentation* instr = nullptr);

AttributionResult exhaustive_rollout(const ForwardTrace& trace, const ModelWeights& weights,
                                     const Segments& seg, const AttributionOptions& options = {},
                                     Instrumentation* instr = nullptr);

/// Perturbation baseline over fixed-size chunks of the input (chunk_size <= 1
/// means single tokens). Scores are drops in log-probability of T and O.
AttributionResult leave_one_out(SequenceScorer& scorer, std::span<const TokenId> tokens,
                                const Segments& seg, std::size_t chunk_size);

}  // namespace flashtrace
