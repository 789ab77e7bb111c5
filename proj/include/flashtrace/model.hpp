#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flashtrace/numerics.hpp"

namespace flashtrace {

using TokenId = std::uint32_t;

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_model = 64;
  std::size_t d_head = 32;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 128;
  std::size_t max_seq_len = 2048;
  double norm_epsilon = 1e-6;
  double rope_base = 10000.0;

  /// Throws Errc::bad_config naming the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
  std::vector<float> attn_norm_g;  // D
  MatrixF wq, wk, wv, wo;          // D x D; head h owns columns [h*dh, (h+1)*dh) of wq/wk/wv and the same rows of wo
  std::vector<float> attn_b;       // D
  std::vector<float> mlp_norm_g;   // D
  MatrixF w_gate, w_up;            // D x d_ff
  MatrixF w_down;                  // d_ff x D
};

struct ModelWeights {
  MatrixF tok_emb;  // V x D
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm_g;  // D
  MatrixF unemb;                    // D x V

  /// Throws Errc::shape_mismatch / Errc::non_finite on any inconsistency with `config`.
  void check(const ModelConfig& config) const;
};

struct LayerTrace {
  Matrix x_in;   // N x D, residual stream entering the layer
  Matrix x_mid;  // N x D, after the attention block
  Matrix x_out;  // N x D, after the MLP block
  Matrix s_attn; // N x D, RMS scale applied before attention: Norm(x_in) = x_in * s_attn
  Matrix s_mlp;  // N x D, RMS scale applied before the MLP
  Matrix mlp_out;
  std::vector<Matrix> attn;  // H maps, N x N, causal and row-stochastic
};

/// Everything the attribution passes read, captured during one forward pass.
struct ForwardTrace {
  ModelConfig config;
  std::vector<TokenId> tokens;
  std::size_t position_offset = 0;
  std::vector<LayerTrace> layers;
  Matrix logits;  // N x V

  std::size_t size() const noexcept { return tokens.size(); }
};

/// RMS normalization as an elementwise scale: Norm(x) = x * s with
/// s_d = gain_d / sqrt(mean(x^2) + eps).
Vector rms_scale(std::span<const double> x, std::span<const float> gain, double eps);

/// Runs the model over `tokens`, caching every intermediate the attribution
/// engine needs. Rotary phases start at `position_offset`.
ForwardTrace forward_trace(const ModelConfig& config, const ModelWeights& weights,
                           std::span<const TokenId> tokens, std::size_t position_offset = 0);

/// Logits only; nothing else is retained.
Matrix forward_logits(const ModelConfig& config, const ModelWeights& weights,
                      std::span<const TokenId> tokens);

/// Per-head transformed value of source position j at `layer`:
/// (x_in_j * s_attn_j) W_V[:, head] W_O[head, :]. Independent of any target.
Vector transformed_value(const ForwardTrace& trace, const ModelWeights& weights, std::size_t layer,
                         std::size_t head, std::size_t j);

/// Same as transformed_value, written into `out` (size D) using `scratch`
/// (size d_head) so hot loops avoid allocation.
void transformed_value_into(const ForwardTrace& trace, const ModelWeights& weights,
                            std::size_t layer, std::size_t head, std::size_t j,
                            std::span<double> scratch, std::span<double> out);

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end > begin ? end - begin : 0; }
  bool empty() const noexcept { return end <= begin; }
};

struct LogprobResult {
  double logprob = 0.0;
  std::size_t span_tokens = 0;
  bool empty_span = false;
};

/// Teacher-forced log-probability of tokens[target_span] after replacing
/// `masked_positions` by `mask_token_id`. Position p is scored from the
/// logits at p - 1, so the span must start at 1 or later.
LogprobResult sequence_logprob(const ModelConfig& config, const ModelWeights& weights,
                               std::span<const TokenId> tokens, IndexRange target_span,
                               std::span<const std::size_t> masked_positions,
                               TokenId mask_token_id);

/// Counts forward evaluations; metrics and perturbation baselines go through it.
class SequenceScorer {
 public:
  SequenceScorer(const ModelConfig& config, const ModelWeights& weights, TokenId mask_token_id)
      : config_(&config), weights_(&weights), mask_(mask_token_id) {}

  LogprobResult score(std::span<const TokenId> tokens, IndexRange target_span,
                      std::span<const std::size_t> masked_positions);

  std::size_t evaluations() const noexcept { return evaluations_; }
  TokenId mask_token_id() const noexcept { return mask_; }

 private:
  const ModelConfig* config_;
  const ModelWeights* weights_;
  TokenId mask_;
  std::size_t evaluations_ = 0;
};

/// Unit-Gaussian token embeddings; every other matrix (and the attention
/// bias) Gaussian with scale 0.02 / sqrt(L); norm gains are one.
ModelWeights random_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace flashtrace
