#include "flashtrace/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace flashtrace {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(Errc::bad_config, what);
}

void check_shape(const MatrixF& m, std::size_t rows, std::size_t cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(Errc::shape_mismatch, name + " has shape " + std::to_string(m.rows()) + "x" +
                                          std::to_string(m.cols()) + ", expected " +
                                          std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (!all_finite(m.data())) throw Error(Errc::non_finite, name);
}

void check_shape(const std::vector<float>& v, std::size_t n, const std::string& name) {
  if (v.size() != n) {
    throw Error(Errc::shape_mismatch, name + " has length " + std::to_string(v.size()) +
                                          ", expected " + std::to_string(n));
  }
  if (!all_finite(std::span<const float>(v))) throw Error(Errc::non_finite, name);
}

// Four independent partial sums: the compiler keeps the order fixed but can
// overlap the multiply-adds.
double dot(const double* x, const double* y, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t c = 0;
  for (; c + 4 <= n; c += 4) {
    s0 += x[c] * y[c];
    s1 += x[c + 1] * y[c + 1];
    s2 += x[c + 2] * y[c + 2];
    s3 += x[c + 3] * y[c + 3];
  }
  for (; c < n; ++c) s0 += x[c] * y[c];
  return (s0 + s1) + (s2 + s3);
}

// out (rows x B.cols) = A (rows x K) * B (K x cols)
Matrix matmul(const Matrix& a, const MatrixF& b) {
  Matrix out(a.rows(), b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    auto src = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double x = src[k];
      if (x == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += x * static_cast<double>(brow[c]);
    }
  }
  return out;
}

// Rotates consecutive pairs (2k, 2k+1) inside each head by pos * base^(-2k/dh).
// An odd trailing dimension is left as is.
void apply_rope(Matrix& m, const ModelConfig& cfg, std::size_t position_offset) {
  const std::size_t dh = cfg.d_head;
  const std::size_t pairs = dh / 2;
  std::vector<double> inv_freq(pairs);
  for (std::size_t k = 0; k < pairs; ++k) {
    inv_freq[k] = std::pow(cfg.rope_base, -2.0 * static_cast<double>(k) / static_cast<double>(dh));
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double pos = static_cast<double>(i + position_offset);
    auto r = m.row(i);
    for (std::size_t k = 0; k < pairs; ++k) {
      const double angle = pos * inv_freq[k];
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::size_t base = h * dh + 2 * k;
        const double x0 = r[base];
        const double x1 = r[base + 1];
        r[base] = x0 * c - x1 * s;
        r[base + 1] = x0 * s + x1 * c;
      }
    }
  }
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw Error(Errc::invalid_argument, "empty token sequence");
  if (tokens.size() > config.max_seq_len) {
    throw Error(Errc::invalid_argument, "sequence of " + std::to_string(tokens.size()) +
                                            " tokens exceeds max_seq_len " +
                                            std::to_string(config.max_seq_len));
  }
  for (TokenId t : tokens) {
    if (t >= config.vocab_size) {
      throw Error(Errc::out_of_range, "token id " + std::to_string(t) + " >= vocab size");
    }
  }
}

// Shared forward. When `trace` is non-null every stage is cached there.
Matrix run_forward(const ModelConfig& cfg, const ModelWeights& w, std::span<const TokenId> tokens,
                   std::size_t position_offset, ForwardTrace* trace) {
  check_tokens(cfg, tokens);
  const std::size_t n = tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.d_head;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto e = w.tok_emb.row(tokens[i]);
    std::copy(e.begin(), e.end(), x.row(i).begin());
  }

  std::vector<double> scores(n);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& lw = w.layers[l];

    Matrix s1(n, d);
    Matrix xn(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      Vector s = rms_scale(x.row(i), lw.attn_norm_g, cfg.norm_epsilon);
      auto xr = x.row(i);
      std::copy(s.begin(), s.end(), s1.row(i).begin());
      for (std::size_t c = 0; c < d; ++c) xn(i, c) = xr[c] * s[c];
    }
    Matrix q = matmul(xn, lw.wq);
    Matrix k = matmul(xn, lw.wk);
    Matrix v = matmul(xn, lw.wv);
    apply_rope(q, cfg, position_offset);
    apply_rope(k, cfg, position_offset);

    std::vector<Matrix> maps;
    Matrix ctx(n, d, 0.0);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const std::size_t off = h * dh;
      Matrix a = trace ? Matrix(n, n, 0.0) : Matrix();
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = &q(i, off);
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = dot(qi, &k(j, off), dh) * inv_sqrt_dh;
          mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        double* ci = &ctx(i, off);
        for (std::size_t j = 0; j <= i; ++j) {
          const double p = scores[j] / z;
          if (trace) a(i, j) = p;
          const double* vj = &v(j, off);
          for (std::size_t c = 0; c < dh; ++c) ci[c] += p * vj[c];
        }
      }
      if (trace) maps.push_back(std::move(a));
    }
    Matrix attn_out = matmul(ctx, lw.wo);
    Matrix x_mid(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        x_mid(i, c) = x(i, c) + attn_out(i, c) + static_cast<double>(lw.attn_b[c]);
      }
    }

    Matrix s2(n, d);
    Matrix xn2(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      Vector s = rms_scale(x_mid.row(i), lw.mlp_norm_g, cfg.norm_epsilon);
      std::copy(s.begin(), s.end(), s2.row(i).begin());
      for (std::size_t c = 0; c < d; ++c) xn2(i, c) = x_mid(i, c) * s[c];
    }
    Matrix gate = matmul(xn2, lw.w_gate);
    Matrix up = matmul(xn2, lw.w_up);
    for (std::size_t i = 0; i < gate.size(); ++i) gate.data()[i] = silu(gate.data()[i]) * up.data()[i];
    Matrix mlp = matmul(gate, lw.w_down);
    Matrix x_out(n, d);
    for (std::size_t i = 0; i < x_out.size(); ++i) x_out.data()[i] = x_mid.data()[i] + mlp.data()[i];

    if (trace) {
      LayerTrace lt;
      lt.x_in = std::move(x);
      lt.x_mid = std::move(x_mid);
      lt.x_out = x_out;
      lt.s_attn = std::move(s1);
      lt.s_mlp = std::move(s2);
      lt.mlp_out = std::move(mlp);
      lt.attn = std::move(maps);
      trace->layers.push_back(std::move(lt));
    }
    x = std::move(x_out);
  }

  Matrix xf(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    Vector s = rms_scale(x.row(i), w.final_norm_g, cfg.norm_epsilon);
    for (std::size_t c = 0; c < d; ++c) xf(i, c) = x(i, c) * s[c];
  }
  return matmul(xf, w.unemb);
}

}  // namespace

void ModelConfig::validate() const {
  require(n_layers >= 1, "n_layers must be >= 1");
  require(n_heads >= 1, "n_heads must be >= 1");
  require(d_head >= 1, "d_head must be >= 1");
  require(d_model == n_heads * d_head, "d_model must equal n_heads * d_head");
  require(d_ff >= 1, "d_ff must be >= 1");
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(max_seq_len >= 1, "max_seq_len must be >= 1");
  require(norm_epsilon > 0.0, "norm_epsilon must be > 0");
  require(rope_base > 0.0, "rope_base must be > 0");
}

void ModelWeights::check(const ModelConfig& cfg) const {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  check_shape(tok_emb, cfg.vocab_size, d, "tok_emb");
  check_shape(unemb, d, cfg.vocab_size, "unemb");
  check_shape(final_norm_g, d, "final_norm_g");
  if (layers.size() != cfg.n_layers) {
    throw Error(Errc::shape_mismatch, "layer count " + std::to_string(layers.size()) +
                                          " != n_layers " + std::to_string(cfg.n_layers));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    const LayerWeights& lw = layers[l];
    check_shape(lw.attn_norm_g, d, p + "attn_norm_g");
    check_shape(lw.wq, d, d, p + "wq");
    check_shape(lw.wk, d, d, p + "wk");
    check_shape(lw.wv, d, d, p + "wv");
    check_shape(lw.wo, d, d, p + "wo");
    check_shape(lw.attn_b, d, p + "attn_b");
    check_shape(lw.mlp_norm_g, d, p + "mlp_norm_g");
    check_shape(lw.w_gate, d, cfg.d_ff, p + "w_gate");
    check_shape(lw.w_up, d, cfg.d_ff, p + "w_up");
    check_shape(lw.w_down, cfg.d_ff, d, p + "w_down");
  }
}

Vector rms_scale(std::span<const double> x, std::span<const float> gain, double eps) {
  if (!(eps >= 0.0)) throw Error(Errc::invalid_argument, "rms_scale: eps < 0");
  if (gain.size() != x.size()) throw Error(Errc::shape_mismatch, "rms_scale: gain size");
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + eps);
  Vector s(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) s[i] = static_cast<double>(gain[i]) * inv;
  return s;
}

ForwardTrace forward_trace(const ModelConfig& config, const ModelWeights& weights,
                           std::span<const TokenId> tokens, std::size_t position_offset) {
  ForwardTrace trace;
  trace.config = config;
  trace.tokens.assign(tokens.begin(), tokens.end());
  trace.position_offset = position_offset;
  trace.layers.reserve(config.n_layers);
  trace.logits = run_forward(config, weights, tokens, position_offset, &trace);
  return trace;
}

Matrix forward_logits(const ModelConfig& config, const ModelWeights& weights,
                      std::span<const TokenId> tokens) {
  return run_forward(config, weights, tokens, 0, nullptr);
}

void transformed_value_into(const ForwardTrace& trace, const ModelWeights& weights,
                            std::size_t layer, std::size_t head, std::size_t j,
                            std::span<double> scratch, std::span<double> out) {
  const ModelConfig& cfg = trace.config;
  if (layer >= cfg.n_layers || head >= cfg.n_heads || j >= trace.size()) {
    throw Error(Errc::out_of_range, "transformed_value: layer/head/position");
  }
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.d_head;
  const std::size_t off = head * dh;
  const LayerTrace& lt = trace.layers[layer];
  const LayerWeights& lw = weights.layers[layer];
  auto x = lt.x_in.row(j);
  auto s = lt.s_attn.row(j);

  std::fill(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(dh), 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    const double xn = x[r] * s[r];
    if (xn == 0.0) continue;
    const float* wv = &lw.wv(r, off);
    for (std::size_t c = 0; c < dh; ++c) scratch[c] += xn * static_cast<double>(wv[c]);
  }
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
  for (std::size_t c = 0; c < dh; ++c) {
    const double t = scratch[c];
    if (t == 0.0) continue;
    auto wo = lw.wo.row(off + c);
    for (std::size_t e = 0; e < d; ++e) out[e] += t * static_cast<double>(wo[e]);
  }
}

Vector transformed_value(const ForwardTrace& trace, const ModelWeights& weights, std::size_t layer,
                         std::size_t head, std::size_t j) {
  Vector scratch(trace.config.d_head);
  Vector out(trace.config.d_model);
  transformed_value_into(trace, weights, layer, head, j, scratch, out);
  return out;
}

LogprobResult sequence_logprob(const ModelConfig& config, const ModelWeights& weights,
                               std::span<const TokenId> tokens, IndexRange target_span,
                               std::span<const std::size_t> masked_positions,
                               TokenId mask_token_id) {
  LogprobResult result;
  if (target_span.empty()) {
    result.empty_span = true;
    return result;
  }
  if (target_span.end > tokens.size()) {
    throw Error(Errc::out_of_range, "sequence_logprob: target span beyond sequence");
  }
  if (target_span.begin == 0) {
    throw Error(Errc::invalid_argument, "sequence_logprob: position 0 has no preceding context");
  }
  std::vector<TokenId> masked(tokens.begin(), tokens.end());
  for (std::size_t p : masked_positions) {
    if (p >= target_span.begin) {
      throw Error(Errc::invalid_argument, "sequence_logprob: masked position inside target region");
    }
    masked[p] = mask_token_id;
  }
  // Positions past the span never influence it under causal attention.
  std::span<const TokenId> prefix(masked.data(), target_span.end - 1);
  Matrix logits = forward_logits(config, weights, prefix);
  double total = 0.0;
  for (std::size_t p = target_span.begin; p < target_span.end; ++p) {
    auto row = logits.row(p - 1);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += row[masked[p]] - mx - std::log(z);
  }
  result.logprob = total;
  result.span_tokens = target_span.size();
  return result;
}

LogprobResult SequenceScorer::score(std::span<const TokenId> tokens, IndexRange target_span,
                                    std::span<const std::size_t> masked_positions) {
  if (!target_span.empty()) ++evaluations_;
  return sequence_logprob(*config_, *weights_, tokens, target_span, masked_positions, mask_);
}

ModelWeights random_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const double scale = 0.02 / std::sqrt(static_cast<double>(cfg.n_layers));
  const std::size_t d = cfg.d_model;
  std::uint64_t tag = 0;
  auto next = [&](std::size_t r, std::size_t c) {
    return deterministic_matrix(mix_seed(seed, tag++), r, c, scale);
  };
  ModelWeights w;
  w.tok_emb = deterministic_matrix(mix_seed(seed, tag++), cfg.vocab_size, d, 1.0);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm_g.assign(d, 1.0f);
    lw.wq = next(d, d);
    lw.wk = next(d, d);
    lw.wv = next(d, d);
    lw.wo = next(d, d);
    {
      MatrixF b = next(1, d);
      lw.attn_b.assign(b.data().begin(), b.data().end());
    }
    lw.mlp_norm_g.assign(d, 1.0f);
    lw.w_gate = next(d, cfg.d_ff);
    lw.w_up = next(d, cfg.d_ff);
    lw.w_down = next(cfg.d_ff, d);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm_g.assign(d, 1.0f);
  w.unemb = next(d, cfg.vocab_size);
  return w;
}

}  // namespace flashtrace
