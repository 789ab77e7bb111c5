#include "flashtrace/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flashtrace {

namespace {

double sum_over(std::span<const double> w, IndexRange r) {
  double s = 0.0;
  for (std::size_t i = r.begin; i < r.end; ++i) s += w[i];
  return s;
}

Vector restrict_to(std::span<const double> w, IndexRange r) {
  return Vector(w.begin() + static_cast<std::ptrdiff_t>(r.begin),
                w.begin() + static_cast<std::ptrdiff_t>(r.end));
}

void check_trace(const ForwardTrace& trace, const ModelWeights& weights) {
  if (trace.layers.size() != trace.config.n_layers || weights.layers.size() != trace.config.n_layers) {
    throw Error(Errc::shape_mismatch, "trace and weights disagree on layer count");
  }
}

}  // namespace

void Segments::validate() const {
  if (!(0 < a && a <= b && b < n)) {
    throw Error(Errc::invalid_argument, "segments need 0 < a <= b < n, got a=" + std::to_string(a) +
                                            " b=" + std::to_string(b) + " n=" + std::to_string(n));
  }
}

SpanTarget SpanTarget::uniform(IndexRange range, double weight) {
  SpanTarget t;
  for (std::size_t i = range.begin; i < range.end; ++i) {
    t.indices.push_back(i);
    t.weights.push_back(weight);
  }
  return t;
}

void SpanTarget::validate(std::size_t n) const {
  if (indices.empty()) throw Error(Errc::invalid_argument, "empty target span");
  if (indices.size() != weights.size()) {
    throw Error(Errc::shape_mismatch, "target span needs one weight per index");
  }
  bool positive = false;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= n) throw Error(Errc::out_of_range, "target index " + std::to_string(indices[k]));
    if (k > 0 && indices[k] <= indices[k - 1]) {
      throw Error(Errc::invalid_argument, "target indices must be strictly increasing");
    }
    if (!std::isfinite(weights[k]) || weights[k] < 0.0) {
      throw Error(Errc::invalid_argument, "target weights must be finite and non-negative");
    }
    positive = positive || weights[k] > 0.0;
  }
  if (!positive) throw Error(Errc::invalid_argument, "target span has no positive weight");
}

double proximity(std::span<const double> z, std::span<const double> y) {
  if (z.size() != y.size()) throw Error(Errc::shape_mismatch, "proximity: dimension mismatch");
  double ny = 0.0;
  double nd = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ny += std::fabs(y[i]);
    nd += std::fabs(y[i] - z[i]);
  }
  return std::max(0.0, ny - nd);
}

Vector span_attention_sum(const Matrix& attn, const SpanTarget& target) {
  Vector out(attn.cols(), 0.0);
  for (std::size_t k = 0; k < target.indices.size(); ++k) {
    const std::size_t i = target.indices[k];
    if (i >= attn.rows()) throw Error(Errc::out_of_range, "span index " + std::to_string(i));
    const double w = target.weights[k];
    if (w == 0.0) continue;
    auto row = attn.row(i);
    // causal map: nothing right of the diagonal
    for (std::size_t j = 0; j <= i && j < out.size(); ++j) out[j] += w * row[j];
  }
  return out;
}

Vector span_attribute(const ForwardTrace& trace, const ModelWeights& weights,
                      const SpanTarget& target, const AttributionOptions& options,
                      Instrumentation* instr) {
  check_trace(trace, weights);
  const std::size_t n = trace.size();
  target.validate(n);
  const ModelConfig& cfg = trace.config;
  const std::size_t d = cfg.d_model;
  const std::size_t sources = target.last() + 1;
  const std::size_t block = std::max<std::size_t>(1, options.source_block);
  MemoryTracker* mem = instr ? instr->memory : nullptr;

  TrackingAllocator<double> alloc(mem);
  TrackedVector<double> scores(sources, 0.0, alloc);      // accumulated normalized scores
  TrackedVector<double> layer_raw(sources, 0.0, alloc);   // raw token scores of one layer
  TrackedVector<double> alpha(sources, 0.0, alloc);       // pre-aggregated attention
  TrackedVector<double> y_mid(d, 0.0, alloc);
  TrackedVector<double> y_out(d, 0.0, alloc);
  TrackedVector<double> resid(d, 0.0, alloc);
  TrackedVector<double> mlp(d, 0.0, alloc);
  TrackedVector<double> values(std::min(block, sources) * d, 0.0, alloc);
  TrackedVector<double> scratch(cfg.d_head, 0.0, alloc);

  double weight_total = 0.0;
  for (double w : target.weights) weight_total += w;

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerTrace& lt = trace.layers[l];
    const LayerWeights& lw = weights.layers[l];

    std::fill(y_mid.begin(), y_mid.end(), 0.0);
    std::fill(y_out.begin(), y_out.end(), 0.0);
    std::fill(resid.begin(), resid.end(), 0.0);
    std::fill(mlp.begin(), mlp.end(), 0.0);
    for (std::size_t k = 0; k < target.indices.size(); ++k) {
      const std::size_t i = target.indices[k];
      const double w = target.weights[k];
      if (w == 0.0) continue;
      auto xm = lt.x_mid.row(i);
      auto xo = lt.x_out.row(i);
      auto xi = lt.x_in.row(i);
      auto mo = lt.mlp_out.row(i);
      for (std::size_t c = 0; c < d; ++c) {
        y_mid[c] += w * xm[c];
        y_out[c] += w * xo[c];
        resid[c] += w * xi[c];
        mlp[c] += w * mo[c];
      }
    }
    // the attention bias belongs to no source token: it joins the residual sink
    for (std::size_t c = 0; c < d; ++c) resid[c] += weight_total * static_cast<double>(lw.attn_b[c]);

    double y_norm = 0.0;
    for (double v : y_mid) y_norm += std::fabs(v);
    if (!std::isfinite(y_norm)) throw Error(Errc::non_finite, "aggregated target");
    if (y_norm == 0.0) {
      throw Error(Errc::degenerate_target, "aggregated target vanishes at layer " + std::to_string(l));
    }

    std::fill(layer_raw.begin(), layer_raw.end(), 0.0);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const Matrix& attn = lt.attn[h];
      std::fill(alpha.begin(), alpha.end(), 0.0);
      for (std::size_t k = 0; k < target.indices.size(); ++k) {
        const std::size_t i = target.indices[k];
        const double w = target.weights[k];
        if (w == 0.0) continue;
        auto row = attn.row(i);
        for (std::size_t j = 0; j <= i; ++j) alpha[j] += w * row[j];
      }

      for (std::size_t j0 = 0; j0 < sources; j0 += block) {
        const std::size_t j1 = std::min(sources, j0 + block);
        for (std::size_t j = j0; j < j1; ++j) {
          std::span<double> v(values.data() + (j - j0) * d, d);
          transformed_value_into(trace, weights, l, h, j, scratch, v);
        }
        for (std::size_t j = j0; j < j1; ++j) {
          const double a = alpha[j];
          const double* v = values.data() + (j - j0) * d;
          double dist = 0.0;
          for (std::size_t c = 0; c < d; ++c) dist += std::fabs(y_mid[c] - a * v[c]);
          layer_raw[j] += std::max(0.0, y_norm - dist);
        }
        if (instr) instr->vector_ops += j1 - j0;
      }
    }

    const double e_res = proximity(resid, y_mid);
    const double e_mlp = proximity(mlp, y_out);
    double denom = e_res + e_mlp;
    for (double e : layer_raw) denom += e;
    if (denom > 0.0) {
      for (std::size_t j = 0; j < sources; ++j) scores[j] += layer_raw[j] / denom;
    }
  }

  double total = 0.0;
  for (double s : scores) total += s;
  if (!(total > 0.0)) {
    throw Error(Errc::degenerate_target, "no source token received attribution mass");
  }
  Vector out(n, 0.0);
  for (std::size_t j = 0; j < sources; ++j) out[j] = scores[j] / total;
  return out;
}

Vector naive_token_attribution(const ForwardTrace& trace, const ModelWeights& weights,
                               IndexRange span, const AttributionOptions& options,
                               Instrumentation* instr) {
  if (span.empty()) throw Error(Errc::invalid_argument, "naive attribution over an empty span");
  if (span.end > trace.size()) throw Error(Errc::out_of_range, "naive attribution span");
  const std::size_t n = trace.size();
  // One distribution per target token, kept until the average is formed.
  TrackingAllocator<double> alloc(instr ? instr->memory : nullptr);
  TrackedVector<double> per_token(span.size() * n, 0.0, alloc);
  // A target with no attributable mass (e.g. position 0, which only sees
  // itself) is left out of the average rather than failing the whole span.
  std::size_t used = 0;
  for (std::size_t i = span.begin; i < span.end; ++i) {
    Vector a;
    try {
      a = span_attribute(trace, weights, SpanTarget::single(i), options, instr);
    } catch (const Error& e) {
      if (e.code() != Errc::degenerate_target) throw;
      continue;
    }
    std::copy(a.begin(), a.end(), per_token.begin() + static_cast<std::ptrdiff_t>(used * n));
    ++used;
  }
  if (used == 0) throw Error(Errc::degenerate_target, "every target token in the span is degenerate");
  Vector mean(n, 0.0);
  for (std::size_t t = 0; t < used; ++t) {
    for (std::size_t j = 0; j < n; ++j) mean[j] += per_token[t * n + j];
  }
  const double inv = 1.0 / static_cast<double>(used);
  double total = 0.0;
  for (double& m : mean) {
    m *= inv;
    total += m;
  }
  for (double& m : mean) m /= total;
  return mean;
}

Vector renormalize_to_input(std::span<const double> w, const Segments& seg) {
  if (seg.a > w.size()) throw Error(Errc::out_of_range, "input segment beyond distribution");
  const double mass = sum_over(w, seg.input());
  if (!(mass > 0.0)) throw Error(Errc::no_input_mass, "distribution has no mass on the input segment");
  Vector out = restrict_to(w, seg.input());
  for (double& v : out) v /= mass;
  return out;
}

Vector accumulate_hops(std::span<const Vector> inputs, std::span<const double> rhos) {
  if (inputs.empty()) return {};
  if (rhos.size() + 1 < inputs.size()) {
    throw Error(Errc::invalid_argument, "accumulate_hops: one flow ratio per discounted hop");
  }
  Vector out = inputs[0];
  double discount = 1.0;
  for (std::size_t k = 1; k < inputs.size(); ++k) {
    if (inputs[k].size() != out.size()) throw Error(Errc::shape_mismatch, "accumulate_hops");
    discount *= rhos[k - 1];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += discount * inputs[k][i];
  }
  return out;
}

AttributionResult recursive_attribute(const ForwardTrace& trace, const ModelWeights& weights,
                                      const Segments& seg, int hops,
                                      const AttributionOptions& options, Instrumentation* instr) {
  if (hops < 0) throw Error(Errc::invalid_argument, "hop count must be >= 0");
  seg.validate();
  if (seg.n != trace.size()) throw Error(Errc::shape_mismatch, "segments do not cover the trace");

  AttributionResult result;
  result.method = "flashtrace";
  result.n = seg.n;
  result.segments = seg;
  result.hops_requested = hops;

  const IndexRange think = seg.reasoning();
  Vector w = span_attribute(trace, weights, SpanTarget::uniform(seg.output()), options, instr);
  result.hops.push_back({w, sum_over(w, think)});

  std::vector<Vector> input_parts{restrict_to(w, seg.input())};
  std::vector<double> rhos;
  for (int k = 1; k <= hops; ++k) {
    const HopRecord& prev = result.hops.back();
    if (think.empty()) {
      result.flags.push_back("empty_reasoning");
      break;
    }
    if (!(prev.rho > 0.0)) {
      result.flags.push_back("zero_flow_at_hop_" + std::to_string(k - 1));
      break;
    }
    SpanTarget target;
    for (std::size_t t = think.begin; t < think.end; ++t) {
      target.indices.push_back(t);
      target.weights.push_back(prev.w[t]);
    }
    Vector next;
    try {
      next = span_attribute(trace, weights, target, options, instr);
    } catch (const Error& e) {
      if (e.code() != Errc::degenerate_target) throw;
      result.flags.push_back("degenerate_target_at_hop_" + std::to_string(k));
      break;
    }
    rhos.push_back(prev.rho);
    input_parts.push_back(restrict_to(next, seg.input()));
    result.hops.push_back({std::move(next), 0.0});
    result.hops.back().rho = sum_over(result.hops.back().w, think);
  }
  result.final = accumulate_hops(input_parts, rhos);
  return result;
}

AttributionResult exhaustive_rollout(const ForwardTrace& trace, const ModelWeights& weights,
                                     const Segments& seg, const AttributionOptions& options,
                                     Instrumentation* instr) {
  seg.validate();
  if (seg.n != trace.size()) throw Error(Errc::shape_mismatch, "segments do not cover the trace");

  AttributionResult result;
  result.method = "rollout";
  result.n = seg.n;
  result.segments = seg;
  result.hops_requested = 1;

  Vector w0 = naive_token_attribution(trace, weights, seg.output(), options, instr);
  const IndexRange think = seg.reasoning();
  result.hops.push_back({w0, sum_over(w0, think)});

  Vector acc = restrict_to(w0, seg.input());
  std::size_t skipped = 0;
  for (std::size_t t = think.begin; t < think.end; ++t) {
    Vector a;
    try {
      a = span_attribute(trace, weights, SpanTarget::single(t), options, instr);
    } catch (const Error& e) {
      if (e.code() != Errc::degenerate_target) throw;
      ++skipped;
      continue;
    }
    for (std::size_t i = 0; i < seg.a; ++i) acc[i] += w0[t] * a[i];
  }
  if (skipped > 0) result.flags.push_back("degenerate_reasoning_tokens_" + std::to_string(skipped));

  const double mass = std::accumulate(acc.begin(), acc.end(), 0.0);
  if (!(mass > 0.0)) throw Error(Errc::no_input_mass, "rollout left no mass on the input");
  for (double& v : acc) v /= mass;
  result.final = std::move(acc);
  return result;
}

AttributionResult leave_one_out(SequenceScorer& scorer, std::span<const TokenId> tokens,
                                const Segments& seg, std::size_t chunk_size) {
  seg.validate();
  if (seg.n != tokens.size()) throw Error(Errc::shape_mismatch, "segments do not cover the tokens");
  const std::size_t chunk = std::max<std::size_t>(1, chunk_size);
  const IndexRange target{seg.a, seg.n};

  AttributionResult result;
  result.method = "loo";
  result.n = seg.n;
  result.segments = seg;

  const double base = scorer.score(tokens, target, {}).logprob;
  Vector scores(seg.a, 0.0);
  std::vector<std::size_t> masked;
  for (std::size_t c0 = 0; c0 < seg.a; c0 += chunk) {
    const std::size_t c1 = std::min(seg.a, c0 + chunk);
    masked.resize(c1 - c0);
    std::iota(masked.begin(), masked.end(), c0);
    const double drop = base - scorer.score(tokens, target, masked).logprob;
    for (std::size_t i = c0; i < c1; ++i) scores[i] = std::max(0.0, drop);
  }
  const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
  if (total > 0.0) {
    for (double& s : scores) s /= total;
  } else {
    std::fill(scores.begin(), scores.end(), 1.0 / static_cast<double>(seg.a));
    result.flags.push_back("loo_all_drops_zero");
  }
  result.final = std::move(scores);
  return result;
}

}  // namespace flashtrace
