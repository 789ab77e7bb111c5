// Slow, direct re-derivations used as test oracles. Nothing here calls the
// attribution engine; values are recomputed from the cached activations and
// weights with plain loops.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "flashtrace/attribution.hpp"

namespace oracle {

using flashtrace::ForwardTrace;
using flashtrace::ModelWeights;
using flashtrace::Vector;

inline double l1(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += std::fabs(x);
  return s;
}

inline double prox(const Vector& z, const Vector& y) {
  double d = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) d += std::fabs(y[i] - z[i]);
  return std::max(0.0, l1(y) - d);
}

inline Vector row(const flashtrace::Matrix& m, std::size_t i) {
  auto r = m.row(i);
  return Vector(r.begin(), r.end());
}

/// (RMSNorm(x_in_j)) W_V[:, head] W_O[head, :], the norm recomputed from x_in.
inline Vector value_vector(const ForwardTrace& t, const ModelWeights& w, std::size_t l, std::size_t h,
                           std::size_t j) {
  const auto& cfg = t.config;
  const std::size_t d = cfg.d_model, dh = cfg.d_head;
  const auto& lw = w.layers[l];
  Vector x = row(t.layers[l].x_in, j);
  double ms = 0.0;
  for (double v : x) ms += v * v;
  const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + cfg.norm_epsilon);
  Vector out(d, 0.0);
  for (std::size_t c = 0; c < dh; ++c) {
    double head_val = 0.0;
    for (std::size_t r = 0; r < d; ++r) head_val += x[r] * inv * lw.attn_norm_g[r] * lw.wv(r, h * dh + c);
    for (std::size_t e = 0; e < d; ++e) out[e] += head_val * lw.wo(h * dh + c, e);
  }
  return out;
}

/// Per-token attribution of a single target position i, no factoring or
/// pre-aggregation: each contribution is attn[i, j] * v'_j directly.
inline Vector single_token(const ForwardTrace& t, const ModelWeights& w, std::size_t i) {
  const auto& cfg = t.config;
  const std::size_t n = t.size();
  Vector score(n, 0.0);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& lt = t.layers[l];
    const Vector y_mid = row(lt.x_mid, i);
    const Vector y_out = row(lt.x_out, i);
    Vector resid = row(lt.x_in, i);
    for (std::size_t c = 0; c < resid.size(); ++c) resid[c] += w.layers[l].attn_b[c];
    const Vector mlp = row(lt.mlp_out, i);

    Vector e(n, 0.0);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      for (std::size_t j = 0; j <= i; ++j) {
        Vector v = value_vector(t, w, l, h, j);
        for (double& x : v) x *= lt.attn[h](i, j);
        e[j] += prox(v, y_mid);
      }
    }
    const double denom = std::accumulate(e.begin(), e.end(), 0.0) + prox(resid, y_mid) + prox(mlp, y_out);
    if (denom > 0.0) {
      for (std::size_t j = 0; j < n; ++j) score[j] += e[j] / denom;
    }
  }
  const double total = std::accumulate(score.begin(), score.end(), 0.0);
  for (double& s : score) s /= total;
  return score;
}

/// Average ranks (1-based), ties sharing their mean rank.
inline Vector ranks(const Vector& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vector r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = static_cast<double>(i + j) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const Vector& a, const Vector& b) {
  const Vector ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
