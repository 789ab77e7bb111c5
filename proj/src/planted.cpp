#include "flashtrace/planted.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace flashtrace {

namespace {

struct Route {
  std::size_t layer;
  std::size_t head;
  const std::vector<TokenId>* keys;
  const std::vector<TokenId>* queries;  // empty: every token
};

void infeasible(const std::string& why) { throw Error(Errc::infeasible, "planted model: " + why); }

void check_ids(const std::vector<TokenId>& ids, std::size_t vocab, const char* what) {
  for (TokenId t : ids) {
    if (t >= vocab) infeasible(std::string(what) + " id " + std::to_string(t) + " outside vocabulary");
  }
}

}  // namespace

ModelWeights build_planted_model(const ModelConfig& cfg, const PlantSpec& plant, std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.d_head;
  const std::size_t vocab = cfg.vocab_size;
  const double c = plant.attention_concentration_target;

  if (!(c > 0.0 && c < 1.0)) infeasible("concentration target must lie strictly inside (0, 1)");
  if (vocab > d) infeasible("one-hot embeddings need d_model >= vocab_size");
  if (vocab > dh) infeasible("identity value path needs d_head >= vocab_size");
  if (dh < 2) infeasible("d_head must be >= 2");
  if (plant.marker_token_ids.empty()) infeasible("no marker tokens");
  check_ids(plant.marker_token_ids, vocab, "marker");
  check_ids(plant.query_token_ids, vocab, "query");

  std::vector<TokenId> all_tokens;
  std::vector<Route> routes;
  if (plant.second_hop) {
    const auto& hop = *plant.second_hop;
    if (hop.intermediate_token_ids.empty()) infeasible("second hop without intermediate tokens");
    check_ids(hop.intermediate_token_ids, vocab, "intermediate");
    routes.push_back({plant.layer, plant.head, &hop.intermediate_token_ids, &plant.query_token_ids});
    routes.push_back({hop.layer, hop.head, &plant.marker_token_ids, &hop.intermediate_token_ids});
  } else {
    routes.push_back({plant.layer, plant.head, &plant.marker_token_ids, &plant.query_token_ids});
  }
  for (const Route& r : routes) {
    if (r.layer >= cfg.n_layers || r.head >= cfg.n_heads) infeasible("designated head outside the model");
  }
  if (routes.size() == 2 && routes[0].layer == routes[1].layer && routes[0].head == routes[1].head) {
    infeasible("both hops designate the same head");
  }

  // Signal column: the unrotated last dimension when dh is odd, otherwise the
  // first component of the lowest-frequency rotary pair.
  const std::size_t sig = dh % 2 == 1 ? dh - 1 : dh - 2;
  double cos_min = 1.0;
  if (dh % 2 == 0) {
    const double theta = std::pow(cfg.rope_base, -static_cast<double>(dh - 2) / static_cast<double>(dh));
    const double span = static_cast<double>(cfg.max_seq_len - 1) * theta;
    cos_min = span >= std::numbers::pi ? -1.0 : std::cos(span);
  }
  if (cos_min < 0.5) infeasible("rope_base too small for max_seq_len: positional drift on the signal pair");

  const double r = 1.0 / std::sqrt(1.0 / static_cast<double>(d) + cfg.norm_epsilon);
  const double n_other = static_cast<double>(std::max<std::size_t>(cfg.max_seq_len, 2) - 1);
  const double kappa = std::log(c / (1.0 - c) * n_other) + std::log(4.0);
  const double a = std::sqrt(kappa * std::sqrt(static_cast<double>(dh)) / (r * r * cos_min));

  const double noise = plant.noise_scale;
  std::uint64_t tag = 0;
  auto next = [&](std::size_t rows, std::size_t cols) {
    return deterministic_matrix(mix_seed(seed, tag++), rows, cols, noise);
  };

  ModelWeights w;
  w.tok_emb = MatrixF(vocab, d, 0.0f);
  for (std::size_t k = 0; k < vocab; ++k) w.tok_emb(k, k) = 1.0f;

  // distinct per-token gains keep value norms from tying
  Rng gain_rng(mix_seed(seed, 0xFEED));
  std::vector<double> value_gain(vocab);
  for (auto& g : value_gain) g = 0.75 + 0.5 * gain_rng.unit();

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm_g.assign(d, 1.0f);
    lw.wq = next(d, d);
    lw.wk = next(d, d);
    lw.wv = next(d, d);
    lw.wo = next(d, d);
    lw.attn_b.assign(d, 0.0f);
    lw.mlp_norm_g.assign(d, 1.0f);
    lw.w_gate = next(d, cfg.d_ff);
    lw.w_up = next(d, cfg.d_ff);
    lw.w_down = next(cfg.d_ff, d);

    for (const Route& route : routes) {
      if (route.layer != l) continue;
      const std::size_t off = route.head * dh;
      for (std::size_t row = 0; row < d; ++row) {
        for (std::size_t col = off; col < off + dh; ++col) {
          lw.wq(row, col) = 0.0f;
          lw.wk(row, col) = 0.0f;
          lw.wv(row, col) = 0.0f;
          lw.wo(col, row) = 0.0f;
        }
      }
      if (route.queries->empty()) {
        for (std::size_t k = 0; k < vocab; ++k) lw.wq(k, off + sig) = static_cast<float>(a);
      } else {
        for (TokenId t : *route.queries) lw.wq(t, off + sig) = static_cast<float>(a);
      }
      for (TokenId t : *route.keys) lw.wk(t, off + sig) = static_cast<float>(a);
      for (std::size_t k = 0; k < vocab; ++k) {
        lw.wv(k, off + k) = static_cast<float>(value_gain[k] / r);
        lw.wo(off + k, k) = 1.0f;
      }
    }
    w.layers.push_back(std::move(lw));
  }
  w.final_norm_g.assign(d, 1.0f);
  w.unemb = next(d, vocab);
  for (std::size_t k = 0; k < vocab; ++k) w.unemb(k, k) += 1.0f;
  return w;
}

}  // namespace flashtrace
