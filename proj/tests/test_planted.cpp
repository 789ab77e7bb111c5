#include "doctest.h"
#include "support.hpp"

#include "flashtrace/planted.hpp"

using namespace flashtrace;

namespace {

ModelConfig planted_config(std::size_t heads = 2) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = heads;
  c.d_head = 32;
  c.d_model = heads * 32;
  c.d_ff = 16;
  c.vocab_size = 32;
  c.max_seq_len = 1024;
  return c;
}

double mass_on(const Matrix& attn, std::size_t i, const std::vector<TokenId>& tokens,
               const std::vector<TokenId>& ids) {
  double m = 0.0;
  for (std::size_t j = 0; j <= i; ++j) {
    if (std::find(ids.begin(), ids.end(), tokens[j]) != ids.end()) m += attn(i, j);
  }
  return m;
}

Errc code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return Errc::invalid_argument;
}

}  // namespace

TEST_CASE("designated head concentrates query attention on markers") {
  const ModelConfig c = planted_config();
  PlantSpec p;
  p.marker_token_ids = {5};
  p.query_token_ids = {9};
  p.attention_concentration_target = 0.9;
  const ModelWeights w = build_planted_model(c, p, 3);
  CHECK_NOTHROW(w.check(c));

  Rng rng(1);
  std::vector<TokenId> tokens;
  for (std::size_t i = 0; i < 900; ++i) tokens.push_back(static_cast<TokenId>(10 + rng.below(20)));
  tokens[17] = 5;  // single marker far from the query
  tokens.push_back(9);
  const ForwardTrace t = forward_trace(c, w, tokens);
  const std::size_t q = tokens.size() - 1;
  CHECK(t.layers[0].attn[0](q, 17) >= 0.9);
  // non-query positions are not steered
  CHECK(t.layers[0].attn[0](q - 1, 17) < 0.05);
}

TEST_CASE("two-hop plant routes output -> relay -> marker") {
  const ModelConfig c = planted_config();
  PlantSpec p;
  p.marker_token_ids = {5, 6};
  p.query_token_ids = {9};
  p.second_hop = SecondHopPlant{0, 1, {7}};
  const ModelWeights w = build_planted_model(c, p, 4);

  Rng rng(2);
  std::vector<TokenId> tokens;
  for (std::size_t i = 0; i < 300; ++i) tokens.push_back(static_cast<TokenId>(10 + rng.below(20)));
  tokens[40] = 5;
  tokens[41] = 6;
  tokens[250] = 7;
  tokens.push_back(9);
  const ForwardTrace t = forward_trace(c, w, tokens);
  const std::size_t q = tokens.size() - 1;
  CHECK(mass_on(t.layers[0].attn[0], q, tokens, {7}) >= 0.9);
  CHECK(mass_on(t.layers[0].attn[1], 250, tokens, {5, 6}) >= 0.9);
  CHECK(mass_on(t.layers[0].attn[1], q, tokens, {5, 6}) < 0.1);
}

TEST_CASE("infeasible plants are rejected") {
  ModelConfig c = planted_config();
  PlantSpec p;
  p.marker_token_ids = {5};
  for (double bad : {0.0, 1.0, -0.5}) {
    p.attention_concentration_target = bad;
    CHECK(code_of([&] { build_planted_model(c, p, 0); }) == Errc::infeasible);
  }
  p.attention_concentration_target = 0.9;

  ModelConfig small_head = c;
  small_head.d_head = 16;
  small_head.d_model = 32;
  CHECK(code_of([&] { build_planted_model(small_head, p, 0); }) == Errc::infeasible);

  ModelConfig drifting = c;
  drifting.rope_base = 2.0;
  CHECK(code_of([&] { build_planted_model(drifting, p, 0); }) == Errc::infeasible);

  PlantSpec same = p;
  same.second_hop = SecondHopPlant{0, 0, {7}};
  CHECK(code_of([&] { build_planted_model(c, same, 0); }) == Errc::infeasible);

  PlantSpec outside = p;
  outside.head = 2;
  CHECK(code_of([&] { build_planted_model(c, outside, 0); }) == Errc::infeasible);

  PlantSpec no_markers;
  CHECK(code_of([&] { build_planted_model(c, no_markers, 0); }) == Errc::infeasible);

  PlantSpec bad_id = p;
  bad_id.marker_token_ids = {40};
  CHECK(code_of([&] { build_planted_model(c, bad_id, 0); }) == Errc::infeasible);
}
