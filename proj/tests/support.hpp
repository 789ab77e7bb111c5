#pragma once

#include "flashtrace/attribution.hpp"
#include "flashtrace/numerics.hpp"

namespace support {

inline flashtrace::ModelConfig small_config(std::size_t layers = 2, std::size_t heads = 2, std::size_t dh = 8,
                                            std::size_t vocab = 32) {
  flashtrace::ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_head = dh;
  c.d_model = heads * dh;
  c.d_ff = 2 * c.d_model;
  c.vocab_size = vocab;
  c.max_seq_len = 512;
  return c;
}

inline std::vector<flashtrace::TokenId> random_tokens(flashtrace::Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<flashtrace::TokenId> t(n);
  for (auto& x : t) x = static_cast<flashtrace::TokenId>(rng.below(vocab));
  return t;
}

inline double sum(const flashtrace::Vector& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace support
