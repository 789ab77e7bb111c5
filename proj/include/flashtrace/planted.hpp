#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flashtrace/model.hpp"

namespace flashtrace {

struct SecondHopPlant {
  std::size_t layer = 0;
  std::size_t head = 1;
  /// Tokens that relay: attended to by the first head, and themselves
  /// attending to the primary markers through this head.
  std::vector<TokenId> intermediate_token_ids;
};

struct PlantSpec {
  std::vector<TokenId> marker_token_ids;
  /// Positions holding one of these tokens attend through the designated
  /// head. Empty means every position does.
  std::vector<TokenId> query_token_ids;
  std::size_t layer = 0;
  std::size_t head = 0;
  double attention_concentration_target = 0.9;
  std::optional<SecondHopPlant> second_hop;
  /// Scale of the random weights everywhere outside the planted heads.
  double noise_scale = 0.002;
};

/// Builds a model whose designated head(s) provably concentrate attention.
///
/// Token embeddings are one-hot (token k lives in residual dimension k), so
/// every position enters layer 0 with RMS-normalized value r = 1/sqrt(1/D + eps)
/// in its own dimension. The designated head writes a scalar a into the
/// lowest-frequency rotary pair of its query for query tokens and of its key
/// for marker tokens; the query-key logit is then r^2 a^2 cos(dt * theta) / sqrt(dh)
/// for marker keys and exactly 0 for everything else. a is chosen so the
/// logit is at least ln(c (max_seq_len - 1) / (1 - c)) + ln 4 over the whole
/// position range, which puts mass >= c on markers whenever one is visible.
/// The value/output path of a designated head maps token dimension k back to
/// itself with a seeded gain in [0.75, 1.25].
///
/// With a second hop the first head attends to the intermediate tokens and
/// the second head routes intermediate positions onto the primary markers.
///
/// Guarantees are exact for heads in layer 0; later layers see a residual
/// stream perturbed by the noise weights and rely on the ln 4 margin.
ModelWeights build_planted_model(const ModelConfig& config, const PlantSpec& plant,
                                 std::uint64_t seed);

}  // namespace flashtrace
