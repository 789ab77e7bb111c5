#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "flashtrace/attribution.hpp"

namespace flashtrace {

inline constexpr TokenId kMaskToken = 0;
inline constexpr TokenId kUnknownToken = 1;

/// Closed whitespace vocabulary built from the generator word pools. Ids 0
/// and 1 are reserved for mask/pad and unknown words.
class Vocabulary {
 public:
  static const Vocabulary& standard();

  struct Encoded {
    std::vector<TokenId> ids;
    std::size_t unknown = 0;  // words mapped to kUnknownToken
  };

  Encoded tokenize(std::string_view text) const;
  std::string detokenize(std::span<const TokenId> ids) const;

  TokenId id(std::string_view word) const;  // throws out_of_range for unknown words
  const std::string& word(TokenId id) const;
  std::size_t size() const noexcept { return words_.size(); }

  /// Tokens that carry task evidence: needle template words, keys, values,
  /// variable names and the assignment syntax.
  std::vector<TokenId> evidence_ids() const;
  /// Tokens the scripted reasoning uses to point back at the evidence.
  std::vector<TokenId> reasoning_marker_ids() const;
  /// Every token a scripted output may contain.
  std::vector<TokenId> output_ids() const;

 private:
  Vocabulary();
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

enum class TaskKind { niah, vt };

std::string_view task_name(TaskKind kind);
TaskKind task_from_name(std::string_view name);

struct Sample {
  TaskKind kind = TaskKind::niah;
  std::uint64_t seed = 0;
  std::string input_text;  // the query is the final sentence of the input
  std::vector<TokenId> input_tokens;
  std::vector<IndexRange> ground_truth;  // sorted, disjoint, within the input
  std::string query_text;
  std::string expected_answer;
};

/// Flattened ground-truth positions.
std::vector<std::size_t> ground_truth_indices(const Sample& sample);

/// Filler haystack with `n_needles` sentences "The special magic number for
/// KEY is VALUE" at seeded sentence boundaries and one query per needle at the
/// end. The input is exactly `context_len` tokens.
Sample gen_niah(std::size_t context_len, std::size_t n_needles, std::uint64_t seed);

/// `chains` assignment chains of length `hops` ("VAR A = 4096", "VAR B = A",
/// ...) dispersed through filler; the query asks for the last variable of the
/// first chain. Ground truth is that chain's statements.
Sample gen_vt(std::size_t hops, std::size_t chains, std::size_t context_len, std::uint64_t seed);

struct Assembled {
  std::vector<TokenId> tokens;
  Segments segments;
  std::size_t unknown_words = 0;
};

/// input ++ reasoning ++ output. Empty output is an error; empty reasoning is
/// allowed.
Assembled assemble(const Sample& sample, std::string_view reasoning_text, std::string_view output_text);

struct Script {
  std::string reasoning;
  std::string output;
};

/// Stand-in chain of thought of `length` tokens drawn from the reasoning pool,
/// with marker words sprinkled through it, followed by "answer VALUE".
Script script_reasoning(const Sample& sample, std::size_t length, std::uint64_t seed);

inline constexpr int kSampleSchemaVersion = 1;

nlohmann::json sample_to_json(const Sample& sample);
Sample sample_from_json(const nlohmann::json& j);

}  // namespace flashtrace
