#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "flashtrace/model.hpp"

namespace flashtrace {

// On-disk layout of weights.bin (all integers little-endian):
//   "FTWT" | u32 version (=1) | u32 tensor count
//   per tensor: u32 name length | name bytes | u8 dtype (0 = f32) | u8 rank
//               | u32 dims[rank] | u64 absolute byte offset of the payload
//   payloads: raw little-endian f32, row-major
inline constexpr char kWeightsMagic[4] = {'F', 'T', 'W', 'T'};
inline constexpr std::uint32_t kWeightsVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

/// Interchange tensor names in file order: tok_emb, l{i}.*, final_norm_g, unemb.
std::vector<std::string> required_tensor_names(const ModelConfig& config);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensors(const std::vector<std::uint8_t>& bytes);

/// Writes `dir/config.json` and `dir/weights.bin`, creating `dir` if needed.
void write_weights(const ModelWeights& weights, const ModelConfig& config,
                   const std::filesystem::path& dir);

struct LoadedModel {
  ModelWeights weights;
  ModelConfig config;
};

LoadedModel read_weights(const std::filesystem::path& dir);

}  // namespace flashtrace
