#pragma once

#include <optional>
#include <string>

#include "json.hpp"

#include "flashtrace/attribution.hpp"
#include "flashtrace/metrics.hpp"

namespace flashtrace {

inline constexpr int kResultSchemaVersion = 1;

nlohmann::json result_to_json(const AttributionResult& result);
/// Throws Errc::unsupported_version or Errc::bad_config on malformed input.
AttributionResult result_from_json(const nlohmann::json& j);

struct MetricsRecord {
  std::optional<double> recovery;
  std::optional<double> rise;
  std::optional<double> mas;
  std::vector<std::size_t> schedule;
  std::vector<double> curve;
  std::optional<double> baseline;
  std::vector<std::string> flags;
};

nlohmann::json metrics_to_json(const MetricsRecord& record);

/// Compact single-line dump terminated by a newline; doubles print round-trip exact.
std::string jsonl_line(const nlohmann::json& j);

}  // namespace flashtrace
