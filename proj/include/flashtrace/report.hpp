#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "flashtrace/attribution.hpp"

namespace flashtrace {

/// Standalone HTML: one row per hop distribution, then one delta row per
/// consecutive pair (green where the later hop gains, red where it loses).
/// Every token is a <span class="tok"> carrying data-pos and data-score (or
/// data-delta); colors are scaled by each row's largest magnitude.
std::string render_heatmap(const AttributionResult& result, const std::vector<std::string>& words);

/// render_heatmap written to `path`; Errc::io_failure if it cannot be written.
void emit_heatmap(const AttributionResult& result, const std::vector<std::string>& words,
                  const std::filesystem::path& path);

}  // namespace flashtrace
