#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flashtrace/model.hpp"

namespace flashtrace {

struct BenchGrid {
  std::vector<std::size_t> context_lengths{128, 256, 512};
  std::vector<std::size_t> target_lengths{16, 128, 512};
  std::vector<std::string> methods{"flashtrace", "naive"};
  ModelConfig model;  // max_seq_len is raised to the largest N if needed
  std::size_t repeats = 3;
  std::size_t working_limit_bytes = std::size_t{1} << 30;
};

struct BenchRecord {
  std::string method;
  std::size_t n = 0;
  std::size_t m = 0;
  double wall_time = 0.0;     // median attribution seconds, forward excluded
  double forward_time = 0.0;  // seconds for the cached forward pass
  std::size_t peak_working_bytes = 0;
  std::uint64_t vector_op_count = 0;
  std::string status = "ok";  // or "oom"
};

/// Times attribution of the last M tokens of a random N-token sequence on a
/// random model, one cell at a time. Cells with M > N are skipped. Methods:
/// "flashtrace" (one span pass) and "naive" (one pass per target token).
std::vector<BenchRecord> bench_scaling(const BenchGrid& grid, std::uint64_t seed);

/// Header plus one line per record; columns follow BenchRecord.
void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records);

}  // namespace flashtrace
