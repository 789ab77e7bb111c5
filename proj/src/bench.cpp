#include "flashtrace/bench.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>

#include "flashtrace/attribution.hpp"

namespace flashtrace {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::vector<BenchRecord> bench_scaling(const BenchGrid& grid, std::uint64_t seed) {
  ModelConfig cfg = grid.model;
  for (std::size_t n : grid.context_lengths) cfg.max_seq_len = std::max(cfg.max_seq_len, n);
  const ModelWeights weights = random_model(cfg, seed);
  const std::size_t repeats = std::max<std::size_t>(1, grid.repeats);

  std::vector<BenchRecord> out;
  for (std::size_t n : grid.context_lengths) {
    Rng rng(mix_seed(seed, n));
    std::vector<TokenId> tokens(n);
    for (auto& t : tokens) t = static_cast<TokenId>(2 + rng.below(cfg.vocab_size - 2));

    const auto t0 = std::chrono::steady_clock::now();
    const ForwardTrace trace = forward_trace(cfg, weights, tokens);
    const double forward_time = seconds_since(t0);

    for (std::size_t m : grid.target_lengths) {
      if (m > n || m == 0) continue;
      const IndexRange target{n - m, n};
      for (const std::string& method : grid.methods) {
        if (method != "flashtrace" && method != "naive") {
          throw Error(Errc::bad_config, "bench method '" + method + "' (expected flashtrace or naive)");
        }
        BenchRecord rec;
        rec.method = method;
        rec.n = n;
        rec.m = m;
        rec.forward_time = forward_time;
        std::vector<double> times;
        for (std::size_t r = 0; r < repeats && rec.status == "ok"; ++r) {
          MemoryTracker memory(grid.working_limit_bytes);
          Instrumentation instr{0, &memory};
          const auto start = std::chrono::steady_clock::now();
          try {
            if (method == "flashtrace") {
              span_attribute(trace, weights, SpanTarget::uniform(target), {}, &instr);
            } else {
              naive_token_attribution(trace, weights, target, {}, &instr);
            }
          } catch (const Error& e) {
            if (e.code() != Errc::working_set_exceeded) throw;
            rec.status = "oom";
          }
          times.push_back(seconds_since(start));
          rec.vector_op_count = instr.vector_ops;
          rec.peak_working_bytes = std::max(rec.peak_working_bytes, memory.peak());
        }
        std::sort(times.begin(), times.end());
        rec.wall_time = times[times.size() / 2];
        out.push_back(rec);
      }
    }
  }
  return out;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << "method,N,M,wall_time,forward_time,peak_working_bytes,vector_op_count,status\n";
  for (const auto& r : records) {
    out << r.method << ',' << r.n << ',' << r.m << ',' << r.wall_time << ',' << r.forward_time << ','
        << r.peak_working_bytes << ',' << r.vector_op_count << ',' << r.status << '\n';
  }
}

}  // namespace flashtrace
