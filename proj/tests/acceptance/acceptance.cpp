// Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned here.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "../oracles.hpp"
#include "../support.hpp"

#include "flashtrace/bench.hpp"
#include "flashtrace/metrics.hpp"
#include "flashtrace/pipeline.hpp"
#include "flashtrace/tasks.hpp"

using namespace flashtrace;

namespace {

constexpr double kFactorTol = 1e-9;       // relative
constexpr double kOracleTol = 1e-9;
constexpr double kRecursionTol = 1e-9;
constexpr double kMassTol = 1e-9;
constexpr double kRecoveryHandTol = 1e-12;
constexpr double kMasHandTol = 1e-9;
constexpr double kRecoveryHigh = 0.9;
constexpr double kRecoveryLow = 0.5;
constexpr double kSpearmanMin = 0.8;
constexpr double kRolloutTimeRatio = 1.0 / 5.0;
constexpr double kNaiveCountRatio = 10.0;
constexpr double kNaiveWallRatio = 5.0;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

/// Random shape within L<=3, H<=4, D<=64.
ModelConfig random_shape(Rng& rng, std::size_t max_n) {
  ModelConfig c;
  c.n_layers = rng.between(1, 3);
  c.n_heads = rng.between(1, 4);
  c.d_head = rng.between(2, 64 / c.n_heads);
  c.d_model = c.n_heads * c.d_head;
  c.d_ff = rng.between(4, 2 * c.d_model);
  c.vocab_size = rng.between(8, 64);
  c.max_seq_len = max_n;
  return c;
}

// Factored alpha^S_j * v'_j against the explicit double loop over S.
Outcome factorization() {
  Rng rng(101);
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = rng.between(2, 256);
    const ModelConfig c = random_shape(rng, 256);
    const ModelWeights w = random_model(c, mix_seed(101, inst));
    const ForwardTrace t = forward_trace(c, w, support::random_tokens(rng, n, c.vocab_size));
    const std::size_t size = rng.between(1, std::min<std::size_t>(64, n));
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    rng.shuffle(pos);
    pos.resize(size);
    std::sort(pos.begin(), pos.end());
    SpanTarget s{pos, {}};
    for (std::size_t k = 0; k < size; ++k) s.weights.push_back(0.1 + rng.unit());

    for (std::size_t l = 0; l < c.n_layers; ++l) {
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const Matrix& attn = t.layers[l].attn[h];
        const Vector alpha = span_attention_sum(attn, s);
        for (std::size_t j = 0; j < n; ++j) {
          const Vector v = oracle::value_vector(t, w, l, h, j);
          for (std::size_t e = 0; e < v.size(); ++e) {
            double loop = 0.0;
            for (std::size_t k = 0; k < size; ++k) loop += s.weights[k] * attn(s.indices[k], j) * v[e];
            const double err = std::fabs(alpha[j] * v[e] - loop) / std::max(1.0, std::fabs(loop));
            worst = std::max(worst, err);
          }
        }
      }
    }
  }
  return {worst <= kFactorTol, fmt("50 models, worst relative error %.3g", worst)};
}

Outcome single_token() {
  Rng rng(202);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = rng.between(2, 128);
    const ModelConfig c = random_shape(rng, 128);
    const ModelWeights w = random_model(c, mix_seed(202, inst));
    const ForwardTrace t = forward_trace(c, w, support::random_tokens(rng, n, c.vocab_size));
    const std::size_t i = rng.below(n);
    try {
      worst = std::max(worst, oracle::max_abs_diff(span_attribute(t, w, SpanTarget::single(i)),
                                                   oracle::single_token(t, w, i)));
    } catch (const Error& e) {
      return {false, fmt("instance %d: %s", inst, e.what())};
    }
  }
  return {worst <= kOracleTol, fmt("20 instances, worst abs diff %.3g", worst)};
}

Outcome recursion_algebra() {
  Outcome out;
  std::ostringstream notes;
  // hand example
  const Vector hand = accumulate_hops(std::vector<Vector>{{0.1, 0.1}, {0.5, 0.25}}, std::vector<double>{0.8});
  // 0.1 + 0.8 * 0.25 is one ulp off the decimal 0.3 in binary floating point
  const bool hand_ok = hand[0] == 0.5 && std::fabs(hand[1] - 0.3) <= 1e-15;
  out.pass &= hand_ok;
  notes << "hand [" << hand[0] << ", " << hand[1] << "]";

  Rng rng(303);
  double worst = 0.0;
  bool k0_ok = true, empty_ok = true;
  for (int inst = 0; inst < 20; ++inst) {
    const ModelConfig c = random_shape(rng, 96);
    const ModelWeights w = random_model(c, mix_seed(303, inst));
    const std::size_t n = rng.between(8, 96);
    const ForwardTrace t = forward_trace(c, w, support::random_tokens(rng, n, c.vocab_size));
    const std::size_t a = rng.between(1, n - 3);
    const std::size_t b = rng.between(a + 1, n - 1);
    const Segments seg{a, b, n};
    try {
      const int k = static_cast<int>(rng.between(1, 3));
      const AttributionResult r = recursive_attribute(t, w, seg, k);
      // A = w0|_I + sum_k (prod_{j<k} rho_j) w_k|_I, recomputed from the stored hops
      Vector recomputed(a, 0.0);
      double discount = 1.0;
      for (const auto& hop : r.hops) {
        for (std::size_t j = 0; j < a; ++j) recomputed[j] += discount * hop.w[j];
        discount *= hop.rho;
      }
      worst = std::max(worst, oracle::max_abs_diff(recomputed, r.final));

      const AttributionResult r0 = recursive_attribute(t, w, seg, 0);
      const Vector hop0(r.hops[0].w.begin(), r.hops[0].w.begin() + static_cast<std::ptrdiff_t>(a));
      k0_ok &= r0.final == hop0 && r0.hops.size() == 1;

      const Segments flat{a, a, n};
      const AttributionResult re = recursive_attribute(t, w, flat, 3);
      const AttributionResult re0 = recursive_attribute(t, w, flat, 0);
      empty_ok &= re.final == re0.final && re.hops.size() == 1;
    } catch (const Error& e) {
      return {false, fmt("instance %d: %s", inst, e.what())};
    }
  }
  out.pass &= worst <= kRecursionTol && k0_ok && empty_ok;
  notes << ", 20 instances: recompute diff " << worst << ", K=0 " << (k0_ok ? "ok" : "FAIL") << ", empty T "
        << (empty_ok ? "ok" : "FAIL");
  out.detail = notes.str();
  return out;
}

bool distribution_ok(const Vector& v, std::size_t last, double& worst_mass) {
  double s = 0.0;
  bool ok = true;
  for (std::size_t j = 0; j < v.size(); ++j) {
    s += v[j];
    if (!(v[j] >= 0.0)) ok = false;
    if (j > last && v[j] != 0.0) ok = false;
  }
  worst_mass = std::max(worst_mass, std::fabs(s - 1.0));
  return ok && std::fabs(s - 1.0) <= kMassTol;
}

Outcome conservation() {
  Rng rng(404);
  double worst = 0.0;
  std::size_t bad = 0, emitted = 0, skipped = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const ModelConfig c = random_shape(rng, 128);
    const ModelWeights w = random_model(c, mix_seed(404, inst));
    const std::size_t n = rng.between(4, 128);
    const ForwardTrace t = forward_trace(c, w, support::random_tokens(rng, n, c.vocab_size));
    const std::size_t a = rng.between(1, n - 2);
    const std::size_t b = rng.between(a, n - 1);
    const Segments seg{a, b, n};
    const int k = static_cast<int>(rng.below(4));
    try {
      const AttributionResult r = recursive_attribute(t, w, seg, k);
      for (std::size_t h = 0; h < r.hops.size(); ++h) {
        // hop 0 targets O (last index n-1); later hops target T (last index b-1)
        const std::size_t last = h == 0 ? n - 1 : b - 1;
        bad += !distribution_ok(r.hops[h].w, last, worst);
        ++emitted;
      }
      for (double x : r.final) bad += !(x >= 0.0);
      const Vector v = span_attribute(t, w, SpanTarget::uniform(seg.output()));
      bad += !distribution_ok(v, n - 1, worst);
      ++emitted;
    } catch (const Error& e) {
      if (e.code() != Errc::no_input_mass && e.code() != Errc::degenerate_target) return {false, e.what()};
      ++skipped;
    }
  }
  return {bad == 0, fmt("%zu distributions, %zu violations, worst |sum-1| %.3g, %zu degenerate skipped", emitted,
                        bad, worst, skipped)};
}

Outcome complexity() {
  BenchGrid g;
  g.context_lengths = {512};
  g.target_lengths = {16, 512};
  g.model = support::small_config(2, 2, 32, 64);
  g.model.max_seq_len = 512;
  g.repeats = 1;
  const auto recs = bench_scaling(g, 5);
  std::map<std::pair<std::string, std::size_t>, BenchRecord> by;
  for (const auto& r : recs) by[{r.method, r.m}] = r;
  const auto& f16 = by.at({"flashtrace", 16});
  const auto& f512 = by.at({"flashtrace", 512});
  const auto& n16 = by.at({"naive", 16});
  const auto& n512 = by.at({"naive", 512});
  const double count_ratio = static_cast<double>(n512.vector_op_count) / static_cast<double>(n16.vector_op_count);
  const double wall_ratio = n512.wall_time / f512.wall_time;
  const bool pass = f16.vector_op_count == f512.vector_op_count && count_ratio >= kNaiveCountRatio &&
                    wall_ratio >= kNaiveWallRatio;
  return {pass, fmt("flashtrace ops %llu vs %llu, naive count ratio %.1f, wall ratio %.1f",
                    static_cast<unsigned long long>(f16.vector_op_count),
                    static_cast<unsigned long long>(f512.vector_op_count), count_ratio, wall_ratio)};
}

struct PlantedRun {
  LoadedModel model;
  TaskConfig task;
};

PlantedRun planted(PlantKind kind, std::size_t reasoning_len) {
  ModelSpec spec;
  spec.kind = "planted";
  spec.config = planted_model_config();
  spec.plant = kind;
  PlantedRun run{build_model(spec, 7), {}};
  run.task.kind = TaskKind::niah;
  run.task.context_len = 1024;
  run.task.reasoning_len = reasoning_len;
  return run;
}

double recovery_of(const AttributionResult& r, const Sample& s) {
  const auto gt = ground_truth_indices(s);
  return recovery_rate(r.final, gt, r.segments.a);
}

Outcome planted_recovery() {
  const PlantedRun one = planted(PlantKind::one_hop, 32);
  const PlantedRun two = planted(PlantKind::two_hop, 32);
  double one_k0 = 0.0, two_k0 = 0.0, two_k1 = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const PreparedSample p = prepare_sample(one.task, 606, i);
    const ForwardTrace t1 = forward_trace(one.model.config, one.model.weights, p.assembled.tokens);
    one_k0 += recovery_of(recursive_attribute(t1, one.model.weights, p.assembled.segments, 0), p.sample);
    const ForwardTrace t2 = forward_trace(two.model.config, two.model.weights, p.assembled.tokens);
    two_k0 += recovery_of(recursive_attribute(t2, two.model.weights, p.assembled.segments, 0), p.sample);
    two_k1 += recovery_of(recursive_attribute(t2, two.model.weights, p.assembled.segments, 1), p.sample);
  }
  one_k0 /= 20.0;
  two_k0 /= 20.0;
  two_k1 /= 20.0;
  return {one_k0 >= kRecoveryHigh && two_k1 >= kRecoveryHigh && two_k0 <= kRecoveryLow,
          fmt("one-hop K=0 %.3f, two-hop K=0 %.3f, K=1 %.3f", one_k0, two_k0, two_k1)};
}

Outcome rollout_agreement() {
  const PlantedRun two = planted(PlantKind::two_hop, 128);
  double min_rho = 1.0, t_flash = 0.0, t_roll = 0.0;
  std::size_t t_size = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const PreparedSample p = prepare_sample(two.task, 707, i);
    const ForwardTrace t = forward_trace(two.model.config, two.model.weights, p.assembled.tokens);
    const Segments& seg = p.assembled.segments;
    t_size = seg.b - seg.a;
    auto t0 = Clock::now();
    const AttributionResult f = recursive_attribute(t, two.model.weights, seg, 1);
    t_flash += seconds_since(t0);
    t0 = Clock::now();
    const AttributionResult r = exhaustive_rollout(t, two.model.weights, seg);
    t_roll += seconds_since(t0);
    min_rho = std::min(min_rho, oracle::spearman(f.final, r.final));
  }
  const double ratio = t_flash / t_roll;
  return {min_rho >= kSpearmanMin && ratio <= kRolloutTimeRatio && t_size == 128,
          fmt("|T|=%zu, min Spearman %.3f, time flashtrace/rollout %.4f", t_size, min_rho, ratio)};
}

Outcome metric_oracles() {
  std::ostringstream notes;
  bool pass = true;

  Vector attr(20, 0.0);
  attr[3] = 0.5;
  attr[7] = 0.3;
  attr[11] = 0.1;
  const double rec = recovery_rate(attr, std::vector<std::size_t>{3, 7, 11}, 20);
  pass &= std::fabs(rec - 2.0 / 3.0) <= kRecoveryHandTol;
  notes << "recovery " << rec;

  const double rise = rise_deletion(Vector{1.0, 0.5, 0.0, 0.0});
  pass &= rise == 0.375;
  notes << ", rise " << rise;

  const std::size_t n = 100;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const auto counts = deletion_schedule(n);
  const double mas = mas_deletion(Vector(20, 1.0), counts, order, Vector(n, 1.0 / n));
  pass &= std::fabs(mas - 1.475) <= kMasHandTol;
  notes << ", mas " << mas;

  const ModelConfig c = support::small_config(1, 2, 4, 16);
  const ModelWeights w = random_model(c, 2);
  Rng rng(808);
  const auto tokens = support::random_tokens(rng, 40, c.vocab_size);
  const Segments seg{30, 36, 40};
  Vector scores(30);
  for (double& x : scores) x = rng.unit();
  SequenceScorer scorer(c, w, kMaskToken);
  deletion_curve(scorer, tokens, seg, scores);
  pass &= scorer.evaluations() == 20;
  notes << ", curve evaluations " << scorer.evaluations();

  std::size_t below = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Vector f(20), a(n);
    for (double& x : f) x = rng.unit();
    for (double& x : a) x = rng.unit();
    below += mas_deletion(f, counts, rank_descending(a), a) < rise_deletion(f);
  }
  pass &= below == 0;
  notes << ", MAS < RISE on " << below << "/100";
  return {pass, notes.str()};
}

std::vector<std::string> split(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Follows VAR bindings from the queried name to a number, reading only the text.
std::string walk_chain(const std::vector<std::string>& words) {
  std::map<std::string, std::string> binding;
  std::string cur;
  for (std::size_t i = 0; i + 3 < words.size(); ++i) {
    if (words[i] == "VAR" && words[i + 2] == "=") binding[words[i + 1]] = words[i + 3];
    if (words[i] == "of" && words[i + 1] == "VAR") cur = words[i + 2];
  }
  for (int guard = 0; guard < 64 && binding.count(cur); ++guard) {
    cur = binding[cur];
    if (std::isdigit(static_cast<unsigned char>(cur[0]))) return cur;
  }
  return "";
}

Outcome generators() {
  const auto& vocab = Vocabulary::standard();
  std::size_t vt_ok = 0, niah_bad = 0, regen_bad = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Sample s = gen_vt(1 + seed % 4, 1 + seed % 3, 256 + 8 * (seed % 32), seed);
    vt_ok += walk_chain(split(s.input_text)) == s.expected_answer;
    regen_bad += sample_to_json(gen_vt(1 + seed % 4, 1 + seed % 3, 256 + 8 * (seed % 32), seed)).dump() !=
                 sample_to_json(s).dump();
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t needles = 1 + seed % 4;
    const Sample s = gen_niah(1024, needles, seed);
    const auto answers = split(s.expected_answer);
    niah_bad += s.ground_truth.size() != needles || answers.size() != needles;
    for (std::size_t k = 0; k < s.ground_truth.size() && k < answers.size(); ++k) {
      const auto& r = s.ground_truth[k];
      const auto words =
          split(vocab.detokenize(std::span<const TokenId>(s.input_tokens.data() + r.begin, r.size())));
      const bool ok = words.size() == 8 && words[0] == "The" && words[1] == "special" && words[2] == "magic" &&
                      words[3] == "number" && words[4] == "for" && words[6] == "is" && words[7] == answers[k];
      niah_bad += !ok;
    }
    regen_bad += sample_to_json(gen_niah(1024, needles, seed)).dump() != sample_to_json(s).dump();
  }
  return {vt_ok == 100 && niah_bad == 0 && regen_bad == 0,
          fmt("VT chain walk %zu/100, NIAH template mismatches %zu, regeneration mismatches %zu", vt_ok, niah_bad,
              regen_bad)};
}

Outcome hop_ablation() {
  PipelineConfig cfg;
  cfg.task.kind = TaskKind::niah;
  cfg.task.context_len = 256;
  cfg.task.samples = 3;
  cfg.task.reasoning_len = 32;
  cfg.model.kind = "planted";
  cfg.model.config = planted_model_config();
  cfg.model.plant = PlantKind::two_hop;
  cfg.methods = {"flashtrace"};
  cfg.metrics = {"recovery", "rise", "mas"};
  cfg.seed = 10;
  const auto records = ablate_hops(cfg, {0, 1, 2, 3}, {});
  bool pass = records.size() == 3 * 4;
  std::ostringstream notes;
  notes << records.size() << " records";
  for (std::size_t s = 0; pass && s < 3; ++s) {
    double prev = 2.0;
    notes << ", " << records[s * 4].at("id").get<std::string>() << " discounts";
    for (int k = 0; k < 4; ++k) {
      const auto& r = records[s * 4 + k];
      const double d = r.at("discount").get<double>();
      pass &= r.at("K").get<int>() == k && d <= prev && d >= 0.0;
      prev = d;
      notes << ' ' << fmt("%.3g", d);
    }
    pass &= records[s * 4].at("discount").get<double>() == 1.0;
  }
  return {pass, notes.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"factorization exactness", factorization},
      {"single-token reduction", single_token},
      {"recursion algebra", recursion_algebra},
      {"conservation and causality", conservation},
      {"complexity counters", complexity},
      {"planted recovery", planted_recovery},
      {"rollout agreement", rollout_agreement},
      {"metric oracles", metric_oracles},
      {"dataset generators", generators},
      {"hop-ablation harness", hop_ablation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2zu %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
