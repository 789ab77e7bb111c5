#include "flashtrace/pipeline.hpp"

#include <fstream>

#include "flashtrace/report.hpp"
#include "flashtrace/serialize.hpp"

namespace flashtrace {

namespace {

using nlohmann::json;

const json& required(const json& j, const char* name, const std::string& where) {
  if (!j.is_object() || !j.contains(name)) {
    throw Error(Errc::bad_config, "missing field '" + where + name + "'");
  }
  return j.at(name);
}

template <typename T>
T optional_field(const json& j, const char* name, T fallback) {
  return j.contains(name) ? j.at(name).get<T>() : fallback;
}

ModelConfig override_config(const ModelConfig& base, const json& overrides) {
  json merged = config_to_json(base);
  if (!overrides.is_object()) throw Error(Errc::bad_config, "'model.config' must be an object");
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    if (!merged.contains(it.key())) throw Error(Errc::bad_config, "unknown model config field '" + it.key() + "'");
    merged[it.key()] = it.value();
  }
  return config_from_json(merged);
}

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), std::string("stage ") + name + ": " + e.detail());
  }
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io_failure, "cannot open " + path.string());
  for (const auto& r : records) f << jsonl_line(r);
  if (!f) throw Error(Errc::io_failure, "cannot write " + path.string());
}

std::vector<std::string> words_of(const std::vector<TokenId>& tokens) {
  std::vector<std::string> out;
  for (TokenId t : tokens) out.push_back(Vocabulary::standard().word(t));
  return out;
}

}  // namespace

PipelineConfig parse_config(const json& j) {
  try {
    PipelineConfig c;
    const json& task = required(j, "task", "");
    c.task.kind = task_from_name(required(task, "kind", "task.").get<std::string>());
    c.task.context_len = optional_field<std::size_t>(task, "context_len", c.task.context_len);
    c.task.needles = optional_field<std::size_t>(task, "needles", c.task.needles);
    c.task.vt_hops = optional_field<std::size_t>(task, "hops", c.task.vt_hops);
    c.task.chains = optional_field<std::size_t>(task, "chains", c.task.chains);
    c.task.samples = optional_field<std::size_t>(task, "samples", c.task.samples);
    c.task.reasoning_len = optional_field<std::size_t>(task, "reasoning_len", c.task.reasoning_len);

    const json& model = required(j, "model", "");
    c.model.kind = required(model, "kind", "model.").get<std::string>();
    if (c.model.kind == "planted") {
      c.model.config = planted_model_config();
    } else if (c.model.kind == "file") {
      c.model.path = required(model, "path", "model.").get<std::string>();
    } else if (c.model.kind != "random") {
      throw Error(Errc::bad_config, "model.kind must be random, planted or file");
    }
    if (model.contains("config")) c.model.config = override_config(c.model.config, model.at("config"));
    const std::string plant = optional_field<std::string>(model, "plant", "two_hop");
    if (plant == "one_hop") {
      c.model.plant = PlantKind::one_hop;
    } else if (plant == "two_hop") {
      c.model.plant = PlantKind::two_hop;
    } else {
      throw Error(Errc::bad_config, "model.plant must be one_hop or two_hop");
    }
    c.model.concentration = optional_field<double>(model, "concentration", c.model.concentration);
    c.model.noise_scale = optional_field<double>(model, "noise_scale", c.model.noise_scale);

    c.methods = required(j, "methods", "").get<std::vector<std::string>>();
    for (const auto& m : c.methods) {
      if (m != "flashtrace" && m != "naive" && m != "rollout" && m != "loo") {
        throw Error(Errc::bad_config, "unknown method '" + m + "'");
      }
    }
    c.seed = required(j, "seed", "").get<std::uint64_t>();
    c.hops = optional_field<int>(j, "hops", c.hops);
    if (c.hops < 0) throw Error(Errc::bad_config, "hops must be >= 0");
    c.metrics = optional_field<std::vector<std::string>>(j, "metrics", c.metrics);
    for (const auto& m : c.metrics) {
      if (m != "recovery" && m != "rise" && m != "mas") throw Error(Errc::bad_config, "unknown metric '" + m + "'");
    }
    c.loo_chunk = optional_field<std::size_t>(j, "loo_chunk", c.loo_chunk);
    const std::string curve = optional_field<std::string>(j, "curve", "mean_token");
    if (curve == "joint") {
      c.curve_mode = CurveMode::joint;
    } else if (curve != "mean_token") {
      throw Error(Errc::bad_config, "curve must be mean_token or joint");
    }

    if (j.contains("bench")) {
      const json& b = j.at("bench");
      c.bench.context_lengths = optional_field(b, "N", c.bench.context_lengths);
      c.bench.target_lengths = optional_field(b, "M", c.bench.target_lengths);
      c.bench.methods = optional_field(b, "methods", c.bench.methods);
      c.bench.repeats = optional_field(b, "repeats", c.bench.repeats);
      c.bench.working_limit_bytes = optional_field(b, "working_limit_bytes", c.bench.working_limit_bytes);
      if (b.contains("model")) c.bench.model = override_config(c.bench.model, b.at("model"));
    }
    return c;
  } catch (const json::exception& e) {
    throw Error(Errc::bad_config, e.what());
  }
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::io_failure, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw Error(Errc::bad_config, path.string() + ": " + e.what());
  }
  return parse_config(j);
}

ModelConfig planted_model_config() {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_head = 128;
  c.d_model = 256;
  c.d_ff = 64;
  c.vocab_size = 128;
  c.max_seq_len = 2048;
  return c;
}

PlantSpec task_plant(PlantKind kind, double concentration, double noise_scale) {
  const auto& vocab = Vocabulary::standard();
  PlantSpec p;
  p.attention_concentration_target = concentration;
  p.noise_scale = noise_scale;
  p.query_token_ids = vocab.output_ids();
  if (kind == PlantKind::one_hop) {
    p.marker_token_ids = vocab.evidence_ids();
  } else {
    p.marker_token_ids = vocab.evidence_ids();
    p.second_hop = SecondHopPlant{0, 1, vocab.reasoning_marker_ids()};
  }
  return p;
}

LoadedModel build_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.kind == "file") return read_weights(spec.path);
  if (spec.config.vocab_size < Vocabulary::standard().size()) {
    throw Error(Errc::bad_config, "vocab_size " + std::to_string(spec.config.vocab_size) +
                                      " below the task vocabulary (" +
                                      std::to_string(Vocabulary::standard().size()) + ")");
  }
  LoadedModel m;
  m.config = spec.config;
  if (spec.kind == "planted") {
    m.weights = build_planted_model(spec.config, task_plant(spec.plant, spec.concentration, spec.noise_scale), seed);
  } else {
    m.weights = random_model(spec.config, seed);
  }
  return m;
}

PreparedSample prepare_sample(const TaskConfig& task, std::uint64_t seed, std::size_t index) {
  PreparedSample p;
  p.id = "s" + std::to_string(index);
  const std::uint64_t s = mix_seed(seed, index);
  p.sample = task.kind == TaskKind::niah ? gen_niah(task.context_len, task.needles, s)
                                         : gen_vt(task.vt_hops, task.chains, task.context_len, s);
  const Script script = script_reasoning(p.sample, task.reasoning_len, s);
  p.assembled = assemble(p.sample, script.reasoning, script.output);
  return p;
}

AttributionResult run_method(const std::string& method, const ForwardTrace& trace, const LoadedModel& model,
                             const Segments& seg, int hops, std::size_t loo_chunk) {
  if (method == "flashtrace") return recursive_attribute(trace, model.weights, seg, hops);
  if (method == "rollout") return exhaustive_rollout(trace, model.weights, seg);
  if (method == "loo") {
    SequenceScorer scorer(model.config, model.weights, kMaskToken);
    return leave_one_out(scorer, trace.tokens, seg, loo_chunk);
  }
  if (method == "naive") {
    AttributionResult r;
    r.method = "naive";
    r.n = seg.n;
    r.segments = seg;
    Vector w = naive_token_attribution(trace, model.weights, seg.output());
    double rho = 0.0;
    for (std::size_t t = seg.a; t < seg.b; ++t) rho += w[t];
    try {
      r.final = renormalize_to_input(w, seg);
    } catch (const Error& e) {
      if (e.code() != Errc::no_input_mass) throw;
      r.final.assign(seg.a, 1.0 / static_cast<double>(seg.a));
      r.flags.push_back("no_input_mass_uniform_fallback");
    }
    r.hops.push_back({std::move(w), rho});
    return r;
  }
  throw Error(Errc::bad_config, "unknown method '" + method + "'");
}

MetricsRecord evaluate(const std::vector<std::string>& metrics, const AttributionResult& result,
                       const Sample& sample, const Assembled& assembled, const LoadedModel& model,
                       CurveMode mode) {
  MetricsRecord rec;
  auto wants = [&](const char* name) { return std::find(metrics.begin(), metrics.end(), name) != metrics.end(); };
  const Segments& seg = assembled.segments;

  if (wants("recovery")) {
    try {
      rec.recovery = recovery_rate(result.final, ground_truth_indices(sample), seg.a);
    } catch (const Error& e) {
      if (e.code() != Errc::context_too_short) throw;
      rec.flags.push_back("recovery_skipped_context_too_short");
    }
  }
  if (wants("rise") || wants("mas")) {
    if (seg.a < kDeletionSteps) {
      rec.flags.push_back("deletion_skipped_context_too_short");
      return rec;
    }
    SequenceScorer scorer(model.config, model.weights, kMaskToken);
    rec.baseline = target_probability(scorer, assembled.tokens, seg, {}, mode);
    const DeletionCurve curve = deletion_curve(scorer, assembled.tokens, seg, result.final, mode, rec.baseline);
    rec.schedule = curve.counts;
    rec.curve = curve.probabilities;
    if (wants("rise")) rec.rise = rise_deletion(curve.probabilities);
    if (wants("mas")) {
      try {
        rec.mas = mas_deletion(curve, result.final);
      } catch (const Error& e) {
        if (e.code() != Errc::undefined_alignment) throw;
        rec.flags.push_back("mas_undefined_alignment");
      }
    }
  }
  return rec;
}

void run_pipeline(const PipelineConfig& config, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  const LoadedModel model = stage("model", [&] { return build_model(config.model, config.seed); });
  std::vector<json> records;
  for (std::size_t s = 0; s < config.task.samples; ++s) {
    const PreparedSample p = stage("generate", [&] { return prepare_sample(config.task, config.seed, s); });
    const ForwardTrace trace =
        stage("forward", [&] { return forward_trace(model.config, model.weights, p.assembled.tokens); });
    for (const std::string& method : config.methods) {
      const AttributionResult result = stage("attribute", [&] {
        return run_method(method, trace, model, p.assembled.segments, config.hops, config.loo_chunk);
      });
      const MetricsRecord m = stage("metrics", [&] {
        return evaluate(config.metrics, result, p.sample, p.assembled, model, config.curve_mode);
      });
      json rho = json::array();
      for (const auto& h : result.hops) rho.push_back(h.rho);
      json flags = result.flags;
      if (p.assembled.unknown_words > 0) flags.push_back("unknown_words");
      records.push_back({{"id", p.id},
                         {"task", task_name(config.task.kind)},
                         {"method", method},
                         {"hops_requested", result.hops_requested},
                         {"hops_completed", result.hops_completed()},
                         {"rho", rho},
                         {"flags", flags},
                         {"metrics", metrics_to_json(m)}});
      if (!result.hops.empty()) {
        stage("report", [&] {
          emit_heatmap(result, words_of(p.assembled.tokens), out / ("heatmap_" + p.id + "_" + method + ".html"));
          return 0;
        });
      }
    }
  }
  stage("report", [&] {
    write_lines(out / "records.jsonl", records);
    return 0;
  });
}

std::vector<json> ablate_hops(const PipelineConfig& config, const std::vector<int>& ks,
                              const std::filesystem::path& out) {
  const LoadedModel model = stage("model", [&] { return build_model(config.model, config.seed); });
  std::vector<json> records;
  for (std::size_t s = 0; s < config.task.samples; ++s) {
    const PreparedSample p = stage("generate", [&] { return prepare_sample(config.task, config.seed, s); });
    const ForwardTrace trace =
        stage("forward", [&] { return forward_trace(model.config, model.weights, p.assembled.tokens); });
    for (int k : ks) {
      const AttributionResult result =
          stage("attribute", [&] { return recursive_attribute(trace, model.weights, p.assembled.segments, k); });
      const MetricsRecord m = stage("metrics", [&] {
        return evaluate(config.metrics, result, p.sample, p.assembled, model, config.curve_mode);
      });
      double discount = 1.0;
      json rho = json::array();
      for (int j = 0; j < k; ++j) {
        discount *= static_cast<std::size_t>(j) < result.hops.size() ? result.hops[j].rho : 0.0;
      }
      for (const auto& h : result.hops) rho.push_back(h.rho);
      records.push_back({{"id", p.id},
                         {"K", k},
                         {"hops_completed", result.hops_completed()},
                         {"rho", rho},
                         {"discount", discount},
                         {"flags", result.flags},
                         {"metrics", metrics_to_json(m)}});
    }
  }
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_lines(out / "records.jsonl", records);
  }
  return records;
}

}  // namespace flashtrace
