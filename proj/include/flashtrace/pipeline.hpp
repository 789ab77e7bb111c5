#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "flashtrace/bench.hpp"
#include "flashtrace/metrics.hpp"
#include "flashtrace/planted.hpp"
#include "flashtrace/serialize.hpp"
#include "flashtrace/tasks.hpp"
#include "flashtrace/weights_io.hpp"

namespace flashtrace {

struct TaskConfig {
  TaskKind kind = TaskKind::niah;
  std::size_t context_len = 1024;
  std::size_t needles = 1;
  std::size_t vt_hops = 2;
  std::size_t chains = 3;
  std::size_t samples = 1;
  std::size_t reasoning_len = 32;
};

enum class PlantKind { one_hop, two_hop };

struct ModelSpec {
  std::string kind = "random";  // random | planted | file
  ModelConfig config;
  std::filesystem::path path;   // kind == file
  PlantKind plant = PlantKind::two_hop;
  double concentration = 0.9;
  double noise_scale = 0.002;
};

struct PipelineConfig {
  TaskConfig task;
  ModelSpec model;
  std::vector<std::string> methods;  // flashtrace | naive | rollout | loo
  int hops = 1;
  std::vector<std::string> metrics{"recovery", "rise", "mas"};
  BenchGrid bench;
  std::uint64_t seed = 0;
  std::size_t loo_chunk = 16;
  CurveMode curve_mode = CurveMode::mean_token;
};

/// Validates and fills defaults. A missing required field (task, task.kind,
/// model, model.kind, methods, seed; model.path for file models) throws
/// Errc::bad_config naming it.
PipelineConfig parse_config(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

/// Shape used for planted models unless the config overrides it: one layer,
/// two heads of width 128 so the task vocabulary fits one-hot.
ModelConfig planted_model_config();

/// The plant that matches the scripted tasks. One hop: output tokens attend
/// to evidence tokens. Two hops: output tokens attend to reasoning markers
/// (layer 0 head 0), which attend to evidence tokens (layer 0 head 1).
PlantSpec task_plant(PlantKind kind, double concentration, double noise_scale);

LoadedModel build_model(const ModelSpec& spec, std::uint64_t seed);

struct PreparedSample {
  std::string id;
  Sample sample;
  Assembled assembled;
};

/// Sample `index` of the configured task with its scripted reasoning and output.
PreparedSample prepare_sample(const TaskConfig& task, std::uint64_t seed, std::size_t index);

/// Runs one method. Methods that yield a full-sequence distribution report it
/// as hop 0; "flashtrace" uses `hops`.
AttributionResult run_method(const std::string& method, const ForwardTrace& trace, const LoadedModel& model,
                             const Segments& seg, int hops, std::size_t loo_chunk);

/// Metrics named in `metrics`. Metrics the sample cannot support (input too
/// short) are skipped with a flag instead of failing the run.
MetricsRecord evaluate(const std::vector<std::string>& metrics, const AttributionResult& result,
                       const Sample& sample, const Assembled& assembled, const LoadedModel& model,
                       CurveMode mode);

/// generate -> assemble -> forward -> attribute -> metrics -> reports.
/// Writes records.jsonl and heatmap_{id}.html into `out`. Stage failures
/// rethrow with the stage name in the message.
void run_pipeline(const PipelineConfig& config, const std::filesystem::path& out);

/// One flashtrace record per K per sample, with the discount product
/// prod_{j<K} rho_j (zero once recursion stopped). Written to records.jsonl
/// when `out` is non-empty; returned either way.
std::vector<nlohmann::json> ablate_hops(const PipelineConfig& config, const std::vector<int>& ks,
                                        const std::filesystem::path& out);

}  // namespace flashtrace
