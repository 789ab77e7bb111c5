// Command-line front end: gen, attribute, eval, bench, report, ablate-hops.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "flashtrace/bench.hpp"
#include "flashtrace/pipeline.hpp"
#include "flashtrace/report.hpp"
#include "flashtrace/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flashtrace;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  cmd->add_option("--seed", c.seed, "Override the config seed");
  auto* opt = cmd->add_option("--config", c.config, "Config JSON file");
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

PipelineConfig load(const Common& c) {
  PipelineConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io_failure, "cannot open " + path.string());
  f << text;
  if (!f) throw Error(Errc::io_failure, "cannot write " + path.string());
}

void cmd_gen(const Common& c) {
  const PipelineConfig cfg = load(c);
  fs::create_directories(c.out);
  std::string lines;
  for (std::size_t s = 0; s < cfg.task.samples; ++s) {
    lines += jsonl_line(sample_to_json(prepare_sample(cfg.task, cfg.seed, s).sample));
  }
  write_file(fs::path(c.out) / "samples.jsonl", lines);
}

void cmd_attribute(const Common& c, std::size_t index) {
  const PipelineConfig cfg = load(c);
  fs::create_directories(c.out);
  const LoadedModel model = build_model(cfg.model, cfg.seed);
  const PreparedSample p = prepare_sample(cfg.task, cfg.seed, index);
  const ForwardTrace trace = forward_trace(model.config, model.weights, p.assembled.tokens);
  std::vector<std::string> words;
  for (TokenId t : p.assembled.tokens) words.push_back(Vocabulary::standard().word(t));
  for (const auto& method : cfg.methods) {
    const AttributionResult r = run_method(method, trace, model, p.assembled.segments, cfg.hops, cfg.loo_chunk);
    const json doc{{"id", p.id}, {"words", words}, {"result", result_to_json(r)}};
    write_file(fs::path(c.out) / ("attribution_" + p.id + "_" + method + ".json"), doc.dump() + "\n");
  }
}

void cmd_bench(const Common& c) {
  PipelineConfig cfg;
  if (!c.config.empty()) cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  const auto records = bench_scaling(cfg.bench, cfg.seed);
  fs::create_directories(c.out);
  std::ofstream f(fs::path(c.out) / "bench.csv");
  if (!f) throw Error(Errc::io_failure, "cannot write bench.csv");
  write_bench_csv(f, records);
  write_bench_csv(std::cout, records);
}

void cmd_report(const Common& c, const std::vector<std::string>& inputs) {
  fs::create_directories(c.out);
  for (const auto& in : inputs) {
    std::ifstream f(in);
    if (!f) throw Error(Errc::io_failure, "cannot open " + in);
    json doc;
    try {
      doc = json::parse(f);
    } catch (const json::exception& e) {
      throw Error(Errc::bad_config, in + ": " + e.what());
    }
    const AttributionResult r = result_from_json(doc.at("result"));
    const auto words = doc.at("words").get<std::vector<std::string>>();
    const std::string id = doc.value("id", fs::path(in).stem().string()) + "_" + r.method;
    emit_heatmap(r, words, fs::path(c.out) / ("heatmap_" + id + ".html"));
  }
}

void cmd_ablate(const Common& c, const std::vector<int>& ks) {
  const PipelineConfig cfg = load(c);
  const auto records = ablate_hops(cfg, ks, c.out);
  std::cout << "id\tK\thops_completed\tdiscount\trise\tmas\n";
  for (const auto& r : records) {
    const auto& m = r.at("metrics");
    std::cout << r.at("id").get<std::string>() << '\t' << r.at("K") << '\t' << r.at("hops_completed") << '\t'
              << r.at("discount") << '\t' << m.at("rise") << '\t' << m.at("mas") << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Span-wise recursive attribution for decoder-only transformers"};
  app.require_subcommand(1);

  Common gen, attribute, eval, bench, report, ablate;
  add_common(app.add_subcommand("gen", "Generate task samples (samples.jsonl)"), gen, true);

  auto* attribute_cmd = app.add_subcommand("attribute", "Attribute one sample with every configured method");
  add_common(attribute_cmd, attribute, true);
  std::size_t sample_index = 0;
  attribute_cmd->add_option("--sample", sample_index, "Sample index")->capture_default_str();

  add_common(app.add_subcommand("eval", "Full pipeline: records.jsonl and heatmaps"), eval, true);
  add_common(app.add_subcommand("bench", "Scaling benchmark (bench.csv)"), bench, false);

  auto* report_cmd = app.add_subcommand("report", "Render heatmaps from attribution JSON files");
  add_common(report_cmd, report, false);
  std::vector<std::string> inputs;
  report_cmd->add_option("inputs", inputs, "attribution_*.json files")->required();

  auto* ablate_cmd = app.add_subcommand("ablate-hops", "Hop-count ablation of flashtrace");
  add_common(ablate_cmd, ablate, true);
  std::vector<int> ks{0, 1, 2, 3};
  ablate_cmd->add_option("--ks", ks, "Hop counts")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen")) cmd_gen(gen);
    if (app.got_subcommand("attribute")) cmd_attribute(attribute, sample_index);
    if (app.got_subcommand("eval")) run_pipeline(load(eval), eval.out);
    if (app.got_subcommand("bench")) cmd_bench(bench);
    if (app.got_subcommand("report")) cmd_report(report, inputs);
    if (app.got_subcommand("ablate-hops")) cmd_ablate(ablate, ks);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
