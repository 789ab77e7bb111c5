#include <filesystem>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "support.hpp"

#include "flashtrace/bench.hpp"
#include "flashtrace/report.hpp"

using namespace flashtrace;

namespace {

BenchGrid tiny_grid() {
  BenchGrid g;
  g.context_lengths = {64};
  g.target_lengths = {4, 64};
  g.model = support::small_config(2, 2, 8, 32);
  g.repeats = 1;
  return g;
}

std::vector<double> attribute_values(const std::string& html, const std::string& attr, std::size_t row) {
  // rows are separated by the row container
  std::size_t pos = 0;
  for (std::size_t r = 0; r <= row; ++r) {
    pos = html.find("<div class=\"row", pos);
    REQUIRE(pos != std::string::npos);
    if (r < row) ++pos;
  }
  const std::size_t end = html.find("</div></div>", pos);
  const std::string body = html.substr(pos, end - pos);
  std::vector<double> out;
  const std::regex re(attr + "=\"([^\"]+)\"");
  for (auto it = std::sregex_iterator(body.begin(), body.end(), re); it != std::sregex_iterator(); ++it) {
    out.push_back(std::stod((*it)[1]));
  }
  return out;
}

}  // namespace

TEST_CASE("bench counters follow the closed-form counts") {
  const BenchGrid g = tiny_grid();
  const auto records = bench_scaling(g, 1);
  REQUIRE(records.size() == 4);
  const std::uint64_t lh = g.model.n_layers * g.model.n_heads;
  for (const auto& r : records) {
    CHECK(r.wall_time > 0.0);
    CHECK(r.status == "ok");
    CHECK(r.peak_working_bytes > 0);
    if (r.method == "flashtrace") {
      CHECK(r.vector_op_count == lh * r.n);
    } else {
      std::uint64_t expect = 0;
      for (std::size_t i = r.n - r.m; i < r.n; ++i) expect += lh * (i + 1);
      CHECK(r.vector_op_count == expect);
    }
  }
  const auto again = bench_scaling(g, 1);
  for (std::size_t i = 0; i < records.size(); ++i) CHECK(again[i].vector_op_count == records[i].vector_op_count);

  std::ostringstream csv;
  write_bench_csv(csv, records);
  const std::string text = csv.str();
  CHECK(text.starts_with("method,N,M,wall_time,forward_time,peak_working_bytes,vector_op_count,status\n"));
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
}

TEST_CASE("working-set limit marks cells as oom") {
  BenchGrid g = tiny_grid();
  g.working_limit_bytes = 16 * 1024;  // flashtrace needs ~10 KiB here, naive at M = 64 over 32 KiB
  const auto records = bench_scaling(g, 1);
  bool saw_oom = false;
  for (const auto& r : records) {
    if (r.method == "naive" && r.m == 64) {
      CHECK(r.status == "oom");
      saw_oom = true;
    }
    if (r.method == "flashtrace") CHECK(r.status == "ok");
  }
  CHECK(saw_oom);
  g.methods = {"bogus"};
  CHECK_THROWS_AS(bench_scaling(g, 1), Error);
}

TEST_CASE("heatmap rows, deltas and colors") {
  AttributionResult r;
  r.method = "flashtrace";
  r.n = 5;
  r.segments = {2, 4, 5};
  r.hops.push_back({{0.1, 0.2, 0.3, 0.4, 0.0}, 0.7});
  r.hops.push_back({{0.5, 0.1, 0.2, 0.2, 0.0}, 0.4});
  const std::vector<std::string> words{"a", "<b>", "c", "d", "e"};
  const std::string html = render_heatmap(r, words);

  const auto hop0 = attribute_values(html, "data-score", 0);
  CHECK(hop0 == r.hops[0].w);
  const auto delta = attribute_values(html, "data-delta", 2);
  REQUIRE(delta.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(delta[i] == r.hops[1].w[i] - r.hops[0].w[i]);

  std::size_t spans = 0;
  for (std::size_t p = html.find("class=\"tok "); p != std::string::npos; p = html.find("class=\"tok ", p + 1)) ++spans;
  CHECK(spans == 3 * 5);
  CHECK(html.find("&lt;b&gt;") != std::string::npos);
  CHECK(html.find("<b>") == std::string::npos);
  // token 0 gains (green), token 1 loses (red)
  CHECK(std::regex_search(html, std::regex("data-pos=\"0\" data-delta=\"[^\"]+\" style=\"background:rgba\\(130,190,166")));
  CHECK(std::regex_search(html, std::regex("data-pos=\"1\" data-delta=\"[^\"]+\" style=\"background:rgba\\(219,136,135")));
  CHECK(html.find("boundary") != std::string::npos);

  AttributionResult empty;
  CHECK_THROWS_AS(render_heatmap(empty, {}), Error);
  CHECK_THROWS_AS(render_heatmap(r, {"a"}), Error);
  try {
    emit_heatmap(r, words, "/nonexistent-dir/x/heatmap.html");
    FAIL("expected io_failure");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::io_failure);
  }
  const auto path = std::filesystem::temp_directory_path() / "flashtrace_heatmap_test.html";
  emit_heatmap(r, words, path);
  CHECK(std::filesystem::file_size(path) == html.size());
}
