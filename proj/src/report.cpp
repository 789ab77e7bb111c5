#include "flashtrace/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace flashtrace {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* segment_class(const Segments& seg, std::size_t i) {
  if (i < seg.a) return "seg-i";
  if (i < seg.b) return "seg-t";
  return "seg-o";
}

// One row of spans. `delta` rows use signed colors.
std::string row(const std::string& label, const Vector& values, const std::vector<std::string>& words,
                const Segments& seg, bool delta) {
  double scale = 0.0;
  for (double v : values) scale = std::max(scale, std::fabs(v));
  std::string out = "<div class=\"row" + std::string(delta ? " delta" : "") + "\"><div class=\"label\">" +
                    escape(label) + "</div><div class=\"tokens\">";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    const double alpha = scale > 0.0 ? std::fabs(v) / scale : 0.0;
    std::string color;
    if (!delta) {
      color = "rgba(70,120,200," + number(alpha) + ")";
    } else if (v > 0.0) {
      color = "rgba(130,190,166," + number(alpha) + ")";  // #82bea6
    } else {
      color = "rgba(219,136,135," + number(alpha) + ")";  // #db8887
    }
    std::string cls = std::string("tok ") + segment_class(seg, i);
    if (i == seg.a || i == seg.b) cls += " boundary";
    out += "<span class=\"" + cls + "\" data-pos=\"" + std::to_string(i) + "\" " +
           (delta ? "data-delta" : "data-score") + "=\"" + number(v) + "\" style=\"background:" + color +
           "\">" + escape(words[i]) + "</span> ";
  }
  out += "</div></div>\n";
  return out;
}

}  // namespace

std::string render_heatmap(const AttributionResult& result, const std::vector<std::string>& words) {
  if (result.hops.empty()) throw Error(Errc::invalid_argument, "heatmap needs at least one hop");
  const std::size_t n = result.hops.front().w.size();
  if (words.size() != n) throw Error(Errc::shape_mismatch, "heatmap: one word per position required");
  for (const auto& h : result.hops) {
    if (h.w.size() != n) throw Error(Errc::shape_mismatch, "heatmap: hop lengths differ");
  }
  std::string html =
      "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>attribution " + escape(result.method) +
      "</title>\n<style>\n"
      "body{font-family:monospace;font-size:12px}\n"
      ".row{margin:6px 0}.label{font-weight:bold;margin-bottom:2px}\n"
      ".tok{padding:1px 2px;line-height:1.9}\n"
      ".seg-t{border-bottom:2px solid #999}.seg-o{border-bottom:2px solid #333}\n"
      ".boundary{border-left:3px solid #000;margin-left:4px}\n"
      "</style></head><body>\n<div class=\"legend\">" +
      escape(result.method) + " | input [0," + std::to_string(result.segments.a) + ") reasoning [" +
      std::to_string(result.segments.a) + "," + std::to_string(result.segments.b) + ") output [" +
      std::to_string(result.segments.b) + "," + std::to_string(n) +
      ") | delta rows: green gains, red losses</div>\n";
  for (std::size_t k = 0; k < result.hops.size(); ++k) {
    html += row("hop " + std::to_string(k), result.hops[k].w, words, result.segments, false);
  }
  for (std::size_t k = 1; k < result.hops.size(); ++k) {
    Vector d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = result.hops[k].w[i] - result.hops[k - 1].w[i];
    html += row("delta hop " + std::to_string(k) + " - hop " + std::to_string(k - 1), d, words,
                result.segments, true);
  }
  html += "</body></html>\n";
  return html;
}

void emit_heatmap(const AttributionResult& result, const std::vector<std::string>& words,
                  const std::filesystem::path& path) {
  const std::string html = render_heatmap(result, words);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io_failure, "cannot open " + path.string());
  f << html;
  if (!f) throw Error(Errc::io_failure, "cannot write " + path.string());
}

}  // namespace flashtrace
