#include "flashtrace/serialize.hpp"

namespace flashtrace {

namespace {

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json result_to_json(const AttributionResult& r) {
  nlohmann::json hops = nlohmann::json::array();
  for (const auto& h : r.hops) hops.push_back({{"w", h.w}, {"rho", h.rho}});
  return {{"version", kResultSchemaVersion},
          {"n", r.n},
          {"segments", {{"a", r.segments.a}, {"b", r.segments.b}}},
          {"hops", hops},
          {"final", r.final},
          {"method", r.method},
          {"hops_requested", r.hops_requested},
          {"flags", r.flags}};
}

AttributionResult result_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kResultSchemaVersion) {
      throw Error(Errc::unsupported_version, "attribution result version " + j.at("version").dump());
    }
    AttributionResult r;
    r.n = j.at("n").get<std::size_t>();
    r.segments = {j.at("segments").at("a").get<std::size_t>(), j.at("segments").at("b").get<std::size_t>(), r.n};
    for (const auto& h : j.at("hops")) r.hops.push_back({h.at("w").get<Vector>(), h.at("rho").get<double>()});
    r.final = j.at("final").get<Vector>();
    r.method = j.at("method").get<std::string>();
    r.hops_requested = j.value("hops_requested", 0);
    r.flags = j.at("flags").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::bad_config, std::string("malformed attribution result: ") + e.what());
  }
}

nlohmann::json metrics_to_json(const MetricsRecord& m) {
  return {{"recovery", optional_number(m.recovery)},
          {"rise", optional_number(m.rise)},
          {"mas", optional_number(m.mas)},
          {"schedule", m.schedule},
          {"curve", m.curve},
          {"baseline", optional_number(m.baseline)},
          {"flags", m.flags}};
}

std::string jsonl_line(const nlohmann::json& j) { return j.dump() + "\n"; }

}  // namespace flashtrace
