#pragma once

// Saliency export: JSON (ranked top-N plus the full score grid) and Graphviz
// DOT with one cluster per timestep, fill shade from min-max normalised score
// and the top-N drawn as double circles.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gradxkg/errors.hpp"
#include "gradxkg/explain.hpp"
#include "gradxkg/tkg.hpp"

namespace gradxkg {

inline nlohmann::ordered_json saliency_json(const Saliency& s, const TemporalKG& g, std::size_t top_n) {
  const auto label = [&](const Vocabulary& v, std::size_t id) { return id < v.size() ? v.label(id) : std::to_string(id); };
  const auto time_label = [&](std::size_t t) { return t < g.raw_timestamps.size() ? g.raw_timestamps[t] : std::to_string(t); };
  nlohmann::ordered_json j;
  j["query"] = {{"subject", label(g.entities, s.query.subject)},
                {"relation", label(g.relations, s.query.relation)},
                {"object", label(g.entities, s.query.object)},
                {"timestamp", time_label(s.query.timestamp)},
                {"ids", {s.query.subject, s.query.relation, s.query.object, s.query.timestamp}}};
  j["method"] = s.method;
  j["mode"] = to_string(s.mode);
  j["ig_samples"] = s.ig_samples;
  j["top_n"] = top_n;
  j["entries"] = nlohmann::ordered_json::array();
  std::size_t rank = 1;
  for (const auto& e : s.top(top_n)) {
    j["entries"].push_back({{"node", label(g.entities, e.key.node)},
                            {"node_id", e.key.node},
                            {"timestep", e.key.timestep},
                            {"time_label", time_label(e.key.timestep)},
                            {"score", e.score},
                            {"rank", rank++}});
  }
  // full grid, one row per timestep, indexed by node id
  j["scores"] = nlohmann::ordered_json::array();
  for (std::size_t t : s.timesteps) {
    std::vector<double> row;
    for (const auto& e : s.entries)
      if (e.key.timestep == t) row.push_back(e.score);
    j["scores"].push_back({{"timestep", t}, {"values", row}});
  }
  return j;
}

inline Saliency saliency_from_json(const nlohmann::json& j) {
  try {
    Saliency s;
    s.method = j.at("method").get<std::string>();
    s.mode = parse_saliency_mode(j.at("mode").get<std::string>());
    s.ig_samples = j.at("ig_samples").get<std::size_t>();
    const auto ids = j.at("query").at("ids");
    s.query = {ids.at(0).get<std::size_t>(), ids.at(1).get<std::size_t>(), ids.at(2).get<std::size_t>(),
               ids.at(3).get<std::size_t>()};
    for (const auto& row : j.at("scores")) {
      const auto t = row.at("timestep").get<std::size_t>();
      s.timesteps.push_back(t);
      const auto values = row.at("values").get<std::vector<double>>();
      for (std::size_t n = 0; n < values.size(); ++n) s.entries.push_back({{n, t}, values[n]});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed saliency JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed saliency JSON: ") + e.what());
  }
}

namespace detail {
inline std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

// White at 0, saturated red at 1.
inline std::string heat_colour(double x) {
  const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::clamp(x, 0.0, 1.0))));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#ff%02x%02x", fade, fade);
  return buf;
}
}  // namespace detail

inline std::string saliency_dot(const Saliency& s, const TemporalKG& g, std::size_t top_n) {
  double lo = 0.0, hi = 0.0;
  if (!s.entries.empty()) {
    lo = hi = s.entries.front().score;
    for (const auto& e : s.entries) {
      lo = std::min(lo, e.score);
      hi = std::max(hi, e.score);
    }
  }
  const auto top = s.top_set(top_n);
  const auto label = [&](EntityId n) { return n < g.num_entities() ? g.entities.label(n) : std::to_string(n); };
  std::ostringstream out;
  out << "digraph saliency {\n  rankdir=LR;\n  node [style=filled, shape=circle, fontsize=10];\n";
  for (std::size_t t : s.timesteps) {
    out << "  subgraph cluster_t" << t << " {\n    label=\"t=" << t;
    if (t < g.raw_timestamps.size()) out << " (" << detail::dot_escape(g.raw_timestamps[t]) << ")";
    out << "\";\n";
    for (const auto& e : s.entries) {
      if (e.key.timestep != t) continue;
      const double x = hi > lo ? (e.score - lo) / (hi - lo) : 0.0;
      out << "    n" << e.key.node << "_t" << t << " [label=\"" << detail::dot_escape(label(e.key.node))
          << "\", fillcolor=\"" << detail::heat_colour(x) << "\"";
      if (top.count(e.key)) out << ", shape=doublecircle, penwidth=2";
      out << "];\n";
    }
    if (t < g.num_timesteps()) {
      for (const auto& e : g.snapshots[t].edges) {
        out << "    n" << e.subject << "_t" << t << " -> n" << e.object << "_t" << t << " [label=\""
            << detail::dot_escape(e.relation < g.num_relations() ? g.relations.label(e.relation)
                                                                 : std::to_string(e.relation))
            << "\", fontsize=8];\n";
      }
    }
    out << "  }\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace gradxkg
