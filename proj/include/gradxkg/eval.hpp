#pragma once

// Automatic evaluation of explainers: fidelity (score drop after removing the
// explanation), stability (top-N overlap under slight edge perturbation) and
// cost (wall time and counted model evaluations), gathered into a report.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gradxkg/errors.hpp"
#include "gradxkg/explain.hpp"
#include "gradxkg/model.hpp"
#include "gradxkg/rng.hpp"
#include "gradxkg/tkg.hpp"

namespace gradxkg {

enum class RemovalScope { union_nodes, per_node };

inline const char* to_string(RemovalScope s) { return s == RemovalScope::union_nodes ? "union" : "per-node"; }

inline RemovalScope parse_removal(const std::string& s) {
  if (s == "union") return RemovalScope::union_nodes;
  if (s == "per-node") return RemovalScope::per_node;
  throw ConfigError("unknown removal scope: " + s);
}

// An explainer takes a per-call seed so randomized methods can draw fresh
// scores for every call while staying reproducible.
struct Explainer {
  std::string name;
  std::function<Saliency(const Model&, const TemporalKG&, const Query&, std::uint64_t call_seed)> run;
};

inline Explainer make_explainer(const std::string& name, const ExplainOptions& options = {}) {
  if (name == "gradxkg") {
    return {name, [options](const Model& m, const TemporalKG& g, const Query& q, std::uint64_t) {
              return explain(m, g, q, options);
            }};
  }
  if (name == "perturbation") {
    return {name, [options](const Model& m, const TemporalKG& g, const Query& q, std::uint64_t) {
              return perturbation_explain(m, g, q, options.window);
            }};
  }
  if (name == "random") {
    return {name, [options](const Model& m, const TemporalKG& g, const Query& q, std::uint64_t seed) {
              return random_explain(g, q, options.window.value_or(m.window), seed);
            }};
  }
  throw ConfigError("unknown explainer: " + name + " (expected gradxkg, perturbation or random)");
}

// ---- fidelity ------------------------------------------------------------------------

namespace detail {

struct EditableWindow {
  std::vector<Snapshot> snapshots;

  explicit EditableWindow(const Window& w) {
    for (const Snapshot* s : w) snapshots.push_back(*s);
  }
  Window view() const {
    Window w;
    for (const auto& s : snapshots) w.push_back(&s);
    return w;
  }
  std::size_t index_of(std::size_t timestep) const {
    for (std::size_t i = 0; i < snapshots.size(); ++i)
      if (snapshots[i].timestamp == timestep) return i;
    throw DimensionError("timestep " + std::to_string(timestep) + " lies outside the query's history window");
  }
};

}  // namespace detail

// union: s(G) - s(G without every top-N node at its timestep);
// per-node: mean over the top-N of s(G) - s(G without that node).
// The empty explanation has fidelity 0.
inline double fidelity(const Model& model, const TemporalKG& g, const Query& query, const Saliency& saliency,
                       std::size_t top_n, RemovalScope scope, std::optional<std::size_t> window = std::nullopt) {
  const auto top = saliency.top(top_n);
  if (top.empty()) return 0.0;
  const Window base = history_window(g, query, window.value_or(model.window));
  detail::EditableWindow probe(base);
  for (const auto& e : top) {
    probe.index_of(e.key.timestep);
    if (e.key.node >= g.num_entities()) throw DimensionError("explained node outside the vocabulary");
  }
  const double s0 = score_window(model, base, query).value();
  if (scope == RemovalScope::union_nodes) {
    detail::EditableWindow w(base);
    for (const auto& e : top) {
      auto& snap = w.snapshots[w.index_of(e.key.timestep)];
      snap = remove_node(snap, e.key.node);
    }
    return s0 - score_window(model, w.view(), query).value();
  }
  double acc = 0.0;
  for (const auto& e : top) {
    detail::EditableWindow w(base);
    auto& snap = w.snapshots[w.index_of(e.key.timestep)];
    snap = remove_node(snap, e.key.node);
    acc += s0 - score_window(model, w.view(), query).value();
  }
  return acc / static_cast<double>(top.size());
}

// ---- stability -----------------------------------------------------------------------

struct StabilityConfig {
  double fraction = 0.05;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t top_n = 5;
  std::optional<std::size_t> window;
};

inline double overlap(const std::set<NodeTime>& original, const std::set<NodeTime>& perturbed) {
  if (original.empty()) throw DimensionError("stability: empty original explanation");
  std::size_t hits = 0;
  for (const auto& k : perturbed) hits += original.count(k);
  return static_cast<double>(hits) / static_cast<double>(original.size());
}

// Copy of `g` whose history-window snapshots lost `fraction` of their edges.
// Edges touching the query subject are kept so the query itself stays intact.
inline TemporalKG perturbed_graph(const TemporalKG& g, const Query& query, std::size_t window, double fraction,
                                  std::uint64_t seed) {
  TemporalKG out = g;
  for (const Snapshot* s : history_window(g, query, window)) {
    out.snapshots[s->timestamp] =
        perturb_edges(*s, fraction, derive_seed(seed, "stability/perturb", s->timestamp), query.subject);
  }
  return out;
}

// Mean over seeds of |N_p intersect N_o| / |N_o|. `original` may be passed in
// when the caller already holds the explanation of the unperturbed graph.
inline double stability(const Explainer& explainer, const Model& model, const TemporalKG& g, const Query& query,
                        const StabilityConfig& cfg, std::uint64_t call_seed,
                        const std::optional<Saliency>& original = std::nullopt) {
  if (cfg.seeds.empty()) throw ConfigError("stability: need at least one perturbation seed");
  if (!(cfg.fraction >= 0.0 && cfg.fraction < 1.0)) throw ConfigError("stability: fraction must lie in [0,1)");
  const std::size_t w = cfg.window.value_or(model.window);
  const auto n_o = (original ? *original : explainer.run(model, g, query, call_seed)).top_set(cfg.top_n);
  double acc = 0.0;
  for (std::uint64_t seed : cfg.seeds) {
    const TemporalKG pg = perturbed_graph(g, query, w, cfg.fraction, seed);
    const auto n_p = explainer.run(model, pg, query, derive_seed(call_seed, "stability/call", seed)).top_set(cfg.top_n);
    acc += overlap(n_o, n_p);
  }
  return acc / static_cast<double>(cfg.seeds.size());
}

// ---- cost ----------------------------------------------------------------------------

struct CostInput {
  std::string name;
  double seconds = 0.0;
  std::uint64_t forward = 0;
};

struct CostRatio {
  std::string name;
  double time_ratio = 1.0;     // wall time / fastest wall time
  double forward_ratio = 1.0;  // forward count / smallest forward count
};

inline std::vector<CostRatio> time_cost(const std::vector<CostInput>& in) {
  if (in.empty()) throw ConfigError("time_cost: no measurements");
  double min_t = in.front().seconds;
  std::uint64_t min_f = in.front().forward;
  for (const auto& c : in) {
    if (!(c.seconds > 0.0) || !std::isfinite(c.seconds)) {
      throw DataError("time_cost: degenerate wall time for " + c.name);
    }
    min_t = std::min(min_t, c.seconds);
    min_f = std::min(min_f, c.forward);
  }
  std::vector<CostRatio> out;
  for (const auto& c : in) {
    out.push_back({c.name, c.seconds / min_t,
                   min_f == 0 ? 1.0 : static_cast<double>(c.forward) / static_cast<double>(min_f)});
  }
  return out;
}

// ---- statistics ----------------------------------------------------------------------

// One-sided sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
inline double sign_test_p(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k) {
    p += std::exp(std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) - std::lgamma(double(n - k) + 1) -
                  double(n) * std::log(2.0));
  }
  return std::min(p, 1.0);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---- suite ---------------------------------------------------------------------------

struct EvalConfig {
  std::vector<Query> queries;
  std::size_t top_n = 5;
  RemovalScope scope = RemovalScope::union_nodes;
  double perturb_fraction = 0.05;
  std::vector<std::uint64_t> stability_seeds{1, 2, 3};
  std::uint64_t seed = 0;
  std::optional<std::size_t> window;
  std::size_t jobs = 1;
  std::string dataset = "dataset";

  void validate() const {
    if (top_n < 1) throw ConfigError("top-N must be >= 1");
    if (!(perturb_fraction >= 0.0 && perturb_fraction < 1.0)) {
      throw ConfigError("perturbation fraction must lie in [0,1)");
    }
    if (stability_seeds.empty()) throw ConfigError("need at least one stability seed");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
  }
};

struct QueryResult {
  Query query;
  bool ok = true;
  std::string error;
  double fidelity = 0.0;
  double stability = 0.0;
  EvalCounter::Counts counts;  // explanation call only
  double seconds = 0.0;
};

struct ExplainerReport {
  std::string name;
  std::vector<QueryResult> queries;
  double fidelity_mean = 0.0, fidelity_std = 0.0, stability_mean = 0.0;
  EvalCounter::Counts counts;
  double seconds = 0.0;
  double time_ratio = 1.0, forward_ratio = 1.0;
  std::size_t failures = 0;
};

struct EvalReport {
  EvalConfig config;
  std::vector<ExplainerReport> explainers;
};

inline QueryResult evaluate_query(const Explainer& ex, const Model& model, const TemporalKG& g, const Query& q,
                                  const EvalConfig& cfg, std::uint64_t call_seed) {
  QueryResult r;
  r.query = q;
  try {
    const auto before = model.counter.counts();
    const auto t0 = std::chrono::steady_clock::now();
    const Saliency s = ex.run(model, g, q, call_seed);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.counts = model.counter.counts() - before;
    r.fidelity = fidelity(model, g, q, s, cfg.top_n, cfg.scope, cfg.window);
    StabilityConfig sc{cfg.perturb_fraction, cfg.stability_seeds, cfg.top_n, cfg.window};
    r.stability = stability(ex, model, g, q, sc, call_seed, s);
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

// Evaluates every explainer on every query. Workers own a copy of the model
// so their counter deltas are exact; results are merged in query order.
inline EvalReport run_suite(const Model& model, const TemporalKG& g, const std::vector<Explainer>& explainers,
                            const EvalConfig& cfg) {
  cfg.validate();
  if (explainers.empty()) throw ConfigError("run_suite: no explainers");
  EvalReport report;
  report.config = cfg;
  const std::size_t nq = cfg.queries.size();
  for (std::size_t e = 0; e < explainers.size(); ++e) {
    ExplainerReport row;
    row.name = explainers[e].name;
    row.queries.resize(nq);
    const std::size_t jobs = std::min(cfg.jobs, std::max<std::size_t>(nq, 1));
    const auto work = [&](std::size_t worker) {
      Model local = model;
      local.counter.reset();
      for (std::size_t i = worker; i < nq; i += jobs) {
        const std::uint64_t call_seed = derive_seed(cfg.seed, "suite/" + explainers[e].name, i);
        row.queries[i] = evaluate_query(explainers[e], local, g, cfg.queries[i], cfg, call_seed);
      }
    };
    if (jobs == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(work, w);
      for (auto& t : pool) t.join();
    }
    std::vector<double> fid, stab;
    for (const auto& q : row.queries) {
      if (!q.ok) {
        ++row.failures;
        continue;
      }
      fid.push_back(q.fidelity);
      stab.push_back(q.stability);
      row.counts += q.counts;
      row.seconds += q.seconds;
    }
    row.fidelity_mean = mean_of(fid);
    row.fidelity_std = std_of(fid);
    row.stability_mean = mean_of(stab);
    report.explainers.push_back(std::move(row));
  }
  std::vector<CostInput> cost;
  bool timed = true;
  for (const auto& r : report.explainers) {
    cost.push_back({r.name, r.seconds, r.counts.forward});
    timed = timed && r.seconds > 0.0;
  }
  if (timed) {
    const auto ratios = time_cost(cost);
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      report.explainers[i].time_ratio = ratios[i].time_ratio;
      report.explainers[i].forward_ratio = ratios[i].forward_ratio;
    }
  }
  return report;
}

// ---- report output -------------------------------------------------------------------

inline nlohmann::json query_json(const Query& q) {
  return {{"subject", q.subject}, {"relation", q.relation}, {"object", q.object}, {"timestamp", q.timestamp}};
}

// Everything wall-clock dependent lives under "timing" so the rest of the
// document is reproducible byte for byte.
inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["config"] = {{"dataset", r.config.dataset},
                 {"top_n", r.config.top_n},
                 {"removal", to_string(r.config.scope)},
                 {"perturb_fraction", r.config.perturb_fraction},
                 {"stability_seeds", r.config.stability_seeds},
                 {"seed", r.config.seed},
                 {"queries", r.config.queries.size()}};
  if (r.config.window) j["config"]["window"] = *r.config.window;
  j["explainers"] = nlohmann::ordered_json::array();
  j["timing"] = nlohmann::ordered_json::object();
  for (const auto& e : r.explainers) {
    nlohmann::ordered_json row;
    row["name"] = e.name;
    row["fidelity_mean"] = e.fidelity_mean;
    row["fidelity_std"] = e.fidelity_std;
    row["stability_mean"] = e.stability_mean;
    row["forward"] = e.counts.forward;
    row["backward"] = e.counts.backward;
    row["forward_ratio"] = e.forward_ratio;
    row["failures"] = e.failures;
    row["queries"] = nlohmann::ordered_json::array();
    nlohmann::ordered_json times = nlohmann::ordered_json::array();
    for (const auto& q : e.queries) {
      nlohmann::ordered_json qj;
      qj["query"] = query_json(q.query);
      qj["ok"] = q.ok;
      if (!q.ok) qj["error"] = q.error;
      qj["fidelity"] = q.fidelity;
      qj["stability"] = q.stability;
      qj["forward"] = q.counts.forward;
      qj["backward"] = q.counts.backward;
      row["queries"].push_back(qj);
      times.push_back(q.seconds);
    }
    j["explainers"].push_back(row);
    j["timing"][e.name] = {{"seconds", e.seconds}, {"time_ratio", e.time_ratio}, {"per_query_seconds", times}};
  }
  return j;
}

inline std::string report_table(const EvalReport& r) {
  const std::string ds = r.config.dataset;
  std::vector<std::vector<std::string>> rows{
      {"Explainer", "Fidelity (" + ds + ")", "Stability (" + ds + ")", "Time Cost (" + ds + ")", "Forward"}};
  const auto fmt = [](double v, int prec) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << v;
    return o.str();
  };
  for (const auto& e : r.explainers) {
    std::string name = e.name;
    if (e.failures) name += " (" + std::to_string(e.failures) + " failed)";
    rows.push_back({name, fmt(e.fidelity_mean, 4) + " +- " + fmt(e.fidelity_std, 4), fmt(e.stability_mean, 4),
                    fmt(e.time_ratio, 2), std::to_string(e.counts.forward)});
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      out << (c ? "  " : "") << std::left << std::setw(static_cast<int>(width[c])) << rows[i][c];
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
      out << std::string(total, '-') << '\n';
    }
  }
  return out.str();
}

}  // namespace gradxkg
