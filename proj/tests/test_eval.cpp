#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "gradxkg/checkpoint.hpp"
#include "gradxkg/eval.hpp"
#include "gradxkg/export.hpp"

using namespace gradxkg;

namespace {

struct Setup {
  TemporalKG g;
  Model model;
  Query q;
};

Setup make_setup(std::uint64_t seed = 3, std::size_t nodes = 10) {
  Setup s{fixtures::random_graph(nodes, 3, 6, 0.04, seed), fixtures::random_model(fixtures::small_config(), nodes, 3, 3, seed), {}};
  s.q = {1, 0, 2, 5};
  return s;
}

Saliency manual_saliency(const Query& q, std::vector<std::size_t> timesteps, std::size_t nodes,
                         const std::vector<std::pair<NodeTime, double>>& scores) {
  Saliency s;
  s.method = "manual";
  s.query = q;
  s.timesteps = timesteps;
  for (std::size_t t : timesteps)
    for (std::size_t n = 0; n < nodes; ++n) s.entries.push_back({{n, t}, 0.0});
  for (const auto& [k, v] : scores) {
    for (auto& e : s.entries)
      if (e.key == k) e.score = v;
  }
  return s;
}

// Independent re-scoring: copy the window and drop every edge touching the node by hand.
double rescore_without(const Model& m, const TemporalKG& g, const Query& q, const std::vector<NodeTime>& removed) {
  std::vector<Snapshot> snaps;
  for (std::size_t t = q.timestamp - m.window; t < q.timestamp; ++t) {
    Snapshot s = g.snapshots[t];
    std::vector<Edge> kept;
    for (const auto& e : s.edges) {
      bool drop = false;
      for (const auto& r : removed) drop |= r.timestep == t && (e.subject == r.node || e.object == r.node);
      if (!drop) kept.push_back(e);
    }
    s.edges = kept;
    snaps.push_back(s);
  }
  Window w;
  for (const auto& s : snaps) w.push_back(&s);
  return score_window(m, w, q).value();
}

std::set<EntityId> active_nodes(const TemporalKG& g, std::size_t t) {
  std::set<EntityId> out;
  for (const auto& e : g.snapshots[t].edges) {
    out.insert(e.subject);
    out.insert(e.object);
  }
  return out;
}

}  // namespace

// ---- fidelity -------------------------------------------------------------------------

TEST(Fidelity, EmptyExplanationIsZero) {
  auto s = make_setup();
  Saliency empty;
  EXPECT_EQ(fidelity(s.model, s.g, s.q, empty, 5, RemovalScope::union_nodes), 0.0);
  EXPECT_EQ(fidelity(s.model, s.g, s.q, empty, 5, RemovalScope::per_node), 0.0);
}

TEST(Fidelity, AbsentNodesGiveZero) {
  auto s = make_setup();
  std::vector<std::pair<NodeTime, double>> picks;
  for (std::size_t t = 2; t < 5; ++t) {
    const auto active = active_nodes(s.g, t);
    std::size_t taken = 0;
    for (EntityId n = 0; n < 10 && taken < 2; ++n)
      if (!active.count(n)) {
        picks.push_back({{n, t}, 1.0});
        ++taken;
      }
  }
  ASSERT_FALSE(picks.empty());
  const auto sal = manual_saliency(s.q, {2, 3, 4}, 10, picks);
  EXPECT_EQ(fidelity(s.model, s.g, s.q, sal, picks.size(), RemovalScope::union_nodes), 0.0);
  EXPECT_EQ(fidelity(s.model, s.g, s.q, sal, picks.size(), RemovalScope::per_node), 0.0);
}

TEST(Fidelity, UnionMatchesRescoringOracle) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto s = make_setup(seed);
    const std::vector<NodeTime> chosen{{1, 4}, {2, 3}, {5, 2}};
    const auto sal = manual_saliency(s.q, {2, 3, 4}, 10, {{chosen[0], 3.0}, {chosen[1], 2.0}, {chosen[2], 1.0}});
    const double s0 = score_query(s.model, s.g, s.q).value();
    EXPECT_NEAR(fidelity(s.model, s.g, s.q, sal, 3, RemovalScope::union_nodes),
                s0 - rescore_without(s.model, s.g, s.q, chosen), 1e-14);
    double mean = 0.0;
    for (const auto& c : chosen) mean += (s0 - rescore_without(s.model, s.g, s.q, {c})) / 3.0;
    EXPECT_NEAR(fidelity(s.model, s.g, s.q, sal, 3, RemovalScope::per_node), mean, 1e-14);
  }
}

TEST(Fidelity, OnlyTopNIsRemoved) {
  auto s = make_setup(2);
  const auto sal = manual_saliency(s.q, {2, 3, 4}, 10, {{{1, 4}, 3.0}, {{2, 3}, 2.0}});
  EXPECT_NEAR(fidelity(s.model, s.g, s.q, sal, 1, RemovalScope::union_nodes),
              score_query(s.model, s.g, s.q).value() - rescore_without(s.model, s.g, s.q, {{1, 4}}), 1e-14);
}

TEST(Fidelity, IgnoredNodeHasZeroTerm) {
  // scorer and history weights zero: the score cannot depend on any node
  auto s = make_setup(4);
  s.model.top.for_each([](const char*, Tensor& t) {
    for (auto& v : t.data()) v = 0.0;
  });
  const auto sal = manual_saliency(s.q, {2, 3, 4}, 10, {{{1, 4}, 1.0}, {{2, 3}, 0.5}});
  EXPECT_EQ(fidelity(s.model, s.g, s.q, sal, 2, RemovalScope::per_node), 0.0);
}

TEST(Fidelity, OutsideWindowRejected) {
  auto s = make_setup();
  auto sal = manual_saliency(s.q, {0, 1}, 10, {{{1, 0}, 1.0}});
  EXPECT_THROW(fidelity(s.model, s.g, s.q, sal, 1, RemovalScope::union_nodes), DimensionError);
  auto far = manual_saliency(s.q, {2}, 10, {});
  far.entries.push_back({{99, 2}, 5.0});
  EXPECT_THROW(fidelity(s.model, s.g, s.q, far, 1, RemovalScope::per_node), DimensionError);
}

// ---- stability ------------------------------------------------------------------------

TEST(Stability, PerturbedGraphKeepsSubjectEdges) {
  auto s = make_setup(5, 12);
  const TemporalKG p = perturbed_graph(s.g, s.q, 3, 0.9, 11);
  std::size_t removed = 0;
  for (std::size_t t = 0; t < s.g.num_timesteps(); ++t) {
    for (const auto& e : s.g.snapshots[t].edges) {
      const bool kept = std::find(p.snapshots[t].edges.begin(), p.snapshots[t].edges.end(), e) != p.snapshots[t].edges.end();
      if (t >= 2 && t < 5 && (e.subject == s.q.subject || e.object == s.q.subject)) {
        EXPECT_TRUE(kept);
      }
      if (t < 2) {
        EXPECT_TRUE(kept) << "outside the window nothing changes";
      }
      removed += !kept;
    }
  }
  EXPECT_GT(removed, 0u);
  EXPECT_EQ(p.num_edges() + removed, s.g.num_edges());
}

TEST(Stability, FractionZeroDeterministicIsOne) {
  auto s = make_setup();
  ExplainOptions o;
  o.ig_samples = 4;
  StabilityConfig cfg;
  cfg.fraction = 0.0;
  for (const char* name : {"gradxkg", "perturbation"}) {
    EXPECT_EQ(stability(make_explainer(name, o), s.model, s.g, s.q, cfg, 1), 1.0) << name;
  }
}

TEST(Stability, DisjointIsZero) {
  auto s = make_setup();
  Explainer shifting{"shifting", [](const Model&, const TemporalKG&, const Query& q, std::uint64_t seed) {
                       std::vector<std::pair<NodeTime, double>> picks;
                       const std::size_t base = seed == 42 ? 0 : 5;
                       for (std::size_t n = 0; n < 5; ++n) picks.push_back({{base + n, 4}, 1.0 + n});
                       return manual_saliency(q, {2, 3, 4}, 10, picks);
                     }};
  StabilityConfig cfg;
  EXPECT_EQ(stability(shifting, s.model, s.g, s.q, cfg, 42), 0.0);
  EXPECT_EQ(overlap({{1, 1}, {2, 2}}, {{1, 1}, {3, 3}}), 0.5);
  EXPECT_THROW(overlap({}, {{1, 1}}), DimensionError);
}

TEST(Stability, RandomExplainerNearExpectation) {
  // 5 of 10*3 = 30 candidates: expected overlap 5/30
  auto s = make_setup();
  StabilityConfig cfg;
  cfg.seeds = {1, 2, 3, 4};
  const auto random = make_explainer("random");
  double acc = 0.0;
  const std::size_t trials = 200;
  for (std::size_t i = 0; i < trials; ++i) acc += stability(random, s.model, s.g, s.q, cfg, i);
  const double mean = acc / trials, p = 5.0 / 30.0;
  // hypergeometric variance of |A ∩ B| / 5 averaged over 800 draws, with slack
  const double sd = std::sqrt(p * (1 - p) * (25.0 / 29.0) / 5.0 / (trials * cfg.seeds.size()));
  EXPECT_NEAR(mean, p, 4 * sd);
}

TEST(Stability, RejectsBadConfig) {
  auto s = make_setup();
  StabilityConfig cfg;
  cfg.seeds.clear();
  EXPECT_THROW(stability(make_explainer("random"), s.model, s.g, s.q, cfg, 1), ConfigError);
  cfg.seeds = {1};
  cfg.fraction = 1.0;
  EXPECT_THROW(stability(make_explainer("random"), s.model, s.g, s.q, cfg, 1), ConfigError);
}

// ---- cost and statistics --------------------------------------------------------------

TEST(TimeCost, IdenticalTimingsGiveOne) {
  const auto r = time_cost({{"a", 0.5, 10}, {"b", 0.5, 10}});
  for (const auto& c : r) {
    EXPECT_EQ(c.time_ratio, 1.0);
    EXPECT_EQ(c.forward_ratio, 1.0);
  }
}

TEST(TimeCost, ForwardRatioArithmetic) {
  const auto r = time_cost({{"gradxkg", 1.0, 1 + 64}, {"perturbation", 3.0, 100 * 3 + 1}});
  EXPECT_EQ(r[0].time_ratio, 1.0);
  EXPECT_EQ(r[1].time_ratio, 3.0);
  EXPECT_NEAR(r[1].forward_ratio, 301.0 / 65.0, 1e-15);
  EXPECT_NEAR(r[1].forward_ratio, 4.63, 0.005);
}

TEST(TimeCost, DegenerateRejected) {
  EXPECT_THROW(time_cost({{"a", 0.0, 1}, {"b", 1.0, 1}}), DataError);
  EXPECT_THROW(time_cost({{"a", std::nan(""), 1}}), DataError);
  EXPECT_THROW(time_cost({}), ConfigError);
}

TEST(SignTest, ExactValues) {
  EXPECT_DOUBLE_EQ(sign_test_p(10, 0), 1.0 / 1024.0);
  EXPECT_DOUBLE_EQ(sign_test_p(0, 0), 1.0);
  EXPECT_NEAR(sign_test_p(5, 5), 638.0 / 1024.0, 1e-12);
  EXPECT_NEAR(sign_test_p(9, 1), 11.0 / 1024.0, 1e-12);
  EXPECT_LT(sign_test_p(70, 30), 0.001);
}

TEST(Stats, MeanAndStd) {
  EXPECT_EQ(mean_of({}), 0.0);
  EXPECT_DOUBLE_EQ(mean_of({1, 2, 3}), 2.0);
  EXPECT_DOUBLE_EQ(std_of({1, 2, 3}), 1.0);
  EXPECT_EQ(std_of({4}), 0.0);
}

// ---- run_suite ------------------------------------------------------------------------

namespace {
EvalConfig suite_config(const Setup& s, std::size_t jobs = 1) {
  EvalConfig c;
  c.queries = {s.q, {3, 1, 4, 5}, {0, 2, 7, 4}, {6, 0, 1, 3}, {2, 1, 9, 5}};
  c.seed = 9;
  c.jobs = jobs;
  return c;
}
std::vector<Explainer> three(std::size_t p = 4) {
  ExplainOptions o;
  o.ig_samples = p;
  return {make_explainer("gradxkg", o), make_explainer("perturbation", o), make_explainer("random", o)};
}
}  // namespace

TEST(RunSuite, SingleQuerySingleExplainer) {
  auto s = make_setup();
  EvalConfig c;
  c.queries = {s.q};
  const auto r = run_suite(s.model, s.g, {make_explainer("random")}, c);
  ASSERT_EQ(r.explainers.size(), 1u);
  ASSERT_EQ(r.explainers[0].queries.size(), 1u);
  EXPECT_TRUE(r.explainers[0].queries[0].ok);
  EXPECT_EQ(r.explainers[0].time_ratio, 1.0);
}

TEST(RunSuite, IdenticalExplainersIdenticalColumns) {
  auto s = make_setup();
  ExplainOptions o;
  o.ig_samples = 4;
  const auto r = run_suite(s.model, s.g, {make_explainer("gradxkg", o), make_explainer("gradxkg", o)}, suite_config(s));
  EXPECT_EQ(r.explainers[0].fidelity_mean, r.explainers[1].fidelity_mean);
  EXPECT_EQ(r.explainers[0].fidelity_std, r.explainers[1].fidelity_std);
  EXPECT_EQ(r.explainers[0].stability_mean, r.explainers[1].stability_mean);
  EXPECT_EQ(r.explainers[0].counts, r.explainers[1].counts);
}

TEST(RunSuite, CountersSumPerQueryDeltas) {
  auto s = make_setup();
  const auto r = run_suite(s.model, s.g, three(4), suite_config(s));
  for (const auto& e : r.explainers) {
    EvalCounter::Counts sum;
    for (const auto& q : e.queries) sum += q.counts;
    EXPECT_EQ(sum, e.counts) << e.name;
  }
  EXPECT_EQ(r.explainers[0].counts.forward, 5u * 5u);               // 1 + p each
  EXPECT_EQ(r.explainers[1].counts.forward, 5u * (10u * 3u + 1u));  // n*w + 1 each
  EXPECT_EQ(r.explainers[2].counts.forward, 0u);
  double min_ratio = 1e300;
  for (const auto& e : r.explainers) {
    EXPECT_GE(e.time_ratio, 1.0);
    min_ratio = std::min(min_ratio, e.time_ratio);
  }
  EXPECT_EQ(min_ratio, 1.0);
}

TEST(RunSuite, ParallelMatchesSerial) {
  auto s = make_setup();
  const auto a = run_suite(s.model, s.g, three(), suite_config(s, 1));
  const auto b = run_suite(s.model, s.g, three(), suite_config(s, 3));
  auto strip = [](nlohmann::ordered_json j) {
    j.erase("timing");
    return j;
  };
  EXPECT_EQ(strip(report_json(a)).dump(), strip(report_json(b)).dump());
  EXPECT_EQ(s.model.counter.counts().forward, 0u) << "the caller's model is untouched";
}

TEST(RunSuite, FailuresAreMarkedNotFatal) {
  auto s = make_setup();
  EvalConfig c = suite_config(s);
  c.queries.push_back({1, 0, 2, 1});  // window of 3 does not fit
  const auto r = run_suite(s.model, s.g, {make_explainer("random")}, c);
  EXPECT_EQ(r.explainers[0].failures, 1u);
  EXPECT_FALSE(r.explainers[0].queries.back().ok);
  EXPECT_FALSE(r.explainers[0].queries.back().error.empty());
  const auto j = report_json(r);
  EXPECT_FALSE(j["explainers"][0]["queries"][5]["ok"].get<bool>());
  EXPECT_NE(report_table(r).find("(1 failed)"), std::string::npos);
}

TEST(RunSuite, ConfigValidated) {
  auto s = make_setup();
  EvalConfig c = suite_config(s);
  c.top_n = 0;
  EXPECT_THROW(run_suite(s.model, s.g, three(), c), ConfigError);
  c = suite_config(s);
  c.perturb_fraction = 1.5;
  EXPECT_THROW(run_suite(s.model, s.g, three(), c), ConfigError);
  EXPECT_THROW(run_suite(s.model, s.g, {}, suite_config(s)), ConfigError);
  EXPECT_THROW(make_explainer("lime"), ConfigError);
}

TEST(Report, JsonAndTableShape) {
  auto s = make_setup();
  EvalConfig c = suite_config(s);
  c.dataset = "toy";
  const auto r = run_suite(s.model, s.g, three(), c);
  const auto j = report_json(r);
  ASSERT_EQ(j["explainers"].size(), 3u);
  for (const auto& e : j["explainers"]) {
    EXPECT_EQ(e["queries"].size(), 5u);
    EXPECT_FALSE(e.contains("seconds"));
    EXPECT_FALSE(e.contains("time_ratio"));
  }
  EXPECT_TRUE(j["timing"].contains("perturbation"));
  const std::string table = report_table(r);
  std::istringstream lines(table);
  std::vector<std::string> rows;
  for (std::string l; std::getline(lines, l);) rows.push_back(l);
  ASSERT_EQ(rows.size(), 5u);  // header, rule, three explainers
  for (const char* col : {"Fidelity (toy)", "Stability (toy)", "Time Cost (toy)"}) {
    EXPECT_NE(rows[0].find(col), std::string::npos) << col;
  }
  EXPECT_EQ(rows[2].rfind("gradxkg", 0), 0u);
}

// ---- checkpoint -----------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  auto s = make_setup();
  s.model.basis_mode = BasisMode::factored;
  std::stringstream buf;
  save_checkpoint(buf, s.model);
  const Model back = load_checkpoint(buf);
  EXPECT_EQ(back.window, s.model.window);
  EXPECT_EQ(back.basis_mode, BasisMode::factored);
  EXPECT_EQ(back.num_nodes(), s.model.num_nodes());
  std::vector<Tensor> a, b;
  s.model.for_each_parameter([&](const std::string&, const Tensor& t) { a.push_back(t); });
  back.for_each_parameter([&](const std::string&, const Tensor& t) { b.push_back(t); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].data(), b[i].data());
  EXPECT_EQ(score_query(back, s.g, s.q).value(), score_query(s.model, s.g, s.q).value());
}

TEST(Checkpoint, CorruptionDetected) {
  auto s = make_setup();
  std::stringstream buf;
  save_checkpoint(buf, s.model);
  const std::string good = buf.str();
  const auto load = [](std::string bytes) {
    std::istringstream in(bytes);
    return load_checkpoint(in);
  };
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(load(bad), DataError);
  bad = good;
  bad[8] = 7;  // version
  EXPECT_THROW(load(bad), DataError);
  EXPECT_THROW(load(good.substr(0, good.size() - 3)), DataError);
  EXPECT_THROW(load(good.substr(0, 30)), DataError);
  bad = good;
  const double nan = std::nan("");
  std::memcpy(bad.data() + bad.size() - sizeof(double), &nan, sizeof(double));
  EXPECT_THROW(load(bad), DataError);
  EXPECT_THROW(load_checkpoint(std::filesystem::path("/nonexistent/ckpt")), DataError);
}

// ---- export ---------------------------------------------------------------------------

TEST(Export, JsonHasRankedTopN) {
  auto s = make_setup();
  ExplainOptions o;
  o.ig_samples = 4;
  const Saliency sal = explain(s.model, s.g, s.q, o);
  const auto j = saliency_json(sal, s.g, 5);
  ASSERT_EQ(j["entries"].size(), 5u);
  const auto top = sal.top(5);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(j["entries"][i]["rank"].get<std::size_t>(), i + 1);
    EXPECT_EQ(j["entries"][i]["node_id"].get<std::size_t>(), top[i].key.node);
    EXPECT_EQ(j["entries"][i]["timestep"].get<std::size_t>(), top[i].key.timestep);
    EXPECT_EQ(j["entries"][i]["score"].get<double>(), top[i].score);
  }
  EXPECT_EQ(j["mode"], "signed");
  EXPECT_EQ(j["ig_samples"], 4);
  const Saliency back = saliency_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back, sal);
}

TEST(Export, MalformedJsonRejected) {
  EXPECT_THROW(saliency_from_json(nlohmann::json{{"method", "x"}}), DataError);
  auto s = make_setup();
  auto j = saliency_json(manual_saliency(s.q, {2}, 10, {}), s.g, 1);
  j["mode"] = "sideways";
  EXPECT_THROW(saliency_from_json(j), DataError);
}

TEST(Export, DotClustersShadesAndDoubleCircles) {
  auto s = make_setup();
  const auto sal = manual_saliency(s.q, {2, 3, 4}, 10, {{{1, 4}, 4.0}, {{2, 3}, 2.0}, {{7, 2}, -4.0}});
  const std::string dot = saliency_dot(sal, s.g, 2);
  const auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = dot.find(needle); pos != std::string::npos; pos = dot.find(needle, pos + 1)) ++n;
    return n;
  };
  EXPECT_EQ(dot.rfind("digraph", 0), 0u);
  EXPECT_EQ(count("subgraph cluster_t"), 3u);
  EXPECT_EQ(count("doublecircle"), 2u);
  EXPECT_NE(dot.find("n1_t4 [label=\"1\", fillcolor=\"#ff0000\""), std::string::npos) << "max is saturated";
  EXPECT_NE(dot.find("n7_t2 [label=\"7\", fillcolor=\"#ffffff\""), std::string::npos) << "min is white";
  EXPECT_NE(dot.find("n0_t2 [label=\"0\", fillcolor=\"#ff8080\""), std::string::npos) << "0 sits midway";
  std::size_t edges = 0;
  for (std::size_t t = 2; t < 5; ++t) edges += s.g.snapshots[t].edges.size();
  EXPECT_EQ(count(" -> "), edges);
}
