#include <gtest/gtest.h>

#include <algorithm>

#include "gradxkg/eval.hpp"
#include "gradxkg/explain.hpp"
#include "gradxkg/planted.hpp"

using namespace gradxkg;

namespace {

struct Trained {
  PlantedBenchmarkConfig cfg;
  PlantedBenchmark bench;
  Model model;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    out.bench = make_planted_benchmark(out.cfg, 1);
    out.model = train_planted_model(out.bench, out.cfg, 1);
    return out;
  }();
  return t;
}

double cause_recall(const Explainer& ex, std::size_t top_n) {
  const auto& t = trained();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < t.bench.cases.size(); ++i) {
    const auto& c = t.bench.cases[i];
    const auto top = ex.run(t.model, t.bench.heldout[c.graph].graph, c.query, derive_seed(1, "test/recall", i)).top_set(top_n);
    hits += std::any_of(c.causes.begin(), c.causes.end(), [&](const NodeTime& k) { return top.count(k) > 0; });
  }
  return double(hits) / double(t.bench.cases.size());
}

}  // namespace

TEST(Planted, BenchmarkHasEnoughHeldOutCases) {
  const auto& t = trained();
  EXPECT_GE(t.bench.cases.size(), 100u);
  for (const auto& c : t.bench.cases) {
    EXPECT_EQ(c.causes.size(), 4u);
    EXPECT_GE(c.query.timestamp, t.cfg.train.window);
  }
}

TEST(Planted, TrainedModelRanksConsequencesAboveCorruptions) {
  const auto& t = trained();
  const Model untrained = init_model(t.cfg.rgcn, t.cfg.synth.num_nodes, t.cfg.synth.num_relations, t.cfg.train.window,
                                     derive_seed(1, "planted/model"));
  Rng rng = make_rng(1, "test/negatives");
  std::size_t wins = 0;
  double gap = 0.0, gap_untrained = 0.0;
  for (const auto& c : t.bench.cases) {
    const auto& g = t.bench.heldout[c.graph].graph;
    Query neg = c.query;
    do neg.object = uniform_index(rng, g.num_entities());
    while (neg.object == c.query.object || neg.object == c.query.subject);
    const double st = score_query(t.model, g, c.query).value(), sn = score_query(t.model, g, neg).value();
    wins += st > sn;
    gap += st - sn;
    gap_untrained += score_query(untrained, g, c.query).value() - score_query(untrained, g, neg).value();
  }
  const double n = double(t.bench.cases.size());
  EXPECT_GE(wins / n, 0.90);
  EXPECT_GT(gap / n, std::abs(gap_untrained / n));
}

TEST(Planted, GradxkgRecoversPlantedCauses) {
  ExplainOptions opt;
  EXPECT_GE(cause_recall(make_explainer("gradxkg", opt), 5), 0.60);
  EXPECT_LE(cause_recall(make_explainer("random", opt), 5), 0.25);
}
