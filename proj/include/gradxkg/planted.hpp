#pragma once

// The planted-rule benchmark: a training graph plus held-out graphs drawn
// from the same generator with independent seeds, and the planted
// consequences of the held-out graphs as queries with known causes.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gradxkg/model.hpp"
#include "gradxkg/rng.hpp"
#include "gradxkg/synth.hpp"

namespace gradxkg {

struct PlantedBenchmarkConfig {
  SynthConfig synth{30, 4, 12, 0.001, {PlantedRule{0, 1, 2}}, 30};
  std::size_t heldout_graphs = 4;
  // A longer training graph with the same chain rate per timestep; on a
  // single 12-step graph the model memorises node identities instead of the rule.
  std::size_t training_timesteps = 96;
  std::size_t training_chains = 240;
  RGCNConfig rgcn{2, 8, 8, 2, Activation::relu, true};
  TrainConfig train{200, 0.1, 4, 3, 0};
};

struct PlantedCase {
  Query query;
  std::vector<NodeTime> causes;
  std::size_t graph = 0;  // index into PlantedBenchmark::heldout
};

struct PlantedBenchmark {
  SynthResult training;
  std::vector<SynthResult> heldout;
  std::vector<PlantedCase> cases;
};

// Planted consequences whose history window fits inside the graph.
inline std::vector<PlantedCase> planted_cases(const std::vector<SynthResult>& graphs, std::size_t window) {
  std::vector<PlantedCase> out;
  for (std::size_t i = 0; i < graphs.size(); ++i)
    for (const auto& inst : graphs[i].instances)
      if (inst.planted && inst.consequence.timestamp >= window) out.push_back({inst.consequence, inst.causes, i});
  return out;
}

inline PlantedBenchmark make_planted_benchmark(const PlantedBenchmarkConfig& cfg, std::uint64_t seed) {
  PlantedBenchmark b;
  SynthConfig tc = cfg.synth;
  tc.num_timesteps = cfg.training_timesteps;
  tc.chains = cfg.training_chains;
  b.training = synth_generate(tc, derive_seed(seed, "planted/train"));
  for (std::size_t i = 0; i < cfg.heldout_graphs; ++i)
    b.heldout.push_back(synth_generate(cfg.synth, derive_seed(seed, "planted/heldout", i)));
  b.cases = planted_cases(b.heldout, cfg.train.window);
  return b;
}

inline Model train_planted_model(const PlantedBenchmark& b, const PlantedBenchmarkConfig& cfg, std::uint64_t seed) {
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(seed, "planted/model");
  return train(b.training.graph, cfg.rgcn, tc).model;
}

}  // namespace gradxkg
