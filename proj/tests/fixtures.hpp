#pragma once

// Shared builders for the test binaries.

#include <cstdint>
#include <vector>

#include "gradxkg/model.hpp"
#include "gradxkg/rng.hpp"
#include "gradxkg/synth.hpp"
#include "gradxkg/tkg.hpp"

namespace fixtures {

using namespace gradxkg;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Background-only random TKG.
inline TemporalKG random_graph(std::size_t nodes, std::size_t relations, std::size_t steps, double density,
                               std::uint64_t seed) {
  SynthConfig c;
  c.num_nodes = std::max<std::size_t>(nodes, 4);
  c.num_relations = std::max<std::size_t>(relations, 2);
  c.num_timesteps = std::max<std::size_t>(steps, 3);
  c.density = density;
  c.chains = 0;
  c.rules.clear();
  TemporalKG g = synth_generate(c, seed).graph;
  if (c.num_nodes == nodes && c.num_relations == relations && c.num_timesteps == steps) return g;
  // shrink to the requested sizes
  TemporalKG out = TemporalKG::empty(nodes, relations, steps);
  for (std::size_t t = 0; t < steps; ++t)
    for (const auto& e : g.snapshots[t].edges)
      if (e.subject < nodes && e.object < nodes && e.relation < relations) out.snapshots[t].edges.push_back(e);
  return out;
}

inline RGCNConfig small_config(std::size_t layers = 2, std::size_t dim = 4, Activation act = Activation::sigmoid) {
  RGCNConfig c;
  c.layers = layers;
  c.input_dim = dim;
  c.hidden_dim = dim;
  c.bases = 2;
  c.activation = act;
  return c;
}

// Randomly initialised model with non-zero scorer weights and biases.
inline Model random_model(const RGCNConfig& config, std::size_t nodes, std::size_t relations, std::size_t window,
                          std::uint64_t seed) {
  Model m = init_model(config, nodes, relations, window, seed);
  Rng rng = make_rng(seed, "fixtures/top");
  m.top.for_each([&](const char*, Tensor& t) {
    for (auto& v : t.data()) v = uniform(rng, -1.0, 1.0);
  });
  return m;
}

}  // namespace fixtures
