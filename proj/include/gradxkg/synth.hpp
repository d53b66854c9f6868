#pragma once

// Planted-rule synthetic temporal KGs. Background edges are Bernoulli(density)
// over every (s, r, o, t) with s != o. Each rule (r1, r2 -> r3) closes
// (a, r1, b, t) + (b, r2, c, t+1) into (a, r3, c, t+2); planted chains seed
// the premises, and the closure is also applied to premises that arise from
// the background. Every consequence is reported with its cause nodes.

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "gradxkg/errors.hpp"
#include "gradxkg/rng.hpp"
#include "gradxkg/tkg.hpp"

namespace gradxkg {

struct PlantedRule {
  RelationId first = 0;
  RelationId second = 1;
  RelationId consequence = 2;
};

struct SynthConfig {
  std::size_t num_nodes = 30;
  std::size_t num_relations = 4;
  std::size_t num_timesteps = 12;
  double density = 0.0;
  std::vector<PlantedRule> rules{PlantedRule{}};
  std::size_t chains = 20;
};

// One derived consequence and the evidence that produced it.
struct RuleInstance {
  Quadruple consequence;
  std::vector<NodeTime> causes;  // a@t, b@t, b@t+1, c@t+1
  bool planted = false;
};

struct SynthResult {
  TemporalKG graph;
  std::vector<RuleInstance> instances;
};

inline void validate(const SynthConfig& c) {
  if (c.num_nodes < 4) throw ConfigError("synth: need at least 4 nodes");
  if (c.num_relations < 2) throw ConfigError("synth: need at least 2 relations");
  if (c.num_timesteps < 3) throw ConfigError("synth: need at least 3 timesteps");
  if (!(c.density >= 0.0 && c.density <= 1.0)) throw ConfigError("synth: density must lie in [0,1]");
  if (c.chains > 0 && c.rules.empty()) throw ConfigError("synth: chains requested without rules");
  for (const auto& r : c.rules) {
    if (r.first >= c.num_relations || r.second >= c.num_relations || r.consequence >= c.num_relations) {
      throw ConfigError("synth: rule relation out of range");
    }
  }
}

inline SynthResult synth_generate(const SynthConfig& config, std::uint64_t seed) {
  validate(config);
  const std::size_t n = config.num_nodes, rel = config.num_relations, steps = config.num_timesteps;
  std::vector<std::set<Edge>> edges(steps);

  Rng background = make_rng(seed, "synth/background");
  if (config.density > 0.0) {
    for (std::size_t t = 0; t < steps; ++t)
      for (EntityId s = 0; s < n; ++s)
        for (RelationId r = 0; r < rel; ++r)
          for (EntityId o = 0; o < n; ++o)
            if (s != o && uniform01(background) < config.density) edges[t].insert({s, r, o});
  }

  Rng chains = make_rng(seed, "synth/chains");
  std::set<Quadruple> planted;
  for (std::size_t i = 0; i < config.chains; ++i) {
    const auto& rule = config.rules[uniform_index(chains, config.rules.size())];
    const std::size_t t = uniform_index(chains, steps - 2);
    const EntityId a = uniform_index(chains, n);
    EntityId b, c;
    do b = uniform_index(chains, n); while (b == a);
    do c = uniform_index(chains, n); while (c == a || c == b);
    edges[t].insert({a, rule.first, b});
    edges[t + 1].insert({b, rule.second, c});
    planted.insert({a, rule.consequence, c, t + 2});
  }

  // Closure over the premises present before any consequence is added.
  SynthResult result;
  std::set<Quadruple> consequences;
  const auto premises = edges;
  for (std::size_t t = 0; t + 2 < steps; ++t) {
    for (const auto& rule : config.rules) {
      for (const auto& e1 : premises[t]) {
        if (e1.relation != rule.first) continue;
        auto it = premises[t + 1].lower_bound(Edge{e1.object, 0, 0});
        for (; it != premises[t + 1].end() && it->subject == e1.object; ++it) {
          if (it->relation != rule.second || it->object == e1.subject) continue;
          const Quadruple q{e1.subject, rule.consequence, it->object, t + 2};
          if (!consequences.insert(q).second) continue;
          edges[t + 2].insert({q.subject, q.relation, q.object});
          result.instances.push_back(RuleInstance{
              q, {{e1.subject, t}, {e1.object, t}, {e1.object, t + 1}, {it->object, t + 1}}, planted.count(q) > 0});
        }
      }
    }
  }

  result.graph = TemporalKG::empty(n, rel, steps);
  for (std::size_t t = 0; t < steps; ++t) {
    result.graph.snapshots[t].edges.assign(edges[t].begin(), edges[t].end());
  }
  return result;
}

}  // namespace gradxkg
