#pragma once

// Node-level explanations of a scored query.
//
//   * rgcn_node_importance: Grad-CAM over the relation-specific feature maps
//     of an RGCN trace, averaged over layers and relations.
//   * integrated_gradients: path attribution of the top layer with respect to
//     the snapshot encodings (right Riemann sum with p samples).
//   * explain: the two stages chained, score(n, t) = IG_t(n) * I_t(n).
//   * perturbation_explain / random_explain: reference baselines.
//   * gcn_grad_cam_reference: plain GCN Grad-CAM, the oracle the RGCN variant
//     reduces to on single-relation graphs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gradxkg/autodiff.hpp"
#include "gradxkg/errors.hpp"
#include "gradxkg/model.hpp"
#include "gradxkg/rgcn.hpp"
#include "gradxkg/rng.hpp"
#include "gradxkg/tkg.hpp"

namespace gradxkg {

// signed: ReLU applied to per-(layer, relation) importances and to the final
// product; unsigned: raw values, may be negative.
enum class SaliencyMode { signed_scores, unsigned_scores };

inline const char* to_string(SaliencyMode m) { return m == SaliencyMode::signed_scores ? "signed" : "unsigned"; }

inline SaliencyMode parse_saliency_mode(const std::string& s) {
  if (s == "signed") return SaliencyMode::signed_scores;
  if (s == "unsigned") return SaliencyMode::unsigned_scores;
  throw ConfigError("unknown saliency mode: " + s);
}

// Candidate order used for ties and storage: timestep first, then node.
inline bool time_major_less(const NodeTime& a, const NodeTime& b) {
  return a.timestep != b.timestep ? a.timestep < b.timestep : a.node < b.node;
}

struct ScoredNode {
  NodeTime key;
  double score = 0.0;

  bool operator==(const ScoredNode&) const = default;
};

// Importance of every (node, timestep) candidate in a query's history window.
struct Saliency {
  std::string method;
  SaliencyMode mode = SaliencyMode::signed_scores;
  Query query;
  std::size_t ig_samples = 0;
  std::vector<std::size_t> timesteps;  // window, oldest first
  std::vector<ScoredNode> entries;     // ordered by (timestep, node)

  // Highest scores first; ties by (timestep asc, node asc).
  std::vector<ScoredNode> top(std::size_t n) const {
    std::vector<ScoredNode> sorted = entries;
    std::stable_sort(sorted.begin(), sorted.end(), [](const ScoredNode& a, const ScoredNode& b) {
      if (a.score != b.score) return a.score > b.score;
      return time_major_less(a.key, b.key);
    });
    sorted.resize(std::min(n, sorted.size()));
    return sorted;
  }

  std::set<NodeTime> top_set(std::size_t n) const {
    std::set<NodeTime> out;
    for (const auto& e : top(n)) out.insert(e.key);
    return out;
  }

  double score(const NodeTime& key) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), key,
                               [](const ScoredNode& e, const NodeTime& k) { return time_major_less(e.key, k); });
    if (it == entries.end() || it->key != key) throw DimensionError("node/timestep not in saliency");
    return it->score;
  }

  bool operator==(const Saliency&) const = default;
};

// ---- Grad-CAM over RGCN traces -------------------------------------------------------

// alpha_{k,r}^l = (1/N) sum_n d s / d H^l_{n,k,r}, returned as a 1 x d row.
// `layer` indexes trace.layers (0 = first layer output).
inline Tensor grad_cam_weights(const EncodeTrace& trace, const Tape& tape, std::size_t layer, RelationId r) {
  if (layer >= trace.layers.size()) throw DimensionError("grad_cam_weights: layer out of range");
  const auto& lt = trace.layers[layer];
  if (r >= lt.relation_maps.size()) throw DimensionError("grad_cam_weights: relation out of range");
  if (!tape.backward_done()) throw std::logic_error("grad_cam_weights: run backward first");
  const Tensor g = tape.grad(lt.relation_maps[r]);  // throws when the map is not on this tape
  const std::size_t n = g.rows(), d = g.cols();
  Tensor alpha({1, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) alpha[k] += g.at(i, k);
  for (auto& v : alpha.data()) v /= static_cast<double>(n);
  return alpha;
}

// I_n = (1/R) sum_r (1/L) sum_l act(sum_k alpha_{k,r}^l H^l_{n,k,r}),
// act = ReLU in signed mode, identity in unsigned mode.
inline std::vector<double> rgcn_node_importance(const EncodeTrace& trace, const Tape& tape, SaliencyMode mode) {
  const std::size_t n = trace.num_nodes, num_rel = trace.num_relations, num_layers = trace.layers.size();
  std::vector<double> importance(n, 0.0);
  if (num_rel == 0 || num_layers == 0) return importance;
  for (std::size_t l = 0; l < num_layers; ++l) {
    for (RelationId r = 0; r < num_rel; ++r) {
      const Tensor alpha = grad_cam_weights(trace, tape, l, r);
      const Tensor& map = trace.layers[l].relation_maps[r].value();
      for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        for (std::size_t k = 0; k < map.cols(); ++k) v += alpha[k] * map.at(i, k);
        if (mode == SaliencyMode::signed_scores) v = std::max(v, 0.0);
        importance[i] += v;
      }
    }
  }
  const double norm = 1.0 / static_cast<double>(num_rel * num_layers);
  for (auto& v : importance) v *= norm;
  return importance;
}

// ---- GCN Grad-CAM reference ----------------------------------------------------------

// D^-1/2 (A + I) D^-1/2 for a symmetric 0/1 adjacency A.
inline Tensor gcn_normalized_adjacency(const Tensor& adjacency) {
  const std::size_t n = adjacency.rows();
  if (adjacency.shape() != Shape{n, n}) throw DimensionError("gcn adjacency must be square");
  Tensor a = adjacency;
  for (std::size_t i = 0; i < n; ++i) a.at(i, i) += 1.0;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a.at(i, j);
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) *= inv_sqrt[i] * inv_sqrt[j];
  return a;
}

struct GCNTrace {
  std::vector<Var> feature_maps;  // M^1..M^L
};

// M^l = act(Â M^{l-1} W^l) with M^0 = x.
inline GCNTrace gcn_forward(Tape& tape, Var x, const Tensor& normalized_adjacency, std::span<const Var> weights,
                            Activation activation) {
  GCNTrace tr;
  Var a = tape.constant(normalized_adjacency);
  Var m = x;
  for (Var w : weights) {
    m = activate(matmul(matmul(a, m), w), activation);
    tr.feature_maps.push_back(m);
  }
  return tr;
}

// I_n = (1/L) sum_l act(sum_k alpha_k^l M^l_{n,k}), alpha_k^l = (1/N) sum_n dy/dM^l_{n,k}.
inline std::vector<double> gcn_grad_cam_reference(const GCNTrace& trace, const Tape& tape, SaliencyMode mode) {
  if (trace.feature_maps.empty()) return {};
  const std::size_t n = trace.feature_maps.front().shape()[0];
  std::vector<double> importance(n, 0.0);
  for (Var m : trace.feature_maps) {
    const Tensor g = tape.grad(m);
    const Tensor& v = m.value();
    if (g.rows() != n || v.rows() != n) throw DimensionError("gcn_grad_cam_reference: node count changes across layers");
    std::vector<double> alpha(v.cols(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < v.cols(); ++k) alpha[k] += g.at(i, k) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < v.cols(); ++k) s += alpha[k] * v.at(i, k);
      importance[i] += mode == SaliencyMode::signed_scores ? std::max(s, 0.0) : s;
    }
  }
  for (auto& v : importance) v /= static_cast<double>(trace.feature_maps.size());
  return importance;
}

// ---- integrated gradients --------------------------------------------------------------

enum class BaselineKind { zeros, random };

inline const char* to_string(BaselineKind b) { return b == BaselineKind::zeros ? "zeros" : "random"; }

inline BaselineKind parse_baseline(const std::string& s) {
  if (s == "zeros") return BaselineKind::zeros;
  if (s == "random") return BaselineKind::random;
  throw ConfigError("unknown IG baseline: " + s);
}

// Score and input gradients of a function of several tensors.
using SliceFn = std::function<SliceResult(std::span<const Tensor>)>;

// Wraps a taped scalar function of several inputs as a SliceFn.
inline SliceFn taped_slice(std::function<Var(Tape&, std::span<const Var>)> f) {
  return [f = std::move(f)](std::span<const Tensor> inputs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    Var s = f(tape, vars);
    tape.backward(s);
    SliceResult r{s.value().item(), {}};
    for (Var v : vars) r.gradients.push_back(tape.grad(v));
    return r;
  };
}

struct IGAttribution {
  std::vector<Tensor> attributions;              // same shapes as the inputs
  std::vector<std::vector<double>> node_scores;  // row sums per input
  BaselineKind baseline = BaselineKind::zeros;
  std::size_t samples = 0;

  double total() const {
    double acc = 0.0;
    for (const auto& a : attributions)
      for (double v : a.data()) acc += v;
    return acc;
  }
};

// IG(x) ~= (x - x') * (1/p) sum_{k=1..p} grad f(x' + (k/p)(x - x')), all
// inputs interpolated jointly. Calls `slice` exactly p times.
inline IGAttribution integrated_gradients(const SliceFn& slice, std::span<const Tensor> inputs,
                                          std::span<const Tensor> baselines, std::size_t p,
                                          BaselineKind kind = BaselineKind::zeros) {
  if (p < 1) throw ConfigError("integrated_gradients: need at least one sample");
  if (inputs.size() != baselines.size()) throw DimensionError("integrated_gradients: one baseline per input");
  for (std::size_t i = 0; i < inputs.size(); ++i) kernels::require_same_shape(inputs[i], baselines[i], "integrated_gradients");

  std::vector<Tensor> accumulated;
  for (const auto& x : inputs) accumulated.emplace_back(x.shape());
  std::vector<Tensor> point(inputs.begin(), inputs.end());
  for (std::size_t k = 1; k <= p; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(p);
    for (std::size_t i = 0; i < inputs.size(); ++i)
      for (std::size_t j = 0; j < inputs[i].size(); ++j)
        point[i][j] = baselines[i][j] + alpha * (inputs[i][j] - baselines[i][j]);
    const SliceResult r = slice(point);
    if (r.gradients.size() != inputs.size()) throw DimensionError("integrated_gradients: slice returned wrong gradient count");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!r.gradients[i].all_finite()) throw NumericError("integrated_gradients: non-finite gradient");
      kernels::add_into(accumulated[i], r.gradients[i]);
    }
  }

  IGAttribution out;
  out.baseline = kind;
  out.samples = p;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor a(inputs[i].shape());
    for (std::size_t j = 0; j < a.size(); ++j)
      a[j] = (inputs[i][j] - baselines[i][j]) * accumulated[i][j] / static_cast<double>(p);
    std::vector<double> rows(a.rows(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t c = 0; c < a.cols(); ++c) rows[r] += a.at(r, c);
    out.node_scores.push_back(std::move(rows));
    out.attributions.push_back(std::move(a));
  }
  return out;
}

// Entries drawn from U[-m, m], m = max |x|.
inline Tensor random_baseline(const Tensor& x, Rng& rng) {
  double m = 0.0;
  for (double v : x.data()) m = std::max(m, std::abs(v));
  Tensor b(x.shape());
  for (auto& v : b.data()) v = uniform(rng, -m, m);
  return b;
}

// ---- chained explanation ----------------------------------------------------------------

struct ExplainOptions {
  std::size_t ig_samples = 64;
  SaliencyMode mode = SaliencyMode::signed_scores;
  BaselineKind baseline = BaselineKind::zeros;
  std::uint64_t seed = 0;                 // random baseline only
  bool normalize_per_timestep = false;    // divide each timestep by its max |score|
  std::optional<std::size_t> window;      // defaults to the model's window
};

namespace detail {
inline void normalize_by_timestep(Saliency& s) {
  for (std::size_t t : s.timesteps) {
    double m = 0.0;
    for (const auto& e : s.entries)
      if (e.key.timestep == t) m = std::max(m, std::abs(e.score));
    if (m == 0.0) continue;
    for (auto& e : s.entries)
      if (e.key.timestep == t) e.score /= m;
  }
}
}  // namespace detail

// One scored forward + backward for the Grad-CAM stage and p top-layer
// forward/backward pairs for IG: forward_count and backward_count each grow
// by exactly 1 + p.
inline Saliency explain(const Model& model, const TemporalKG& g, const Query& query, const ExplainOptions& opt = {}) {
  ScoreSession session = score_query(model, g, query, opt.window);
  backward(model, session);

  std::vector<std::vector<double>> cam;
  std::vector<Tensor> inputs, baselines;
  Rng rng = make_rng(opt.seed, "explain/ig-baseline");
  for (const auto& enc : session.encodings) {
    cam.push_back(rgcn_node_importance(enc.trace, *session.tape, opt.mode));
    inputs.push_back(enc.output.value());
    baselines.push_back(opt.baseline == BaselineKind::zeros ? Tensor(inputs.back().shape())
                                                            : random_baseline(inputs.back(), rng));
  }
  const QueryContext& ctx = session.context;
  const SliceFn slice = [&](std::span<const Tensor> enc) { return evaluate_slice(model, enc, ctx, true); };
  const IGAttribution ig = integrated_gradients(slice, inputs, baselines, opt.ig_samples, opt.baseline);

  Saliency s;
  s.method = "gradxkg";
  s.mode = opt.mode;
  s.query = query;
  s.ig_samples = opt.ig_samples;
  s.timesteps = session.timesteps;
  for (std::size_t i = 0; i < session.timesteps.size(); ++i) {
    for (EntityId n = 0; n < model.num_nodes(); ++n) {
      double v = ig.node_scores[i][n] * cam[i][n];
      if (opt.mode == SaliencyMode::signed_scores) v = std::max(v, 0.0);
      s.entries.push_back({{n, session.timesteps[i]}, v});
    }
  }
  if (opt.normalize_per_timestep) detail::normalize_by_timestep(s);
  return s;
}

// importance(n, t) = s(G) - s(G with n's edges removed at t). Exactly
// N * w + 1 forward evaluations.
inline Saliency perturbation_explain(const Model& model, const TemporalKG& g, const Query& query,
                                     std::optional<std::size_t> window = std::nullopt) {
  const Window base_window = history_window(g, query, window.value_or(model.window));
  const double base = score_window(model, base_window, query).value();
  Saliency s;
  s.method = "perturbation";
  s.mode = SaliencyMode::unsigned_scores;
  s.query = query;
  for (const Snapshot* snap : base_window) s.timesteps.push_back(snap->timestamp);
  for (std::size_t i = 0; i < base_window.size(); ++i) {
    for (EntityId n = 0; n < model.num_nodes(); ++n) {
      const Snapshot edited = remove_node(*base_window[i], n);
      Window w = base_window;
      w[i] = &edited;
      s.entries.push_back({{n, base_window[i]->timestamp}, base - score_window(model, w, query).value()});
    }
  }
  return s;
}

// Uniform scores in [0, 1) per candidate from the seeded generator.
inline Saliency random_explain(const TemporalKG& g, const Query& query, std::size_t window, std::uint64_t seed) {
  const Window w = history_window(g, query, window);
  Rng rng = make_rng(seed, "explain/random");
  Saliency s;
  s.method = "random";
  s.mode = SaliencyMode::signed_scores;
  s.query = query;
  for (const Snapshot* snap : w) {
    s.timesteps.push_back(snap->timestamp);
    for (EntityId n = 0; n < g.num_entities(); ++n) s.entries.push_back({{n, snap->timestamp}, uniform01(rng)});
  }
  return s;
}

}  // namespace gradxkg
