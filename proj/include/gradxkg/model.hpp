#pragma once

// Reference temporal reasoner on top of the RGCN encoder.
//
// For a query (s, r, o, t) the encoder runs on the `window` snapshots before t.
// Each encoding is pooled over the subject's 2-hop neighbourhood in that
// snapshot (global mean when the neighbourhood is empty) and a gated
// recurrence folds the pooled states into a history context c. With h_s, h_o
// the subject/object rows of the newest encoding and e_r the relation
// embedding, the logit is
//
//   w_s.h_s + w_r.e_r + w_o.h_o + w_c.c
//     + w_so.(h_s*h_o) + w_ro.(e_r*h_o) + w_co.(c*h_o) + b
//
// and the score is sigmoid(logit).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gradxkg/autodiff.hpp"
#include "gradxkg/errors.hpp"
#include "gradxkg/rgcn.hpp"
#include "gradxkg/rng.hpp"
#include "gradxkg/tkg.hpp"

namespace gradxkg {

struct TopLayerParams {
  Tensor gate_input, gate_hidden, gate_bias;  // d x d, d x d, 1 x d
  Tensor cand_input, cand_hidden, cand_bias;
  Tensor relation_embeddings;                 // R x d
  Tensor w_subject, w_relation, w_object, w_context;  // d x 1
  Tensor w_subject_object, w_relation_object, w_context_object;
  Tensor bias;  // 1 x 1

  template <typename F>
  void for_each(F&& f) {
    f("top.gate_input", gate_input);
    f("top.gate_hidden", gate_hidden);
    f("top.gate_bias", gate_bias);
    f("top.cand_input", cand_input);
    f("top.cand_hidden", cand_hidden);
    f("top.cand_bias", cand_bias);
    f("top.relation_embeddings", relation_embeddings);
    f("top.w_subject", w_subject);
    f("top.w_relation", w_relation);
    f("top.w_object", w_object);
    f("top.w_context", w_context);
    f("top.w_subject_object", w_subject_object);
    f("top.w_relation_object", w_relation_object);
    f("top.w_context_object", w_context_object);
    f("top.bias", bias);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<TopLayerParams*>(this)->for_each([&](const char* name, Tensor& t) { f(name, std::as_const(t)); });
  }

  // Zeroes every scorer weight and the bias, so the score is exactly 0.5.
  void zero_scorer() {
    for (Tensor* t : {&w_subject, &w_relation, &w_object, &w_context, &w_subject_object, &w_relation_object,
                      &w_context_object, &bias}) {
      std::fill(t->data().begin(), t->data().end(), 0.0);
    }
  }
};

inline TopLayerParams init_top_layer(std::size_t hidden, std::size_t num_relations, std::uint64_t seed) {
  Rng rng = make_rng(seed, "top/init");
  const double bound = 1.0 / std::sqrt(double(hidden));
  TopLayerParams p;
  p.gate_input = uniform_tensor({hidden, hidden}, bound, rng);
  p.gate_hidden = uniform_tensor({hidden, hidden}, bound, rng);
  p.gate_bias = Tensor({1, hidden});
  p.cand_input = uniform_tensor({hidden, hidden}, bound, rng);
  p.cand_hidden = uniform_tensor({hidden, hidden}, bound, rng);
  p.cand_bias = Tensor({1, hidden});
  p.relation_embeddings = uniform_tensor({num_relations, hidden}, bound, rng);
  for (Tensor* t : {&p.w_subject, &p.w_relation, &p.w_object, &p.w_context, &p.w_subject_object,
                    &p.w_relation_object, &p.w_context_object}) {
    *t = uniform_tensor({hidden, 1}, bound, rng);
  }
  p.bias = Tensor({1, 1});
  return p;
}

// Monotone counters of model evaluations. Copies carry the current values.
class EvalCounter {
 public:
  struct Counts {
    std::uint64_t forward = 0;
    std::uint64_t backward = 0;

    Counts operator-(const Counts& o) const { return {forward - o.forward, backward - o.backward}; }
    Counts& operator+=(const Counts& o) {
      forward += o.forward;
      backward += o.backward;
      return *this;
    }
    bool operator==(const Counts&) const = default;
  };

  EvalCounter() = default;
  EvalCounter(const EvalCounter& o) : forward_(o.forward_.load()), backward_(o.backward_.load()) {}
  EvalCounter& operator=(const EvalCounter& o) {
    forward_ = o.forward_.load();
    backward_ = o.backward_.load();
    return *this;
  }

  void record_forward(std::uint64_t n = 1) const { forward_.fetch_add(n, std::memory_order_relaxed); }
  void record_backward(std::uint64_t n = 1) const { backward_.fetch_add(n, std::memory_order_relaxed); }
  Counts counts() const { return {forward_.load(), backward_.load()}; }
  void reset() {
    forward_ = 0;
    backward_ = 0;
  }

 private:
  mutable std::atomic<std::uint64_t> forward_{0};
  mutable std::atomic<std::uint64_t> backward_{0};
};

struct Model {
  RGCNConfig rgcn_config;
  RGCNParams rgcn;
  TopLayerParams top;
  std::size_t window = 3;
  BasisMode basis_mode = BasisMode::materialized;
  EvalCounter counter;

  std::size_t num_nodes() const { return rgcn.num_nodes(); }
  std::size_t num_relations() const { return rgcn.num_relations(); }
  std::size_t hidden_dim() const { return rgcn_config.hidden_dim; }

  // Every trainable tensor with its checkpoint name, in a fixed order.
  template <typename F>
  void for_each_parameter(F&& f) {
    f(std::string("rgcn.embeddings"), rgcn.embeddings);
    for (std::size_t l = 0; l < rgcn.layers.size(); ++l) {
      const std::string p = "rgcn.layer" + std::to_string(l) + ".";
      f(p + "bases", rgcn.layers[l].bases);
      f(p + "coefficients", rgcn.layers[l].coefficients);
      f(p + "self_loop", rgcn.layers[l].self_loop);
    }
    top.for_each([&](const char* name, Tensor& t) { f(std::string(name), t); });
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    const_cast<Model*>(this)->for_each_parameter([&](const std::string& n, Tensor& t) { f(n, std::as_const(t)); });
  }
};

inline Model init_model(const RGCNConfig& config, std::size_t num_nodes, std::size_t num_relations,
                        std::size_t window, std::uint64_t seed) {
  if (window < 1) throw ConfigError("history window must be >= 1");
  Model m;
  m.rgcn_config = config;
  m.rgcn = init_rgcn(config, num_nodes, num_relations, seed);
  m.top = init_top_layer(config.hidden_dim, num_relations, seed);
  m.window = window;
  return m;
}

// ---- query context ---------------------------------------------------------------

// Constant selectors the top layer needs for one query over one window.
struct QueryContext {
  Query query;
  std::vector<Tensor> pools;  // per window snapshot, 1 x N averaging weights
  Tensor subject_selector;    // 1 x N one-hot
  Tensor object_selector;     // 1 x N one-hot
  Tensor relation_selector;   // 1 x R one-hot
};

// Nodes within two undirected hops of `center`, excluding `center`.
inline std::vector<EntityId> two_hop_neighbourhood(const Snapshot& snap, EntityId center) {
  std::vector<std::vector<EntityId>> adj(snap.num_nodes);
  for (const auto& e : snap.edges) {
    if (e.subject == e.object) continue;
    adj[e.subject].push_back(e.object);
    adj[e.object].push_back(e.subject);
  }
  std::vector<bool> seen(snap.num_nodes, false);
  seen[center] = true;
  std::vector<EntityId> hop1, out;
  for (EntityId v : adj[center])
    if (!seen[v]) {
      seen[v] = true;
      hop1.push_back(v);
      out.push_back(v);
    }
  for (EntityId u : hop1)
    for (EntityId v : adj[u])
      if (!seen[v]) {
        seen[v] = true;
        out.push_back(v);
      }
  std::sort(out.begin(), out.end());
  return out;
}

inline Tensor pooling_weights(const Snapshot& snap, EntityId subject) {
  const auto hood = two_hop_neighbourhood(snap, subject);
  Tensor w({1, snap.num_nodes});
  if (hood.empty()) {
    std::fill(w.data().begin(), w.data().end(), 1.0 / double(snap.num_nodes));
  } else {
    for (EntityId v : hood) w[v] = 1.0 / double(hood.size());
  }
  return w;
}

inline QueryContext make_context(const Window& window, const Query& q, std::size_t num_nodes,
                                 std::size_t num_relations) {
  QueryContext c;
  c.query = q;
  for (const Snapshot* s : window) c.pools.push_back(pooling_weights(*s, q.subject));
  c.subject_selector = Tensor::one_hot(num_nodes, q.subject);
  c.object_selector = Tensor::one_hot(num_nodes, q.object);
  c.relation_selector = Tensor::one_hot(num_relations, q.relation);
  return c;
}

// ---- taped top layer ---------------------------------------------------------------

struct BoundTopLayer {
  Var gate_input, gate_hidden, gate_bias, cand_input, cand_hidden, cand_bias, relation_embeddings;
  Var w_subject, w_relation, w_object, w_context, w_subject_object, w_relation_object, w_context_object, bias;
};

inline BoundTopLayer bind(Tape& tape, const TopLayerParams& p, bool differentiable = true) {
  const auto leaf = [&](const Tensor& t) { return differentiable ? tape.variable(t) : tape.constant(t); };
  return BoundTopLayer{leaf(p.gate_input),  leaf(p.gate_hidden),       leaf(p.gate_bias),
                       leaf(p.cand_input),  leaf(p.cand_hidden),       leaf(p.cand_bias),
                       leaf(p.relation_embeddings), leaf(p.w_subject), leaf(p.w_relation),
                       leaf(p.w_object),    leaf(p.w_context),         leaf(p.w_subject_object),
                       leaf(p.w_relation_object), leaf(p.w_context_object), leaf(p.bias)};
}

// Gated recurrence over pooled snapshot states; returns the final 1 x d state.
inline Var history_context(Tape& tape, const BoundTopLayer& top, std::span<const Var> encodings,
                           std::span<const Tensor> pools) {
  if (encodings.size() != pools.size() || encodings.empty()) {
    throw DimensionError("history_context: need one pooling vector per encoding");
  }
  const std::size_t d = encodings.front().shape()[1];
  Var h = tape.constant(Tensor({1, d}));
  for (std::size_t i = 0; i < encodings.size(); ++i) {
    Var x = matmul(tape.constant(pools[i]), encodings[i]);
    Var z = sigmoid(add(add(matmul(x, top.gate_input), matmul(h, top.gate_hidden)), top.gate_bias));
    Var c = tanh(add(add(matmul(x, top.cand_input), matmul(h, top.cand_hidden)), top.cand_bias));
    h = add(h, mul(z, sub(c, h)));
  }
  return h;
}

inline Var query_logit(Tape& tape, const BoundTopLayer& top, Var newest_encoding, Var context,
                       const Tensor& subject_selector, const Tensor& object_selector, const Tensor& relation_selector) {
  Var hs = matmul(tape.constant(subject_selector), newest_encoding);
  Var ho = matmul(tape.constant(object_selector), newest_encoding);
  Var er = matmul(tape.constant(relation_selector), top.relation_embeddings);
  Var logit = add(matmul(hs, top.w_subject), matmul(er, top.w_relation));
  logit = add(logit, matmul(ho, top.w_object));
  logit = add(logit, matmul(context, top.w_context));
  logit = add(logit, matmul(mul(hs, ho), top.w_subject_object));
  logit = add(logit, matmul(mul(er, ho), top.w_relation_object));
  logit = add(logit, matmul(mul(context, ho), top.w_context_object));
  return add(logit, top.bias);
}

inline Var top_layer_logit(Tape& tape, const BoundTopLayer& top, std::span<const Var> encodings,
                           const QueryContext& ctx) {
  Var c = history_context(tape, top, encodings, ctx.pools);
  return query_logit(tape, top, encodings.back(), c, ctx.subject_selector, ctx.object_selector, ctx.relation_selector);
}

// ---- scoring -------------------------------------------------------------------------

// Everything recorded while scoring one query; the tape stays alive so the
// caller can run backward and read gradients of any intermediate.
struct ScoreSession {
  std::unique_ptr<Tape> tape;
  BoundRGCN rgcn;
  BoundTopLayer top;
  std::vector<Encoding> encodings;  // oldest first
  std::vector<std::size_t> timesteps;
  QueryContext context;
  Var logit;
  Var score;

  double value() const { return score.value().item(); }

  std::vector<Var> encoding_vars() const {
    std::vector<Var> v;
    for (const auto& e : encodings) v.push_back(e.output);
    return v;
  }
};

// Scores `query` against an explicit history window (which may hold edited
// snapshots). Counts one forward evaluation.
inline ScoreSession score_window(const Model& model, const Window& window, const Query& query) {
  if (window.empty()) throw DimensionError("empty history window");
  ScoreSession s;
  s.tape = std::make_unique<Tape>();
  Tape& tape = *s.tape;
  s.rgcn = bind(tape, model.rgcn);
  s.top = bind(tape, model.top);
  for (const Snapshot* snap : window) {
    s.encodings.push_back(rgcn_encode(tape, *snap, s.rgcn, model.rgcn_config, model.basis_mode));
    s.timesteps.push_back(snap->timestamp);
  }
  s.context = make_context(window, query, model.num_nodes(), model.num_relations());
  const auto enc = s.encoding_vars();
  s.logit = top_layer_logit(tape, s.top, enc, s.context);
  s.score = sigmoid(s.logit);
  model.counter.record_forward();
  return s;
}

inline ScoreSession score_query(const Model& model, const TemporalKG& g, const Query& query,
                                std::optional<std::size_t> window = std::nullopt) {
  return score_window(model, history_window(g, query, window.value_or(model.window)), query);
}

// Runs backward from the score of a session. Counts one backward evaluation.
inline void backward(const Model& model, ScoreSession& session) {
  session.tape->backward(session.score);
  model.counter.record_backward();
}

// Top layer only, with the snapshot encodings supplied as values. Returns the
// score and, when requested, d score / d encoding for every window entry.
// Counts one forward (and one backward when gradients are requested).
struct SliceResult {
  double score = 0.0;
  std::vector<Tensor> gradients;
};

inline SliceResult evaluate_slice(const Model& model, std::span<const Tensor> encodings, const QueryContext& ctx,
                                  bool with_gradients) {
  Tape tape;
  BoundTopLayer top = bind(tape, model.top, false);
  std::vector<Var> enc;
  for (const auto& e : encodings) enc.push_back(with_gradients ? tape.variable(e) : tape.constant(e));
  Var score = sigmoid(top_layer_logit(tape, top, enc, ctx));
  model.counter.record_forward();
  SliceResult r{score.value().item(), {}};
  if (with_gradients) {
    tape.backward(score);
    model.counter.record_backward();
    for (Var v : enc) r.gradients.push_back(tape.grad(v));
  }
  return r;
}

// ---- training ------------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 200;
  double learning_rate = 0.05;
  std::size_t negatives = 4;
  std::size_t window = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
    if (negatives < 1) throw ConfigError("need at least one negative per positive");
    if (window < 1) throw ConfigError("history window must be >= 1");
  }
};

struct TrainResult {
  Model model;
  std::vector<double> loss_curve;  // mean step loss per epoch
};

namespace detail {

inline std::vector<Var> parameter_vars(const BoundRGCN& rgcn, const BoundTopLayer& top) {
  std::vector<Var> v{rgcn.embeddings};
  for (const auto& l : rgcn.layers) {
    v.push_back(l.bases);
    v.push_back(l.coefficients);
    v.push_back(l.self_loop);
  }
  for (Var x : {top.gate_input, top.gate_hidden, top.gate_bias, top.cand_input, top.cand_hidden, top.cand_bias,
                top.relation_embeddings, top.w_subject, top.w_relation, top.w_object, top.w_context,
                top.w_subject_object, top.w_relation_object, top.w_context_object, top.bias}) {
    v.push_back(x);
  }
  return v;
}

// Binary cross-entropy on logits for every positive at `t` plus
// object-corrupted negatives; returns the mean loss.
inline double train_step(Model& model, const TemporalKG& g, std::size_t t, const TrainConfig& cfg, Rng& rng) {
  const Snapshot& target = g.snapshots[t];
  if (target.edges.empty()) return std::numeric_limits<double>::quiet_NaN();
  Tape tape;
  BoundRGCN rgcn = bind(tape, model.rgcn);
  BoundTopLayer top = bind(tape, model.top);
  Window window;
  std::vector<Var> enc;
  for (std::size_t i = t - cfg.window; i < t; ++i) {
    window.push_back(&g.snapshots[i]);
    enc.push_back(rgcn_encode(tape, g.snapshots[i], rgcn, model.rgcn_config, model.basis_mode).output);
  }
  const std::size_t n = model.num_nodes(), num_rel = model.num_relations();
  std::map<EntityId, Var> contexts;
  std::optional<Var> total;
  std::size_t terms = 0;
  const auto add_term = [&](const Edge& e, EntityId object, bool positive) {
    auto it = contexts.find(e.subject);
    if (it == contexts.end()) {
      std::vector<Tensor> pools;
      for (const Snapshot* s : window) pools.push_back(pooling_weights(*s, e.subject));
      it = contexts.emplace(e.subject, history_context(tape, top, enc, pools)).first;
    }
    Var logit = query_logit(tape, top, enc.back(), it->second, Tensor::one_hot(n, e.subject),
                            Tensor::one_hot(n, object), Tensor::one_hot(num_rel, e.relation));
    // softplus(z) - y z
    Var loss = positive ? sub(softplus(logit), logit) : softplus(logit);
    total = total ? add(*total, loss) : loss;
    ++terms;
  };
  for (const Edge& e : target.edges) {
    add_term(e, e.object, true);
    for (std::size_t k = 0; k < cfg.negatives; ++k) {
      EntityId o;
      do o = uniform_index(rng, n); while (o == e.object);
      add_term(e, o, false);
    }
  }
  Var loss = scale(*total, 1.0 / double(terms));
  tape.backward(loss);
  const auto vars = parameter_vars(rgcn, top);
  std::size_t i = 0;
  model.for_each_parameter([&](const std::string&, Tensor& param) {
    const Tensor g_param = tape.grad(vars[i++]);
    for (std::size_t k = 0; k < param.size(); ++k) param[k] -= cfg.learning_rate * g_param[k];
  });
  return loss.value().item();
}

}  // namespace detail

// Plain SGD, one step per history-bearing timestep, timestep order reshuffled
// every epoch. Deterministic for a given seed.
inline TrainResult train(const TemporalKG& g, const RGCNConfig& rgcn_config, const TrainConfig& cfg) {
  cfg.validate();
  if (g.num_timesteps() < cfg.window + 1) {
    throw ConfigError("training needs at least window + 1 snapshots");
  }
  TrainResult result{init_model(rgcn_config, g.num_entities(), g.num_relations(), cfg.window, cfg.seed), {}};
  Rng order_rng = make_rng(cfg.seed, "train/order");
  Rng neg_rng = make_rng(cfg.seed, "train/negatives");
  std::vector<std::size_t> steps(g.num_timesteps() - cfg.window);
  std::iota(steps.begin(), steps.end(), cfg.window);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = steps.size(); i > 1; --i) std::swap(steps[i - 1], steps[uniform_index(order_rng, i)]);
    double acc = 0.0;
    std::size_t count = 0;
    try {
      for (std::size_t t : steps) {
        const double l = detail::train_step(result.model, g, t, cfg, neg_rng);
        if (std::isnan(l) && g.snapshots[t].edges.empty()) continue;
        if (!std::isfinite(l)) throw NumericError("non-finite loss");
        acc += l;
        ++count;
      }
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    result.loss_curve.push_back(count ? acc / double(count) : 0.0);
  }
  return result;
}

// Mean binary cross-entropy of the current model over every positive in
// [window, T) with `negatives` corrupted objects each; no parameter update.
inline double evaluate_loss(const Model& model, const TemporalKG& g, std::size_t negatives, std::uint64_t seed) {
  Rng rng = make_rng(seed, "eval/loss");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t t = model.window; t < g.num_timesteps(); ++t) {
    for (const Edge& e : g.snapshots[t].edges) {
      const Query q{e.subject, e.relation, e.object, t};
      acc -= std::log(score_query(model, g, q).value());
      ++count;
      for (std::size_t k = 0; k < negatives; ++k) {
        EntityId o;
        do o = uniform_index(rng, model.num_nodes()); while (o == e.object);
        acc -= std::log1p(-score_query(model, g, {e.subject, e.relation, o, t}).value());
        ++count;
      }
    }
  }
  return count ? acc / double(count) : 0.0;
}

}  // namespace gradxkg
