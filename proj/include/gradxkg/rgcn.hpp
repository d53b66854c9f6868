#pragma once

// Relational GCN encoder with basis-decomposed relation weights.
//
//   H' = act( sum_r A_r H W_r + H W_0 ),   W_r = sum_b a_rb V_b
//
// Besides the layer output the encoder records, per layer and relation, the
// relation term A_r H W_r and the relation-specific feature map
// act(A_r H W_r + H W_0). The maps are off the forward path; they are taped
// as leaves that share the gradient of the layer output, which is what the
// Grad-CAM weights average.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradxkg/autodiff.hpp"
#include "gradxkg/errors.hpp"
#include "gradxkg/rng.hpp"
#include "gradxkg/tensor.hpp"
#include "gradxkg/tkg.hpp"

namespace gradxkg {

enum class Activation { relu, sigmoid };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "sigmoid"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation: " + s);
}

struct RGCNConfig {
  std::size_t layers = 2;
  std::size_t input_dim = 8;
  std::size_t hidden_dim = 8;
  std::size_t bases = 2;
  Activation activation = Activation::relu;
  bool self_loop = true;

  std::size_t layer_in(std::size_t l) const { return l == 0 ? input_dim : hidden_dim; }

  void validate() const {
    if (layers < 1) throw ConfigError("rgcn: need at least one layer");
    if (bases < 1) throw ConfigError("rgcn: need at least one basis");
    if (input_dim < 1 || hidden_dim < 1) throw ConfigError("rgcn: dimensions must be positive");
  }
};

// How relation weights enter the relation term.
enum class BasisMode {
  materialized,  // build W_r = U_r B, then A_r H W_r
  factored,      // sum_b a_rb (A_r H V_b), never forming W_r
};

struct RGCNLayerParams {
  Tensor bases;         // B x (in*out), row b is V_b flattened row-major
  Tensor coefficients;  // R x B
  Tensor self_loop;     // in x out
  std::size_t in = 0, out = 0;

  Tensor basis(std::size_t b) const {
    if (b >= bases.rows()) throw DimensionError("basis index out of range");
    std::vector<double> v(bases.data().begin() + static_cast<std::ptrdiff_t>(b * in * out),
                          bases.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * in * out));
    return Tensor({in, out}, std::move(v));
  }

  void set_basis(std::size_t b, const Tensor& v) {
    if (v.shape() != Shape{in, out}) throw DimensionError("basis shape mismatch");
    std::copy(v.data().begin(), v.data().end(), bases.data().begin() + static_cast<std::ptrdiff_t>(b * in * out));
  }
};

struct RGCNParams {
  std::vector<RGCNLayerParams> layers;
  Tensor embeddings;  // N x d_in

  std::size_t num_nodes() const { return embeddings.rows(); }
  std::size_t num_relations() const { return layers.empty() ? 0 : layers.front().coefficients.rows(); }
};

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, -bound, bound);
  return t;
}

// Each matrix is drawn from U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline RGCNParams init_rgcn(const RGCNConfig& config, std::size_t num_nodes, std::size_t num_relations,
                            std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, "rgcn/init");
  RGCNParams p;
  p.embeddings = uniform_tensor({num_nodes, config.input_dim}, 1.0 / std::sqrt(double(config.input_dim)), rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    RGCNLayerParams lp;
    lp.in = config.layer_in(l);
    lp.out = config.hidden_dim;
    const double bound = 1.0 / std::sqrt(double(lp.in));
    lp.bases = uniform_tensor({config.bases, lp.in * lp.out}, bound, rng);
    lp.coefficients = uniform_tensor({num_relations, config.bases}, 1.0 / std::sqrt(double(config.bases)), rng);
    lp.self_loop = uniform_tensor({lp.in, lp.out}, bound, rng);
    p.layers.push_back(std::move(lp));
  }
  return p;
}

// W_r^(l) = sum_b a_rb V_b, by direct accumulation.
inline Tensor basis_materialize(const RGCNParams& params, std::size_t l, RelationId r) {
  if (l >= params.layers.size()) throw DimensionError("layer index out of range");
  const auto& lp = params.layers[l];
  if (r >= lp.coefficients.rows()) throw DimensionError("relation index out of range");
  Tensor w({lp.in, lp.out});
  for (std::size_t b = 0; b < lp.bases.rows(); ++b) {
    const double a = lp.coefficients.at(r, b);
    for (std::size_t i = 0; i < lp.in * lp.out; ++i) w[i] += a * lp.bases.at(b, i);
  }
  return w;
}

// ---- taped encoder -------------------------------------------------------------

struct BoundRGCNLayer {
  Var bases, coefficients, self_loop;
  std::size_t in = 0, out = 0;
};

struct BoundRGCN {
  std::vector<BoundRGCNLayer> layers;
  Var embeddings;
};

// Places parameters on the tape as differentiable leaves (or constants).
inline BoundRGCN bind(Tape& tape, const RGCNParams& p, bool differentiable = true) {
  const auto leaf = [&](const Tensor& t) { return differentiable ? tape.variable(t) : tape.constant(t); };
  BoundRGCN b;
  b.embeddings = leaf(p.embeddings);
  for (const auto& lp : p.layers) {
    b.layers.push_back({leaf(lp.bases), leaf(lp.coefficients), leaf(lp.self_loop), lp.in, lp.out});
  }
  return b;
}

struct LayerTrace {
  Var input;
  std::vector<Var> relation_terms;  // A_r H W_r
  std::optional<Var> self_term;     // H W_0
  Var pre_activation;
  std::vector<Var> relation_maps;   // act(A_r H W_r + H W_0), gradient-aliased to output
  Var output;
};

struct EncodeTrace {
  std::vector<LayerTrace> layers;
  std::size_t num_nodes = 0;
  std::size_t num_relations = 0;
};

struct Encoding {
  Var output;
  EncodeTrace trace;
};

inline Var activate(Var x, Activation a) { return a == Activation::relu ? relu(x) : sigmoid(x); }

inline Tensor activate(const Tensor& x, Activation a) {
  if (a == Activation::relu) return kernels::map(x, [](double v) { return v > 0 ? v : 0.0; });
  return kernels::map(x, [](double v) { return kernels::sigmoid(v); });
}

// W_r as a taped value: reshape(U_r B).
inline Var materialize_weight(Tape& tape, const BoundRGCNLayer& layer, RelationId r) {
  const std::size_t num_rel = layer.coefficients.shape()[0];
  Var u = matmul(tape.constant(Tensor::one_hot(num_rel, r)), layer.coefficients);
  return reshape(matmul(u, layer.bases), {layer.in, layer.out});
}

inline Var relation_term(Tape& tape, Var aggregated, const BoundRGCNLayer& layer, RelationId r, BasisMode mode) {
  if (mode == BasisMode::materialized) return matmul(aggregated, materialize_weight(tape, layer, r));
  const std::size_t num_rel = layer.coefficients.shape()[0];
  const std::size_t num_bases = layer.bases.shape()[0];
  Var u = matmul(tape.constant(Tensor::one_hot(num_rel, r)), layer.coefficients);
  std::optional<Var> acc;
  for (std::size_t b = 0; b < num_bases; ++b) {
    Var v_b = reshape(matmul(tape.constant(Tensor::one_hot(num_bases, b)), layer.bases), {layer.in, layer.out});
    Var a_rb = matmul(u, tape.constant(Tensor::one_hot(num_bases, b).reshaped({num_bases, 1})));
    Var term = scale_by(matmul(aggregated, v_b), a_rb);
    acc = acc ? add(*acc, term) : term;
  }
  return *acc;
}

// One layer over explicit (constant) adjacency matrices.
inline LayerTrace rgcn_layer(Tape& tape, Var h, std::span<const Var> adjacencies, const BoundRGCNLayer& layer,
                             const RGCNConfig& config, BasisMode mode = BasisMode::materialized) {
  if (h.shape().size() != 2 || h.shape()[1] != layer.in) {
    throw DimensionError("rgcn_layer: input " + shape_string(h.shape()) + " does not match layer input width " +
                         std::to_string(layer.in));
  }
  if (adjacencies.size() != layer.coefficients.shape()[0]) {
    throw DimensionError("rgcn_layer: got " + std::to_string(adjacencies.size()) + " adjacencies for " +
                         std::to_string(layer.coefficients.shape()[0]) + " relations");
  }
  const std::size_t n = h.shape()[0];
  LayerTrace tr;
  tr.input = h;
  for (std::size_t r = 0; r < adjacencies.size(); ++r) {
    if (adjacencies[r].shape() != Shape{n, n}) throw DimensionError("rgcn_layer: adjacency must be N x N");
    tr.relation_terms.push_back(relation_term(tape, matmul(adjacencies[r], h), layer, r, mode));
  }
  if (config.self_loop) tr.self_term = matmul(h, layer.self_loop);

  std::optional<Var> z = tr.self_term;
  for (Var t : tr.relation_terms) z = z ? add(*z, t) : t;
  if (!z) z = tape.constant(Tensor({n, layer.out}));
  tr.pre_activation = *z;
  tr.output = activate(*z, config.activation);

  for (Var t : tr.relation_terms) {
    Tensor pre = t.value();
    if (tr.self_term) kernels::add_into(pre, tr.self_term->value());
    Var map = tape.variable(activate(pre, config.activation));
    tape.alias_gradient(map, tr.output);
    tr.relation_maps.push_back(map);
  }
  return tr;
}

inline Encoding rgcn_encode(Tape& tape, std::span<const Tensor> adjacencies, const BoundRGCN& params,
                            const RGCNConfig& config, BasisMode mode = BasisMode::materialized) {
  if (params.layers.size() != config.layers) throw DimensionError("rgcn_encode: parameter/config layer count mismatch");
  std::vector<Var> adj;
  adj.reserve(adjacencies.size());
  for (const auto& a : adjacencies) adj.push_back(tape.constant(a));
  Encoding enc;
  enc.trace.num_nodes = params.embeddings.shape()[0];
  enc.trace.num_relations = adjacencies.size();
  Var h = params.embeddings;
  for (std::size_t l = 0; l < config.layers; ++l) {
    enc.trace.layers.push_back(rgcn_layer(tape, h, adj, params.layers[l], config, mode));
    h = enc.trace.layers.back().output;
  }
  enc.output = h;
  return enc;
}

inline Encoding rgcn_encode(Tape& tape, const Snapshot& snap, const BoundRGCN& params, const RGCNConfig& config,
                            BasisMode mode = BasisMode::materialized) {
  if (snap.num_nodes != params.embeddings.shape()[0]) {
    throw DimensionError("rgcn_encode: snapshot has " + std::to_string(snap.num_nodes) +
                         " nodes, parameters expect " + std::to_string(params.embeddings.shape()[0]));
  }
  if (!params.layers.empty() && snap.num_relations != params.layers.front().coefficients.shape()[0]) {
    throw DimensionError("rgcn_encode: relation count mismatch between snapshot and parameters");
  }
  const auto adjacencies = relation_adjacencies(snap);
  return rgcn_encode(tape, adjacencies, params, config, mode);
}

}  // namespace gradxkg
