#pragma once

// Temporal knowledge graph data model: quadruples, per-timestamp snapshots,
// relation-specific adjacency and the graph edits used by the explainers.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gradxkg/errors.hpp"
#include "gradxkg/rng.hpp"
#include "gradxkg/tensor.hpp"

namespace gradxkg {

using EntityId = std::size_t;
using RelationId = std::size_t;

struct Edge {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;

  auto operator<=>(const Edge&) const = default;
};

struct Quadruple {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;
  std::size_t timestamp = 0;

  auto operator<=>(const Quadruple&) const = default;
};

// A node at a particular snapshot: the unit explanations rank.
struct NodeTime {
  EntityId node = 0;
  std::size_t timestep = 0;

  auto operator<=>(const NodeTime&) const = default;
};

// A query is the quadruple whose plausibility the model scores.
using Query = Quadruple;

struct Snapshot {
  std::size_t timestamp = 0;
  std::size_t num_nodes = 0;
  std::size_t num_relations = 0;
  std::vector<Edge> edges;  // sorted, unique

  // Sorts, dedups and validates endpoints.
  void normalize() {
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    for (const auto& e : edges) {
      if (e.subject >= num_nodes || e.object >= num_nodes || e.relation >= num_relations) {
        throw DimensionError("snapshot edge out of vocabulary bounds");
      }
    }
  }

  bool contains(const Edge& e) const { return std::binary_search(edges.begin(), edges.end(), e); }

  bool touches(EntityId node) const {
    return std::any_of(edges.begin(), edges.end(),
                       [node](const Edge& e) { return e.subject == node || e.object == node; });
  }
};

class Vocabulary {
 public:
  std::size_t intern(const std::string& label) {
    auto [it, inserted] = ids_.try_emplace(label, labels_.size());
    if (inserted) labels_.push_back(label);
    return it->second;
  }

  std::optional<std::size_t> find(const std::string& label) const {
    auto it = ids_.find(label);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& label(std::size_t id) const {
    if (id >= labels_.size()) throw DimensionError("vocabulary id out of range: " + std::to_string(id));
    return labels_[id];
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }

  static Vocabulary numbered(std::size_t n) {
    Vocabulary v;
    for (std::size_t i = 0; i < n; ++i) v.intern(std::to_string(i));
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.labels_ == b.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct TemporalKG {
  std::vector<Snapshot> snapshots;  // snapshots[t].timestamp == t
  Vocabulary entities;
  Vocabulary relations;
  std::vector<std::string> raw_timestamps;  // ordinal -> original label

  std::size_t num_entities() const { return entities.size(); }
  std::size_t num_relations() const { return relations.size(); }
  std::size_t num_timesteps() const { return snapshots.size(); }

  const Snapshot& at(std::size_t t) const {
    if (t >= snapshots.size()) throw DimensionError("timestep out of range: " + std::to_string(t));
    return snapshots[t];
  }

  std::size_t num_edges() const {
    std::size_t n = 0;
    for (const auto& s : snapshots) n += s.edges.size();
    return n;
  }

  std::vector<Quadruple> quadruples() const {
    std::vector<Quadruple> out;
    for (const auto& s : snapshots)
      for (const auto& e : s.edges) out.push_back({e.subject, e.relation, e.object, s.timestamp});
    return out;
  }

  // Checks the structural invariants; throws DataError on violation.
  void validate() const {
    for (std::size_t t = 0; t < snapshots.size(); ++t) {
      const auto& s = snapshots[t];
      if (s.timestamp != t) throw DataError("snapshot timestamps must be dense ordinals");
      if (s.num_nodes != num_entities() || s.num_relations != num_relations()) {
        throw DataError("snapshot vocabulary sizes disagree with the graph");
      }
    }
    if (raw_timestamps.size() != snapshots.size()) throw DataError("raw timestamp table size mismatch");
  }

  // Empty snapshots for every ordinal, sized to the vocabularies.
  static TemporalKG empty(std::size_t entities, std::size_t relations, std::size_t timesteps) {
    TemporalKG g;
    g.entities = Vocabulary::numbered(entities);
    g.relations = Vocabulary::numbered(relations);
    for (std::size_t t = 0; t < timesteps; ++t) {
      g.snapshots.push_back(Snapshot{t, entities, relations, {}});
      g.raw_timestamps.push_back(std::to_string(t));
    }
    return g;
  }
};

// ---- ingestion ---------------------------------------------------------------

struct IngestOptions {
  // Append an inverse relation type r + R for every relation r, with the edge
  // reversed. Off by default: messages flow subject -> object only.
  bool add_inverse_relations = false;
};

namespace detail {

inline bool is_unsigned_integer(std::string_view s) {
  return !s.empty() && s.size() <= 18 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

// Column where every token is a non-negative integer maps token -> id
// directly (vocabulary 0..max); otherwise labels are interned in
// first-appearance order.
inline Vocabulary build_vocab(const std::vector<const std::string*>& tokens) {
  const bool numeric = std::all_of(tokens.begin(), tokens.end(),
                                   [](const std::string* s) { return is_unsigned_integer(*s); });
  if (numeric) {
    std::size_t max_id = 0;
    for (const auto* s : tokens) max_id = std::max<std::size_t>(max_id, std::stoull(*s));
    return Vocabulary::numbered(tokens.empty() ? 0 : max_id + 1);
  }
  Vocabulary v;
  for (const auto* s : tokens) v.intern(*s);
  return v;
}

inline std::size_t vocab_id(const Vocabulary& v, const std::string& token) {
  if (auto id = v.find(token)) return *id;
  // Numeric vocabularies store canonical decimal labels ("007" -> "7").
  if (is_unsigned_integer(token)) {
    if (auto id = v.find(std::to_string(std::stoull(token)))) return *id;
  }
  throw DataError("token not in vocabulary: " + token);
}

}  // namespace detail

inline TemporalKG add_inverse_relations(const TemporalKG& g) {
  TemporalKG out;
  out.entities = g.entities;
  out.raw_timestamps = g.raw_timestamps;
  const std::size_t r = g.num_relations();
  out.relations = g.relations;
  for (std::size_t i = 0; i < r; ++i) out.relations.intern("inv_" + g.relations.label(i));
  if (out.relations.size() != 2 * r) throw DataError("inverse relation label collides with an existing label");
  for (const auto& s : g.snapshots) {
    Snapshot n{s.timestamp, s.num_nodes, 2 * r, s.edges};
    for (const auto& e : s.edges) n.edges.push_back({e.object, e.relation + r, e.subject});
    n.normalize();
    out.snapshots.push_back(std::move(n));
  }
  return out;
}

// Reads `subject<TAB>relation<TAB>object<TAB>timestamp` lines. '#' lines and
// blank lines are skipped. Timestamps become dense ordinals in sorted order
// (numeric when every timestamp is an integer, lexicographic otherwise).
inline TemporalKG ingest_quadruples(std::istream& in, const IngestOptions& options = {}) {
  struct Row {
    std::string s, r, o, t;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(std::move(line));
    if (line.empty() || line[0] == '#') continue;
    auto fields = detail::split_tabs(line);
    if (fields.size() != 4 || std::any_of(fields.begin(), fields.end(), [](const auto& f) { return f.empty(); })) {
      throw DataError("malformed quadruple at line " + std::to_string(line_no) +
                      ": expected 4 non-empty TAB-separated fields");
    }
    rows.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2]), std::move(fields[3])});
  }
  if (rows.empty()) throw DataError("no quadruples in input");

  std::vector<const std::string*> ent_tokens, rel_tokens;
  for (const auto& row : rows) {
    ent_tokens.push_back(&row.s);
    ent_tokens.push_back(&row.o);
    rel_tokens.push_back(&row.r);
  }

  TemporalKG g;
  g.entities = detail::build_vocab(ent_tokens);
  g.relations = detail::build_vocab(rel_tokens);

  const bool numeric_time = std::all_of(rows.begin(), rows.end(),
                                        [](const Row& r) { return detail::is_unsigned_integer(r.t); });
  std::vector<std::string> times;
  for (const auto& row : rows) times.push_back(numeric_time ? std::to_string(std::stoull(row.t)) : row.t);
  std::sort(times.begin(), times.end(), [&](const std::string& a, const std::string& b) {
    if (numeric_time) return std::stoull(a) < std::stoull(b);
    return a < b;
  });
  times.erase(std::unique(times.begin(), times.end()), times.end());
  std::unordered_map<std::string, std::size_t> ordinal;
  for (std::size_t i = 0; i < times.size(); ++i) ordinal.emplace(times[i], i);
  g.raw_timestamps = times;

  const std::size_t n = g.num_entities(), r = g.num_relations();
  for (std::size_t t = 0; t < times.size(); ++t) g.snapshots.push_back(Snapshot{t, n, r, {}});
  for (const auto& row : rows) {
    const std::string key = numeric_time ? std::to_string(std::stoull(row.t)) : row.t;
    auto& snap = g.snapshots[ordinal.at(key)];
    snap.edges.push_back({detail::vocab_id(g.entities, row.s), detail::vocab_id(g.relations, row.r),
                          detail::vocab_id(g.entities, row.o)});
  }
  for (auto& s : g.snapshots) s.normalize();
  return options.add_inverse_relations ? add_inverse_relations(g) : g;
}

inline TemporalKG ingest_quadruples_file(const std::filesystem::path& path, const IngestOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open quadruple file: " + path.string());
  return ingest_quadruples(in, options);
}

// Writes labelled quadruples in (timestamp, subject, relation, object) order;
// ingest_quadruples of the output reproduces the edge multiset.
inline void write_quadruples(std::ostream& out, const TemporalKG& g) {
  for (const auto& s : g.snapshots) {
    for (const auto& e : s.edges) {
      out << g.entities.label(e.subject) << '\t' << g.relations.label(e.relation) << '\t'
          << g.entities.label(e.object) << '\t' << g.raw_timestamps.at(s.timestamp) << '\n';
    }
  }
}

inline void write_vocabulary(std::ostream& out, const std::vector<std::string>& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << '\t' << labels[i] << '\n';
}

inline std::vector<std::string> read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file: " + path.string());
  std::vector<std::string> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(std::move(line));
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.substr(0, tab) != std::to_string(labels.size())) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected '<dense id>\\t<label>'");
    }
    labels.push_back(line.substr(tab + 1));
  }
  return labels;
}

// Canonical dataset directory layout:
//   quadruples.tsv  subject_id, relation_id, object_id, ordinal (sorted)
//   entities.tsv / relations.tsv / timestamps.tsv   id<TAB>label sidecars
inline void save_dataset(const std::filesystem::path& dir, const TemporalKG& g) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "quadruples.tsv");
    for (const auto& q : g.quadruples())
      out << q.subject << '\t' << q.relation << '\t' << q.object << '\t' << q.timestamp << '\n';
  }
  {
    std::ofstream out(dir / "entities.tsv");
    write_vocabulary(out, g.entities.labels());
  }
  {
    std::ofstream out(dir / "relations.tsv");
    write_vocabulary(out, g.relations.labels());
  }
  {
    std::ofstream out(dir / "timestamps.tsv");
    write_vocabulary(out, g.raw_timestamps);
  }
}

inline TemporalKG load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  TemporalKG g;
  for (const auto& l : read_vocabulary(dir / "entities.tsv")) g.entities.intern(l);
  for (const auto& l : read_vocabulary(dir / "relations.tsv")) g.relations.intern(l);
  g.raw_timestamps = read_vocabulary(dir / "timestamps.tsv");
  const std::size_t n = g.num_entities(), r = g.num_relations();
  for (std::size_t t = 0; t < g.raw_timestamps.size(); ++t) g.snapshots.push_back(Snapshot{t, n, r, {}});

  std::ifstream in(dir / "quadruples.tsv");
  if (!in) throw DataError("cannot open " + (dir / "quadruples.tsv").string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(std::move(line));
    if (line.empty() || line[0] == '#') continue;
    const auto f = detail::split_tabs(line);
    if (f.size() != 4 || !std::all_of(f.begin(), f.end(), [](const auto& x) { return detail::is_unsigned_integer(x); })) {
      throw DataError("malformed canonical quadruple at line " + std::to_string(line_no));
    }
    const std::size_t t = std::stoull(f[3]);
    if (t >= g.snapshots.size()) throw DataError("timestamp ordinal out of range at line " + std::to_string(line_no));
    g.snapshots[t].edges.push_back({std::stoull(f[0]), std::stoull(f[1]), std::stoull(f[2])});
  }
  try {
    for (auto& s : g.snapshots) s.normalize();
  } catch (const DimensionError& e) {
    throw DataError(std::string("dataset inconsistent with its vocabularies: ") + e.what());
  }
  return g;
}

// ---- graph operators ---------------------------------------------------------

// A_r[i][j] = 1 / c_{i,r} when (j, r, i) is an edge, with c_{i,r} the number
// of r-labelled in-edges of i. Rows of nodes without such in-edges are zero.
inline Tensor relation_adjacency(const Snapshot& snap, RelationId r) {
  if (r >= snap.num_relations) {
    throw DimensionError("relation id " + std::to_string(r) + " out of range (R=" +
                         std::to_string(snap.num_relations) + ")");
  }
  const std::size_t n = snap.num_nodes;
  Tensor a({n, n});
  std::vector<std::size_t> in_degree(n, 0);
  for (const auto& e : snap.edges)
    if (e.relation == r) ++in_degree[e.object];
  for (const auto& e : snap.edges)
    if (e.relation == r) a.at(e.object, e.subject) = 1.0 / static_cast<double>(in_degree[e.object]);
  return a;
}

inline std::vector<Tensor> relation_adjacencies(const Snapshot& snap) {
  std::vector<Tensor> out;
  out.reserve(snap.num_relations);
  for (RelationId r = 0; r < snap.num_relations; ++r) out.push_back(relation_adjacency(snap, r));
  return out;
}

// Drops every edge incident to `node`; the node stays in the vocabulary.
inline Snapshot remove_node(const Snapshot& snap, EntityId node) {
  if (node >= snap.num_nodes) throw DimensionError("remove_node: node " + std::to_string(node) + " out of range");
  Snapshot out{snap.timestamp, snap.num_nodes, snap.num_relations, {}};
  out.edges.reserve(snap.edges.size());
  for (const auto& e : snap.edges)
    if (e.subject != node && e.object != node) out.edges.push_back(e);
  return out;
}

// Deletes floor(fraction * |eligible|) edges chosen uniformly without
// replacement. Edges incident to `protected_node` are never eligible.
inline Snapshot perturb_edges(const Snapshot& snap, double fraction, std::uint64_t seed,
                              std::optional<EntityId> protected_node = std::nullopt) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("perturb_edges: fraction must lie in [0,1]");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < snap.edges.size(); ++i) {
    const auto& e = snap.edges[i];
    if (protected_node && (e.subject == *protected_node || e.object == *protected_node)) continue;
    eligible.push_back(i);
  }
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(eligible.size())));
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots are the deleted sample.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  std::vector<bool> drop(snap.edges.size(), false);
  for (std::size_t i = 0; i < k; ++i) drop[eligible[i]] = true;
  Snapshot out{snap.timestamp, snap.num_nodes, snap.num_relations, {}};
  for (std::size_t i = 0; i < snap.edges.size(); ++i)
    if (!drop[i]) out.edges.push_back(snap.edges[i]);
  return out;
}

// ---- history windows -----------------------------------------------------------

// The `window` snapshots strictly before `query.timestamp`, oldest first.
using Window = std::vector<const Snapshot*>;

inline Window history_window(const TemporalKG& g, const Query& query, std::size_t window) {
  if (window == 0) throw DimensionError("history window must be >= 1");
  if (query.timestamp < window) {
    throw DimensionError("query timestamp " + std::to_string(query.timestamp) +
                         " leaves no room for a history window of " + std::to_string(window));
  }
  if (query.timestamp > g.num_timesteps()) throw DimensionError("query timestamp beyond the graph");
  if (query.subject >= g.num_entities() || query.object >= g.num_entities() ||
      query.relation >= g.num_relations()) {
    throw DimensionError("query ids out of vocabulary bounds");
  }
  Window w;
  for (std::size_t t = query.timestamp - window; t < query.timestamp; ++t) w.push_back(&g.snapshots[t]);
  return w;
}

}  // namespace gradxkg
