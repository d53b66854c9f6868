// gradxkg command-line tool: ingest, synth, train, explain, eval, export.
//
// Exit codes: 0 ok, 2 usage or configuration, 3 data (unreadable or
// inconsistent inputs, missing artifacts), 4 numeric failure.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradxkg/gradxkg.hpp"

namespace fs = std::filesystem;
using namespace gradxkg;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2, kExitData = 3, kExitNumeric = 4;

// ---- checksums and manifest -------------------------------------------------------

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// FNV-1a over file bytes; directories hash their sorted relative paths and contents.
std::string checksum(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& f : files) {
      h = fnv1a(fs::relative(f, p).generic_string(), h);
      h = fnv1a(read_file(f), h);
    }
    return hex64(h);
  }
  return hex64(fnv1a(read_file(p)));
}

struct Manifest {
  std::string command;
  json config = json::object();
  json seeds = json::object();
  std::vector<fs::path> inputs, outputs;
  fs::path location;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const std::string& status, const std::string& error = {}) const {
    if (location.empty()) return;
    json m;
    m["tool"] = "gradxkg";
    m["version"] = "0.1.0";
    m["command"] = command;
    m["status"] = status;
    if (!error.empty()) m["error"] = error;
    m["config"] = config;
    m["seeds"] = seeds;
    m["inputs"] = json::array();
    for (const auto& p : inputs) {
      json e{{"path", p.string()}};
      if (fs::exists(p)) e["checksum"] = checksum(p);
      m["inputs"].push_back(e);
    }
    m["outputs"] = json::array();
    for (const auto& p : outputs) {
      json e{{"path", p.string()}};
      if (fs::exists(p)) e["checksum"] = checksum(p);
      m["outputs"].push_back(e);
    }
    m["timing"] = {{"wall_seconds",
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    if (location.has_parent_path()) fs::create_directories(location.parent_path());
    std::ofstream out(location);
    out << m.dump(2) << '\n';
  }
};

// Directory outputs carry manifest.json inside; file outputs get a sibling.
fs::path manifest_for(const fs::path& out, bool is_dir) {
  return is_dir ? out / "manifest.json" : fs::path(out.string() + ".manifest.json");
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

// ---- option bundles ---------------------------------------------------------------

struct Options {
  // shared
  std::string dataset, checkpoint, out, in, query;
  std::uint64_t seed = 0;
  std::size_t window = 3;
  bool window_set = false;
  // explain
  std::size_t top_n = 5, ig_samples = 64;
  std::string mode = "signed", ig_baseline = "zeros";
  bool normalize = false;
  std::string dot;
  // eval
  std::string explainers = "gradxkg,perturbation,random", removal = "union", queries_file;
  double perturb_frac = 0.05;
  std::size_t jobs = 1, num_queries = 100, stability_seeds = 3;
  // ingest
  bool inverse = false;
  // synth
  SynthConfig synth;
  // train
  RGCNConfig rgcn;
  TrainConfig train;
  std::string activation = "relu";
};

std::size_t resolve(const Vocabulary& v, const std::string& token, const char* what) {
  if (auto id = v.find(token)) return *id;
  throw DataError(std::string("unknown ") + what + " '" + token + "'");
}

// "s,r,o,t" with labels or ids; the timestamp is a raw label from the
// dataset or a dense ordinal (up to T, one past the last snapshot).
Query parse_query(const std::string& text, const TemporalKG& g) {
  std::vector<std::string> f;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) f.push_back(tok);
  if (f.size() != 4) throw ConfigError("--query expects \"s,r,o,t\", got \"" + text + "\"");
  Query q;
  q.subject = resolve(g.entities, f[0], "entity");
  q.relation = resolve(g.relations, f[1], "relation");
  q.object = resolve(g.entities, f[2], "entity");
  const auto it = std::find(g.raw_timestamps.begin(), g.raw_timestamps.end(), f[3]);
  if (it != g.raw_timestamps.end()) {
    q.timestamp = static_cast<std::size_t>(it - g.raw_timestamps.begin());
  } else if (!f[3].empty() && std::all_of(f[3].begin(), f[3].end(), ::isdigit) && std::stoull(f[3]) <= g.num_timesteps()) {
    q.timestamp = std::stoull(f[3]);
  } else {
    throw DataError("unknown timestamp '" + f[3] + "'");
  }
  return q;
}

ExplainOptions explain_options(const Options& o) {
  ExplainOptions e;
  e.ig_samples = o.ig_samples;
  e.mode = parse_saliency_mode(o.mode);
  e.baseline = parse_baseline(o.ig_baseline);
  e.seed = derive_seed(o.seed, "cli/ig-baseline");
  e.normalize_per_timestep = o.normalize;
  if (o.window_set) e.window = o.window;
  return e;
}

Model load_model_for(const Options& o, const TemporalKG& g) {
  Model m = load_checkpoint(fs::path(o.checkpoint));
  if (m.num_nodes() != g.num_entities() || m.num_relations() != g.num_relations()) {
    throw DataError("checkpoint expects " + std::to_string(m.num_nodes()) + " entities and " +
                    std::to_string(m.num_relations()) + " relations, dataset has " +
                    std::to_string(g.num_entities()) + " and " + std::to_string(g.num_relations()));
  }
  return m;
}

// ---- commands ---------------------------------------------------------------------

void cmd_ingest(const Options& o, Manifest& m) {
  m.inputs = {o.in};
  m.outputs = {o.out};
  m.config = {{"in", o.in}, {"out", o.out}, {"inverse", o.inverse}};
  IngestOptions io;
  io.add_inverse_relations = o.inverse;
  const TemporalKG g = ingest_quadruples_file(o.in, io);
  save_dataset(o.out, g);
  std::cout << "ingested " << g.num_edges() << " edges, " << g.num_entities() << " entities, "
            << g.num_relations() << " relations, " << g.num_timesteps() << " snapshots -> " << o.out << '\n';
}

void cmd_synth(const Options& o, Manifest& m) {
  const fs::path out(o.out);
  m.outputs = {out};
  m.seeds = {{"seed", o.seed}};
  m.config = {{"nodes", o.synth.num_nodes},     {"relations", o.synth.num_relations},
              {"timesteps", o.synth.num_timesteps}, {"density", o.synth.density},
              {"chains", o.synth.chains},       {"rules", json::array()}};
  for (const auto& r : o.synth.rules) m.config["rules"].push_back({r.first, r.second, r.consequence});
  const SynthResult res = synth_generate(o.synth, o.seed);
  save_dataset(out, res.graph);
  std::ostringstream causes;
  causes << "# subject\trelation\tobject\ttimestamp\tplanted\tcauses (node@timestep)\n";
  for (const auto& inst : res.instances) {
    const auto& q = inst.consequence;
    causes << q.subject << '\t' << q.relation << '\t' << q.object << '\t' << q.timestamp << '\t' << inst.planted;
    for (const auto& c : inst.causes) causes << '\t' << c.node << '@' << c.timestep;
    causes << '\n';
  }
  write_text(out / "causes.tsv", causes.str());
  std::cout << "synthesized " << res.graph.num_edges() << " edges with " << res.instances.size()
            << " rule instances -> " << out << '\n';
}

void cmd_train(const Options& o, Manifest& m) {
  m.inputs = {o.dataset};
  m.outputs = {o.checkpoint};
  RGCNConfig rc = o.rgcn;
  rc.activation = parse_activation(o.activation);
  TrainConfig tc = o.train;
  tc.seed = o.seed;
  tc.window = o.window;
  m.seeds = {{"seed", o.seed}};
  m.config = {{"layers", rc.layers},         {"input_dim", rc.input_dim},   {"hidden_dim", rc.hidden_dim},
              {"bases", rc.bases},           {"activation", o.activation}, {"self_loop", rc.self_loop},
              {"epochs", tc.epochs},         {"lr", tc.learning_rate},     {"negatives", tc.negatives},
              {"window", tc.window}};
  const TemporalKG g = load_dataset(o.dataset);
  const TrainResult res = train(g, rc, tc);
  if (fs::path(o.checkpoint).has_parent_path()) fs::create_directories(fs::path(o.checkpoint).parent_path());
  save_checkpoint(fs::path(o.checkpoint), res.model);
  json curve = res.loss_curve;
  m.config["loss_curve"] = curve;
  std::cout << "trained " << tc.epochs << " epochs";
  if (!res.loss_curve.empty()) {
    std::cout << ", loss " << res.loss_curve.front() << " -> " << res.loss_curve.back();
  }
  std::cout << " -> " << o.checkpoint << '\n';
}

void cmd_explain(const Options& o, Manifest& m) {
  m.inputs = {o.dataset, o.checkpoint};
  m.outputs = {o.out};
  if (!o.dot.empty()) m.outputs.push_back(o.dot);
  m.seeds = {{"seed", o.seed}};
  m.config = {{"query", o.query},       {"top_n", o.top_n},         {"mode", o.mode},
              {"ig_samples", o.ig_samples}, {"ig_baseline", o.ig_baseline}, {"normalize", o.normalize}};
  if (o.window_set) m.config["window"] = o.window;
  const TemporalKG g = load_dataset(o.dataset);
  const Model model = load_model_for(o, g);
  const Query q = parse_query(o.query, g);
  const Saliency s = explain(model, g, q, explain_options(o));
  write_text(o.out, saliency_json(s, g, o.top_n).dump(2) + "\n");
  if (!o.dot.empty()) write_text(o.dot, saliency_dot(s, g, o.top_n));
  std::size_t rank = 1;
  for (const auto& e : s.top(o.top_n)) {
    std::cout << rank++ << '\t' << g.entities.label(e.key.node) << "@t" << e.key.timestep << '\t' << e.score << '\n';
  }
}

std::vector<Query> eval_queries(const Options& o, const TemporalKG& g, std::size_t window) {
  std::vector<Query> qs;
  if (!o.queries_file.empty()) {
    // same tab format as the dataset itself, already in ids and ordinals
    std::ifstream in(o.queries_file);
    if (!in) throw DataError("cannot read " + o.queries_file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::replace(line.begin(), line.end(), '\t', ',');
      qs.push_back(parse_query(line, g));
    }
    return qs;
  }
  if (!o.query.empty()) return {parse_query(o.query, g)};
  for (const auto& q : g.quadruples())
    if (q.timestamp >= window) qs.push_back(q);
  Rng rng = make_rng(o.seed, "cli/eval-queries");
  for (std::size_t i = qs.size(); i > 1; --i) std::swap(qs[i - 1], qs[uniform_index(rng, i)]);
  if (qs.size() > o.num_queries) qs.resize(o.num_queries);
  return qs;
}

void cmd_eval(const Options& o, Manifest& m) {
  const fs::path out(o.out);
  m.inputs = {o.dataset, o.checkpoint};
  if (!o.queries_file.empty()) m.inputs.push_back(o.queries_file);
  m.outputs = {out / "report.json", out / "report.txt"};
  m.seeds = {{"seed", o.seed}};
  m.config = {{"explainers", o.explainers}, {"top_n", o.top_n},        {"removal", o.removal},
              {"perturb_frac", o.perturb_frac}, {"jobs", o.jobs},       {"num_queries", o.num_queries},
              {"stability_seeds", o.stability_seeds}, {"ig_samples", o.ig_samples}, {"mode", o.mode},
              {"ig_baseline", o.ig_baseline}};
  if (o.window_set) m.config["window"] = o.window;

  const TemporalKG g = load_dataset(o.dataset);
  const Model model = load_model_for(o, g);
  const ExplainOptions eo = explain_options(o);
  std::vector<Explainer> explainers;
  std::stringstream names(o.explainers);
  for (std::string name; std::getline(names, name, ',');) explainers.push_back(make_explainer(name, eo));

  EvalConfig cfg;
  cfg.queries = eval_queries(o, g, o.window_set ? o.window : model.window);
  if (cfg.queries.empty()) throw DataError("no queries to evaluate");
  cfg.top_n = o.top_n;
  cfg.scope = parse_removal(o.removal);
  cfg.perturb_fraction = o.perturb_frac;
  cfg.stability_seeds.clear();
  for (std::size_t i = 0; i < o.stability_seeds; ++i) cfg.stability_seeds.push_back(derive_seed(o.seed, "cli/stability", i));
  cfg.seed = o.seed;
  if (o.window_set) cfg.window = o.window;
  cfg.jobs = o.jobs;
  cfg.dataset = fs::path(o.dataset).filename().string();

  const EvalReport report = run_suite(model, g, explainers, cfg);
  write_text(out / "report.json", report_json(report).dump(2) + "\n");
  const std::string table = report_table(report);
  write_text(out / "report.txt", table);
  std::cout << table;
}

void cmd_export(const Options& o, Manifest& m) {
  m.inputs = {o.in, o.dataset};
  m.outputs = {o.out};
  m.config = {{"top_n", o.top_n}};
  const TemporalKG g = load_dataset(o.dataset);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(o.in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(o.in + ": " + e.what());
  }
  const Saliency s = saliency_from_json(j);
  write_text(o.out, saliency_dot(s, g, o.top_n));
}

// ---- flag registration --------------------------------------------------------------

void add_seed(CLI::App* c, Options& o) { c->add_option("--seed", o.seed, "Master seed for every random stream")->capture_default_str(); }

void add_window(CLI::App* c, Options& o) {
  c->add_option_function<std::size_t>("--window", [&o](std::size_t w) { o.window = w; o.window_set = true; },
                                      "History window length (default: the checkpoint's)");
}

void add_explain_flags(CLI::App* c, Options& o) {
  c->add_option("--top-n", o.top_n, "Number of (node, timestep) entries to report")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--mode", o.mode, "Saliency mode")->capture_default_str()->check(CLI::IsMember({"signed", "unsigned"}));
  c->add_option("--ig-samples", o.ig_samples, "Riemann steps for integrated gradients")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--ig-baseline", o.ig_baseline, "Integrated-gradients baseline")->capture_default_str()->check(CLI::IsMember({"zeros", "random"}));
  add_window(c, o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradxkg: gradient explanations for RGCN-based temporal KG reasoning"};
  app.require_subcommand(1);
  Options o;

  auto* ingest = app.add_subcommand("ingest", "Turn a TAB-separated quadruple file into a dataset directory");
  ingest->add_option("--in", o.in, "Quadruple file: subject, relation, object, timestamp")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", o.out, "Dataset directory to write")->required();
  ingest->add_flag("--inverse", o.inverse, "Add an inverse relation for every relation");

  auto* synth = app.add_subcommand("synth", "Generate a planted-rule synthetic dataset");
  synth->add_option("--out", o.out, "Dataset directory to write")->required();
  synth->add_option("--nodes", o.synth.num_nodes, "Number of entities")->capture_default_str();
  synth->add_option("--relations", o.synth.num_relations, "Number of relation types")->capture_default_str();
  synth->add_option("--timesteps", o.synth.num_timesteps, "Number of snapshots")->capture_default_str();
  synth->add_option("--density", o.synth.density, "Background edge probability per (s, r, o, t)")->capture_default_str();
  synth->add_option("--chains", o.synth.chains, "Planted rule chains")->capture_default_str();
  add_seed(synth, o);

  auto* train_cmd = app.add_subcommand("train", "Train the reference model on a dataset");
  train_cmd->add_option("--dataset", o.dataset, "Dataset directory")->required();
  train_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file to write")->required();
  train_cmd->add_option("--epochs", o.train.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--lr", o.train.learning_rate, "SGD learning rate")->capture_default_str();
  train_cmd->add_option("--negatives", o.train.negatives, "Corrupted objects per positive")->capture_default_str();
  train_cmd->add_option("--layers", o.rgcn.layers, "RGCN layers")->capture_default_str();
  train_cmd->add_option("--input-dim", o.rgcn.input_dim, "Node embedding width")->capture_default_str();
  train_cmd->add_option("--dim", o.rgcn.hidden_dim, "Hidden width")->capture_default_str();
  train_cmd->add_option("--bases", o.rgcn.bases, "Basis matrices per layer")->capture_default_str();
  train_cmd->add_option("--activation", o.activation, "Encoder activation")->capture_default_str()->check(CLI::IsMember({"relu", "sigmoid"}));
  train_cmd->add_option("--window", o.window, "History window length")->capture_default_str();
  add_seed(train_cmd, o);

  auto* explain_cmd = app.add_subcommand("explain", "Explain one query with GradXKG");
  explain_cmd->add_option("--dataset", o.dataset, "Dataset directory")->required();
  explain_cmd->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  explain_cmd->add_option("--query", o.query, "Query \"s,r,o,t\" (labels or ids)")->required();
  explain_cmd->add_option("--out", o.out, "Saliency JSON to write")->required();
  explain_cmd->add_option("--dot", o.dot, "Also write a Graphviz rendering here");
  explain_cmd->add_flag("--normalize", o.normalize, "Scale each timestep to unit maximum before ranking");
  add_explain_flags(explain_cmd, o);
  add_seed(explain_cmd, o);

  auto* eval_cmd = app.add_subcommand("eval", "Compare explainers on fidelity, stability and cost");
  eval_cmd->add_option("--dataset", o.dataset, "Dataset directory")->required();
  eval_cmd->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  eval_cmd->add_option("--out", o.out, "Report directory to write")->required();
  eval_cmd->add_option("--explainers", o.explainers, "Comma list of gradxkg, perturbation, random")->capture_default_str();
  eval_cmd->add_option("--removal", o.removal, "Fidelity removal scope")->capture_default_str()->check(CLI::IsMember({"union", "per-node"}));
  eval_cmd->add_option("--perturb-frac", o.perturb_frac, "Edge fraction removed for stability")->capture_default_str();
  eval_cmd->add_option("--stability-seeds", o.stability_seeds, "Perturbations per query")->capture_default_str()->check(CLI::PositiveNumber);
  eval_cmd->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  auto* qfile = eval_cmd->add_option("--queries", o.queries_file, "Query file (TAB-separated s, r, o, t)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--query", o.query, "Single query \"s,r,o,t\"")->excludes(qfile);
  eval_cmd->add_option("--num-queries", o.num_queries, "Queries sampled from the dataset when none are given")->capture_default_str();
  add_explain_flags(eval_cmd, o);
  add_seed(eval_cmd, o);

  auto* export_cmd = app.add_subcommand("export", "Render a saliency JSON as Graphviz DOT");
  export_cmd->add_option("--in", o.in, "Saliency JSON written by explain")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--dataset", o.dataset, "Dataset directory (labels and edges)")->required();
  export_cmd->add_option("--out", o.out, "DOT file to write")->required();
  export_cmd->add_option("--top-n", o.top_n, "Entries drawn as double circles")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  Manifest manifest;
  const auto run = [&](CLI::App* cmd, auto fn, bool dir_output) {
    manifest.command = cmd->get_name();
    const std::string target = cmd == train_cmd ? o.checkpoint : o.out;
    manifest.location = manifest_for(target, dir_output);
    fn(o, manifest);
  };

  try {
    if (ingest->parsed()) run(ingest, cmd_ingest, true);
    else if (synth->parsed()) run(synth, cmd_synth, true);
    else if (train_cmd->parsed()) run(train_cmd, cmd_train, false);
    else if (explain_cmd->parsed()) run(explain_cmd, cmd_explain, false);
    else if (eval_cmd->parsed()) run(eval_cmd, cmd_eval, true);
    else if (export_cmd->parsed()) run(export_cmd, cmd_export, false);
    manifest.write("ok");
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    manifest.write("failed", e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    manifest.write("failed", e.what());
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    manifest.write("failed", e.what());
    return kExitData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    manifest.write("failed", e.what());
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    manifest.write("failed", e.what());
    return kExitData;
  }
}
