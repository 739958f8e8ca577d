#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gncde/advection.hpp"
#include "gncde/checkpoint.hpp"
#include "gncde/dataset.hpp"
#include "gncde/graph.hpp"
#include "gncde/model.hpp"
#include "gncde/rng.hpp"
#include "gncde/train.hpp"
#include "gncde/types.hpp"

namespace {

using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumeric = 4;

#ifndef GNCDE_VERSION
#define GNCDE_VERSION "0.0.0"
#endif

json versions_json() {
  json j;
  j["gncde"] = GNCDE_VERSION;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
               "." + std::to_string(EIGEN_MINOR_VERSION);
  j["dataset_format"] = "GNCDEDS1";
  j["checkpoint_format"] = gncde::kCheckpointMagic;
  return j;
}

void write_manifest(const std::string& path, const json& manifest) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw gncde::ValidationError("cannot open manifest for writing: " + path);
  out << manifest.dump(2) << "\n";
}

std::string format_double(double x) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), ptr);
}

void print_matrix(std::ostream& out, const std::string& title, const gncde::Matrix& m) {
  out << title << " (" << m.rows() << " x " << m.cols() << ")\n";
  for (gncde::Index r = 0; r < m.rows(); ++r) {
    out << " ";
    for (gncde::Index c = 0; c < m.cols(); ++c) {
      out << " " << std::setw(8) << std::fixed << std::setprecision(4) << m(r, c);
    }
    out << "\n";
  }
  out.unsetf(std::ios_base::floatfield);
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  if (!j.is_object()) throw gncde::ValidationError(what + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw gncde::ValidationError("unknown key '" + key + "' in " + what);
    }
  }
}

const std::set<std::string> kSimKeys = {"segments_per_edge", "shift_per_step", "n_steps",
                                        "init_count",        "init_low",       "init_high",
                                        "seed"};
const std::set<std::string> kModelKeys = {
    "n_vertices", "d_h",     "d_z",    "n_layers",   "hidden_width", "inner",
    "outer",      "agc_embed_dim", "a_inner", "a_outer", "substeps", "interp",
    "activation", "input_len", "target_len"};
const std::set<std::string> kTrainKeys = {"epochs",     "batch_size", "lr",       "beta1",
                                          "beta2",      "eps",        "seed",     "train_frac",
                                          "val_frac",   "test_frac",  "patience", "clip_norm"};
const std::set<std::string> kGridKeys = {"n_series", "seeds", "include_informed_informed",
                                         "parallel"};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw gncde::ValidationError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw gncde::ValidationError("config file " + path + " is not valid JSON: " + e.what());
  }
  check_keys(j, {"sim", "model", "train", "grid"}, "config file " + path);
  if (j.contains("sim")) check_keys(j["sim"], kSimKeys, "config section 'sim'");
  if (j.contains("model")) check_keys(j["model"], kModelKeys, "config section 'model'");
  if (j.contains("train")) check_keys(j["train"], kTrainKeys, "config section 'train'");
  if (j.contains("grid")) check_keys(j["grid"], kGridKeys, "config section 'grid'");
  return j;
}

// ---- flag bundles ---------------------------------------------------------
// Each bundle binds flags to plain variables; apply() copies only the flags
// the user actually passed onto the config, so precedence stays
// defaults < config file < flags.

struct SimFlags {
  gncde::Index segments = 100;
  gncde::Index sigma = 4;
  gncde::Index steps = 48;
  gncde::Index init_count = 50;
  std::int64_t init_low = 0;
  std::int64_t init_high = 10;
  std::uint64_t seed = 0;
  std::string seed_flag = "--seed";

  void add(CLI::App* cmd, const std::string& seed_name = "--seed") {
    seed_flag = seed_name;
    cmd->add_option("--segments", segments, "spatial segments per edge");
    cmd->add_option("--sigma", sigma, "segments advected per step");
    cmd->add_option("--steps", steps, "advection steps per series (yields steps+1 points)");
    cmd->add_option("--init-count", init_count, "segments initialized per edge");
    cmd->add_option("--init-low", init_low, "inclusive lower bound of initial draws");
    cmd->add_option("--init-high", init_high, "inclusive upper bound of initial draws");
    cmd->add_option(seed_name, seed, "simulation seed");
  }

  void apply(CLI::App* cmd, gncde::SimulationConfig& sim) const {
    if (cmd->count("--segments")) sim.segments_per_edge = segments;
    if (cmd->count("--sigma")) sim.shift_per_step = sigma;
    if (cmd->count("--steps")) sim.n_steps = steps;
    if (cmd->count("--init-count")) sim.init_count = init_count;
    if (cmd->count("--init-low")) sim.init_low = init_low;
    if (cmd->count("--init-high")) sim.init_high = init_high;
    if (cmd->count(seed_flag)) sim.seed = seed;
  }
};

gncde::InformedOptions::Orientation orientation_from_name(const std::string& name) {
  if (name == "transpose") return gncde::InformedOptions::Orientation::Transpose;
  if (name == "forward") return gncde::InformedOptions::Orientation::Forward;
  throw gncde::ValidationError("unknown orientation: " + name);
}

gncde::InformedOptions::Weighting weighting_from_name(const std::string& name) {
  if (name == "weighted") return gncde::InformedOptions::Weighting::Weighted;
  if (name == "binary") return gncde::InformedOptions::Weighting::Binary;
  if (name == "symmetrized") return gncde::InformedOptions::Weighting::Symmetrized;
  throw gncde::ValidationError("unknown weighting: " + name);
}

struct ModelFlags {
  gncde::Index d_h = 16;
  gncde::Index d_z = 16;
  gncde::Index layers = 3;
  gncde::Index width = 16;
  gncde::Index embed = 8;
  gncde::Index substeps = 2;
  std::string inner = "identity";
  std::string outer = "identity";
  std::string interp = "natural-cubic";
  std::string activation = "tanh";
  std::string orientation = "transpose";
  std::string weighting = "weighted";
  bool self_loop = true;

  void add(CLI::App* cmd) {
    cmd->add_option("--d-h", d_h, "temporal hidden dimension per vertex");
    cmd->add_option("--d-z", d_z, "spatial hidden dimension per vertex");
    cmd->add_option("--layers", layers, "affine layers per vector field (2 or 3)");
    cmd->add_option("--hidden-width", width, "hidden width of the vector-field MLPs");
    cmd->add_option("--embed-dim", embed, "AGC vertex embedding dimension");
    cmd->add_option("--substeps", substeps, "solver steps per knot interval");
    cmd->add_option("--inner", inner, "inner mechanism")
        ->check(CLI::IsMember({"identity", "informed", "agc"}));
    cmd->add_option("--outer", outer, "outer mechanism")
        ->check(CLI::IsMember({"identity", "informed"}));
    cmd->add_option("--interp", interp, "control interpolation")
        ->check(CLI::IsMember({"natural-cubic", "linear"}));
    cmd->add_option("--activation", activation, "vector-field activation")
        ->check(CLI::IsMember({"tanh", "identity"}));
    cmd->add_option("--informed-orientation", orientation,
                    "informed matrix orientation (which neighbors a vertex reads)")
        ->check(CLI::IsMember({"transpose", "forward"}));
    cmd->add_option("--informed-weighting", weighting, "informed matrix weighting")
        ->check(CLI::IsMember({"weighted", "binary", "symmetrized"}));
    cmd->add_flag("--informed-self-loop,!--no-informed-self-loop", self_loop,
                  "add the identity to the informed matrix");
  }

  void apply(CLI::App* cmd, gncde::ModelConfig& config) const {
    if (cmd->count("--d-h")) config.d_h = d_h;
    if (cmd->count("--d-z")) config.d_z = d_z;
    if (cmd->count("--layers")) config.n_layers = layers;
    if (cmd->count("--hidden-width")) config.hidden_width = width;
    if (cmd->count("--embed-dim")) config.agc_embed_dim = embed;
    if (cmd->count("--substeps")) config.substeps = substeps;
    if (cmd->count("--inner")) {
      config.inner = gncde::mechanism_from_name(inner);
      config.a_inner.reset();
    }
    if (cmd->count("--outer")) {
      config.outer = gncde::mechanism_from_name(outer);
      config.a_outer.reset();
    }
    if (cmd->count("--interp")) config.interp = gncde::interp_from_name(interp);
    if (cmd->count("--activation")) config.activation = gncde::activation_from_name(activation);
  }

  gncde::InformedOptions informed_options() const {
    gncde::InformedOptions options;
    options.orientation = orientation_from_name(orientation);
    options.weighting = weighting_from_name(weighting);
    options.self_loop = self_loop;
    return options;
  }

  bool touches_model(CLI::App* cmd) const {
    for (const char* flag :
         {"--d-h", "--d-z", "--layers", "--hidden-width", "--embed-dim", "--substeps", "--inner",
          "--outer", "--interp", "--activation"}) {
      if (cmd->count(flag)) return true;
    }
    return false;
  }
};

struct TrainFlags {
  gncde::Index epochs = 30;
  gncde::Index batch = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  double train_frac = 0.8;
  double val_frac = 0.1;
  double test_frac = 0.1;
  gncde::Index patience = 0;
  double clip = 10.0;
  bool with_seed = true;

  void add(CLI::App* cmd, bool include_seed = true) {
    with_seed = include_seed;
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--batch-size", batch, "minibatch size");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--beta1", beta1, "Adam beta1");
    cmd->add_option("--beta2", beta2, "Adam beta2");
    cmd->add_option("--eps", eps, "Adam epsilon");
    if (include_seed) cmd->add_option("--seed", seed, "training seed (split, shuffle, init)");
    cmd->add_option("--train-frac", train_frac, "training split fraction");
    cmd->add_option("--val-frac", val_frac, "validation split fraction");
    cmd->add_option("--test-frac", test_frac, "test split fraction");
    cmd->add_option("--patience", patience, "early-stop patience in epochs (0 disables)");
    cmd->add_option("--clip-norm", clip, "global gradient-norm clip (0 disables)");
  }

  void apply(CLI::App* cmd, gncde::TrainConfig& config) const {
    if (cmd->count("--epochs")) config.epochs = epochs;
    if (cmd->count("--batch-size")) config.batch_size = batch;
    if (cmd->count("--lr")) config.adam.lr = lr;
    if (cmd->count("--beta1")) config.adam.beta1 = beta1;
    if (cmd->count("--beta2")) config.adam.beta2 = beta2;
    if (cmd->count("--eps")) config.adam.eps = eps;
    if (with_seed && cmd->count("--seed")) config.seed = seed;
    if (cmd->count("--train-frac")) config.train_frac = train_frac;
    if (cmd->count("--val-frac")) config.val_frac = val_frac;
    if (cmd->count("--test-frac")) config.test_frac = test_frac;
    if (cmd->count("--patience")) {
      if (patience == 0) {
        config.patience.reset();
      } else {
        config.patience = patience;
      }
    }
    if (cmd->count("--clip-norm")) {
      if (clip == 0.0) {
        config.clip_norm.reset();
      } else {
        config.clip_norm = clip;
      }
    }
  }

  bool touches_train(CLI::App* cmd) const {
    for (const char* flag : {"--epochs", "--batch-size", "--lr", "--beta1", "--beta2", "--eps",
                             "--train-frac", "--val-frac", "--test-frac", "--patience",
                             "--clip-norm"}) {
      if (cmd->count(flag)) return true;
    }
    if (with_seed && cmd->count("--seed")) return true;
    return false;
  }
};

// ---- subcommands ----------------------------------------------------------

void register_inspect(CLI::App& app) {
  auto cmd = app.add_subcommand("inspect", "print the derived topology of a graph file");
  auto graph_path = std::make_shared<std::string>();
  cmd->add_option("--graph", *graph_path, "graph file (JSON)")->required();
  cmd->callback([cmd, graph_path] {
    (void)cmd;
    const gncde::GraphSpec spec = gncde::load_graph(*graph_path);
    const gncde::EdgeList edges =
        gncde::edges_from_adjacency(spec.adjacency, spec.edge_length.value_or(100));
    std::ostream& out = std::cout;
    out << "EdgeList (" << edges.size() << " edges, " << spec.n_vertices << " vertices)\n";
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const gncde::Edge& e = edges[i];
      out << "  e" << i << ": " << e.tail << " -> " << e.head << "  weight " << std::fixed
          << std::setprecision(4) << e.weight << "  length " << e.length << "\n";
      out.unsetf(std::ios_base::floatfield);
    }
    const gncde::Matrix inc =
        gncde::incidence_from_edges(edges, spec.n_vertices);
    const gncde::IncidenceSplit parts = gncde::split_incidence(inc);
    print_matrix(out, "I", inc);
    print_matrix(out, "I+", parts.positive);
    print_matrix(out, "I-", parts.negative);
    print_matrix(out, "I^c", parts.conservative);
    print_matrix(out, "A_E", gncde::edge_transition_matrix(inc));
  });
}

void register_simulate(CLI::App& app) {
  struct Opts {
    std::string graph;
    std::string out;
    std::string manifest;
    std::string config;
    gncde::Index series = 100;
    SimFlags sim;
  };
  auto cmd = app.add_subcommand("simulate", "simulate advection series and write a dataset");
  auto o = std::make_shared<Opts>();
  cmd->add_option("--graph", o->graph, "graph file (JSON)")->required();
  cmd->add_option("--series", o->series, "number of independent series")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--out", o->out, "output dataset file")->required();
  cmd->add_option("--manifest", o->manifest, "manifest path (default: <out>.manifest.json)");
  cmd->add_option("--config", o->config, "JSON config file (section 'sim')");
  o->sim.add(cmd);
  cmd->callback([cmd, o] {
    const json file = load_config_file(o->config);
    const gncde::GraphSpec spec = gncde::load_graph(o->graph);
    gncde::SimulationConfig sim;
    if (file.contains("sim")) sim = gncde::sim_from_json(file["sim"]);
    o->sim.apply(cmd, sim);

    const gncde::DatasetFile data = gncde::generate_dataset(spec, sim, o->series);
    gncde::write_dataset(data, o->out);

    json manifest;
    manifest["command"] = "simulate";
    manifest["graph_file"] = o->graph;
    manifest["graph"] = json::parse(gncde::graph_to_json(data.graph));
    manifest["sim"] = gncde::sim_to_json(data.sim);
    manifest["n_series"] = o->series;
    manifest["output"] = o->out;
    manifest["versions"] = versions_json();
    write_manifest(o->manifest.empty() ? o->out + ".manifest.json" : o->manifest, manifest);

    std::cout << "wrote " << data.samples.size() << " samples ("
              << data.samples.front().input.rows() << " -> "
              << data.samples.front().target.rows() << " points, " << spec.n_vertices
              << " vertices) to " << o->out << "\n";
  });
}

void register_dataset(CLI::App& app) {
  struct Opts {
    std::string in;
    bool verify = false;
  };
  auto cmd = app.add_subcommand("dataset", "describe or verify an existing dataset file");
  auto o = std::make_shared<Opts>();
  cmd->add_option("--in", o->in, "dataset file")->required();
  cmd->add_flag("--verify", o->verify, "regenerate from the stored provenance and compare");
  cmd->callback([o] {
    const gncde::DatasetFile data = gncde::read_dataset(o->in);
    json info;
    info["n_samples"] = data.samples.size();
    info["n_vertices"] = data.graph.n_vertices;
    info["input_len"] = data.samples.empty() ? 0 : data.samples.front().input.rows();
    info["target_len"] = data.samples.empty() ? 0 : data.samples.front().target.rows();
    info["sim"] = gncde::sim_to_json(data.sim);
    std::cout << info.dump(2) << "\n";
    if (!o->verify) return;
    const gncde::DatasetFile regen = gncde::generate_dataset(
        data.graph, data.sim, static_cast<gncde::Index>(data.samples.size()));
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      const bool same =
          data.samples[i].input == regen.samples[i].input &&
          data.samples[i].target == regen.samples[i].target;
      if (!same) {
        throw gncde::ValidationError("regenerated dataset differs at sample " +
                                     std::to_string(i) + "; file does not match its provenance");
      }
    }
    std::cout << "verify: regenerated dataset matches bitwise\n";
  });
}

void register_export_csv(CLI::App& app) {
  struct Opts {
    std::string in;
    std::string out;
  };
  auto cmd = app.add_subcommand("export-csv", "emit per-vertex series as CSV for plotting");
  auto o = std::make_shared<Opts>();
  cmd->add_option("--in", o->in, "dataset file")->required();
  cmd->add_option("--out", o->out, "output CSV (default: stdout)");
  cmd->callback([o] {
    const gncde::DatasetFile data = gncde::read_dataset(o->in);
    std::ofstream file;
    if (!o->out.empty()) {
      file.open(o->out);
      if (!file) throw gncde::ValidationError("cannot open for writing: " + o->out);
    }
    std::ostream& out = o->out.empty() ? std::cout : file;
    const gncde::Index v = data.graph.n_vertices;
    out << "series,t";
    for (gncde::Index c = 0; c < v; ++c) out << ",v" << c;
    out << "\n";
    for (std::size_t s = 0; s < data.samples.size(); ++s) {
      const gncde::ForecastSample& sample = data.samples[s];
      const gncde::Index in_len = sample.input.rows();
      for (gncde::Index t = 0; t < in_len + sample.target.rows(); ++t) {
        const bool from_input = t < in_len;
        out << s << "," << t;
        for (gncde::Index c = 0; c < v; ++c) {
          const double value = from_input ? sample.input(t, c) : sample.target(t - in_len, c);
          out << "," << format_double(value);
        }
        out << "\n";
      }
    }
    if (!o->out.empty() && !out) throw gncde::ValidationError("write failed: " + o->out);
  });
}

/// Builds informed matrices for whichever mechanisms need them, from the
/// graph stored in the dataset.
void attach_informed_matrices(gncde::ModelConfig& model, const gncde::Matrix& adjacency,
                              const gncde::InformedOptions& options) {
  if (model.inner == gncde::Mechanism::Informed && !model.a_inner) {
    model.a_inner = gncde::informed_matrix(adjacency, options);
  }
  if (model.outer == gncde::Mechanism::Informed && !model.a_outer) {
    model.a_outer = gncde::informed_matrix(adjacency, options);
  }
}

void register_train(CLI::App& app) {
  struct Opts {
    std::string data;
    std::string config;
    std::string checkpoint;
    std::string metrics;
    std::string resume;
    std::string manifest;
    ModelFlags model;
    TrainFlags train;
  };
  auto cmd = app.add_subcommand("train", "train one model on a dataset");
  auto o = std::make_shared<Opts>();
  cmd->add_option("--data", o->data, "dataset file")->required();
  cmd->add_option("--config", o->config, "JSON config file (sections 'model', 'train')");
  cmd->add_option("--checkpoint", o->checkpoint, "write the final checkpoint here");
  cmd->add_option("--metrics", o->metrics, "write the metrics log here (JSON lines)");
  cmd->add_option("--resume", o->resume, "resume from this checkpoint");
  cmd->add_option("--manifest", o->manifest,
                  "manifest path (default: <checkpoint>.manifest.json when saving)");
  o->model.add(cmd);
  o->train.add(cmd);
  cmd->callback([cmd, o] {
    const gncde::DatasetFile data = gncde::read_dataset(o->data);
    if (data.samples.empty()) throw gncde::ValidationError("dataset has no samples");

    gncde::ModelConfig model;
    gncde::TrainConfig train_cfg;
    gncde::TrainState state;
    if (!o->resume.empty()) {
      if (o->model.touches_model(cmd)) {
        throw gncde::ValidationError(
            "model flags cannot change a resumed run; the checkpoint fixes the architecture");
      }
      gncde::Checkpoint ck = gncde::load_checkpoint(o->resume);
      model = std::move(ck.model);
      train_cfg = ck.train;
      o->train.apply(cmd, train_cfg);
      state = std::move(ck.state);
    } else {
      const json file = load_config_file(o->config);
      if (file.contains("model")) model = gncde::model_config_from_json(file["model"]);
      o->model.apply(cmd, model);
      model.n_vertices = data.graph.n_vertices;
      model.input_len = data.samples.front().input.rows();
      model.target_len = data.samples.front().target.rows();
      attach_informed_matrices(model, data.graph.adjacency, o->model.informed_options());
      if (file.contains("train")) train_cfg = gncde::train_config_from_json(file["train"]);
      o->train.apply(cmd, train_cfg);
      train_cfg.validate();
      gncde::fit_normalization(
          model, data.samples,
          gncde::split_dataset(static_cast<gncde::Index>(data.samples.size()), train_cfg).train);
      model.validate();
      state = gncde::init_train_state(model, gncde::derive_seed(train_cfg.seed, 1));
    }

    const std::vector<gncde::MetricRecord> log =
        gncde::train(model, state, data.samples, train_cfg);
    gncde::write_metrics(std::cout, log);
    if (!o->metrics.empty()) {
      const auto mode = o->resume.empty() ? std::ios::out : std::ios::out | std::ios::app;
      std::ofstream metrics(o->metrics, mode);
      if (!metrics) throw gncde::ValidationError("cannot open for writing: " + o->metrics);
      gncde::write_metrics(metrics, log);
    }

    const gncde::SplitIndices split =
        gncde::split_dataset(static_cast<gncde::Index>(data.samples.size()), train_cfg);
    if (!split.test.empty()) {
      const double test = gncde::evaluate(model, gncde::inference_params(state), data.samples,
                                          split.test, train_cfg.batch_size);
      std::cerr << "test mae " << format_double(test) << " over " << split.test.size()
                << " samples\n";
    }
    if (state.best_epoch >= 0) {
      std::cerr << "best val mae " << format_double(state.best_val_mae) << " at epoch "
                << state.best_epoch << "\n";
    }

    if (!o->checkpoint.empty()) {
      gncde::save_checkpoint(o->checkpoint, {model, train_cfg, state});
    }

    json manifest;
    manifest["command"] = "train";
    manifest["data"] = o->data;
    manifest["dataset"] = {{"graph", json::parse(gncde::graph_to_json(data.graph))},
                           {"sim", gncde::sim_to_json(data.sim)},
                           {"n_samples", data.samples.size()}};
    manifest["model"] = gncde::model_config_to_json(model);
    manifest["train"] = gncde::train_config_to_json(train_cfg);
    manifest["init_seed"] = gncde::derive_seed(train_cfg.seed, 1);
    manifest["resume"] = o->resume.empty() ? json() : json(o->resume);
    manifest["outputs"] = {{"checkpoint", o->checkpoint}, {"metrics", o->metrics}};
    manifest["versions"] = versions_json();
    std::string manifest_path = o->manifest;
    if (manifest_path.empty() && !o->checkpoint.empty()) {
      manifest_path = o->checkpoint + ".manifest.json";
    }
    write_manifest(manifest_path, manifest);
  });
}

void register_eval(CLI::App& app) {
  struct Opts {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    gncde::Index batch = 0;
  };
  auto cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  auto o = std::make_shared<Opts>();
  cmd->add_option("--checkpoint", o->checkpoint, "checkpoint file")->required();
  cmd->add_option("--data", o->data, "dataset file")->required();
  cmd->add_option("--split", o->split, "which split to evaluate")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  cmd->add_option("--batch-size", o->batch, "evaluation batch size (default: from checkpoint)");
  cmd->callback([o] {
    const gncde::Checkpoint ck = gncde::load_checkpoint(o->checkpoint);
    const gncde::DatasetFile data = gncde::read_dataset(o->data);
    if (data.graph.n_vertices != ck.model.n_vertices) {
      throw gncde::ValidationError("dataset has " + std::to_string(data.graph.n_vertices) +
                                   " vertices but the checkpoint expects " +
                                   std::to_string(ck.model.n_vertices));
    }
    const gncde::Index batch = o->batch > 0 ? o->batch : ck.train.batch_size;
    const gncde::SplitIndices split =
        gncde::split_dataset(static_cast<gncde::Index>(data.samples.size()), ck.train);
    const auto run = [&](const std::string& name, std::span<const gncde::Index> indices) {
      if (indices.empty()) {
        std::cerr << "split '" << name << "' is empty; skipping\n";
        return;
      }
      const double value = gncde::evaluate(ck.model, gncde::inference_params(ck.state),
                                           data.samples, indices, batch);
      json line;
      line["split"] = name;
      line["mae"] = value;
      line["n_samples"] = indices.size();
      std::cout << line.dump() << "\n";
    };
    if (o->split == "all") {
      run("train", split.train);
      run("val", split.val);
      run("test", split.test);
    } else if (o->split == "train") {
      run("train", split.train);
    } else if (o->split == "val") {
      run("val", split.val);
    } else {
      run("test", split.test);
    }
  });
}

void register_grid(CLI::App& app) {
  struct Opts {
    std::string graph;
    std::string config;
    std::string preset;
    std::string out;
    std::string manifest;
    gncde::Index series = 0;
    gncde::Index n_seeds = 0;
    bool informed_informed = false;
    bool parallel = false;
    bool table = false;
    ModelFlags model;
    TrainFlags train;
    SimFlags sim;
  };
  auto cmd = app.add_subcommand("grid", "train the full mechanism grid and emit CSV");
  auto o = std::make_shared<Opts>();
  cmd->add_option("--graph", o->graph, "graph file (JSON)")->required();
  cmd->add_option("--preset", o->preset, "named settings bundle")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--config", o->config, "JSON config file (all sections)");
  cmd->add_option("--series", o->series, "simulated series (= samples)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seeds", o->n_seeds, "number of seeds (0..N-1)")->check(CLI::PositiveNumber);
  cmd->add_flag("--include-informed-informed", o->informed_informed,
                "also run the informed/informed variant");
  cmd->add_flag("--parallel", o->parallel, "one thread per variant within each seed");
  cmd->add_flag("--table", o->table, "print the mean-MAE table after the CSV");
  cmd->add_option("--out", o->out, "CSV output path (default: stdout)");
  cmd->add_option("--manifest", o->manifest, "manifest path (default: <out>.manifest.json)");
  o->model.add(cmd);
  o->train.add(cmd, /*include_seed=*/false);
  o->sim.add(cmd, "--sim-seed");
  cmd->callback([cmd, o] {
    gncde::GridConfig grid;
    grid.graph = gncde::load_graph(o->graph);

    // Precedence: defaults < preset < config file < flags.
    if (o->preset == "desk") {
      grid.n_series = grid.graph.n_vertices >= 10 ? 500 : 200;
      grid.model.d_h = 16;
      grid.model.d_z = 16;
      grid.model.hidden_width = 16;
      grid.model.substeps = 1;
      grid.train.epochs = 30;
      grid.train.batch_size = 32;
      grid.seeds = {0, 1, 2, 3, 4};
    } else if (o->preset == "paper") {
      grid.n_series = grid.graph.n_vertices >= 10 ? 10000 : 1000;
      grid.model.d_h = 32;
      grid.model.d_z = 32;
      grid.model.hidden_width = 128;
      grid.model.substeps = 2;
      grid.train.epochs = 100;
      grid.train.batch_size = 32;
      grid.seeds = {0, 1, 2, 3, 4};
    }

    const json file = load_config_file(o->config);
    if (file.contains("sim")) grid.sim = gncde::sim_from_json(file["sim"]);
    if (file.contains("model")) grid.model = gncde::model_config_from_json(file["model"]);
    if (file.contains("train")) grid.train = gncde::train_config_from_json(file["train"]);
    if (file.contains("grid")) {
      const json& g = file["grid"];
      if (g.contains("n_series")) grid.n_series = g["n_series"].get<gncde::Index>();
      if (g.contains("seeds")) grid.seeds = g["seeds"].get<std::vector<std::uint64_t>>();
      if (g.contains("include_informed_informed")) {
        grid.include_informed_informed = g["include_informed_informed"].get<bool>();
      }
      if (g.contains("parallel")) grid.parallel = g["parallel"].get<bool>();
    }

    o->sim.apply(cmd, grid.sim);
    o->model.apply(cmd, grid.model);
    o->train.apply(cmd, grid.train);
    if (cmd->count("--series")) grid.n_series = o->series;
    if (cmd->count("--seeds")) {
      grid.seeds.clear();
      for (gncde::Index s = 0; s < o->n_seeds; ++s) {
        grid.seeds.push_back(static_cast<std::uint64_t>(s));
      }
    }
    if (o->informed_informed) grid.include_informed_informed = true;
    if (o->parallel) grid.parallel = true;

    const auto progress = [](const gncde::ExperimentResult& r) {
      std::cerr << "[grid] inner=" << r.inner << " outer=" << r.outer << " seed=" << r.seed
                << " test_mae=" << format_double(r.test_mae) << " ("
                << std::fixed << std::setprecision(1) << r.wall_time_s << "s)\n";
      std::cerr.unsetf(std::ios_base::floatfield);
    };
    const std::vector<gncde::ExperimentResult> results = gncde::run_grid(grid, progress);

    std::ofstream file_out;
    if (!o->out.empty()) {
      file_out.open(o->out);
      if (!file_out) throw gncde::ValidationError("cannot open for writing: " + o->out);
    }
    std::ostream& out = o->out.empty() ? std::cout : file_out;
    gncde::write_results_csv(out, results);
    if (o->table) gncde::write_results_table(std::cout, results);

    json manifest;
    manifest["command"] = "grid";
    manifest["graph_file"] = o->graph;
    manifest["graph"] = json::parse(gncde::graph_to_json(grid.graph));
    manifest["preset"] = o->preset.empty() ? json() : json(o->preset);
    manifest["sim"] = gncde::sim_to_json(grid.sim);
    manifest["model"] = gncde::model_config_to_json(grid.model);
    manifest["train"] = gncde::train_config_to_json(grid.train);
    manifest["n_series"] = grid.n_series;
    manifest["seeds"] = grid.seeds;
    manifest["include_informed_informed"] = grid.include_informed_informed;
    manifest["parallel"] = grid.parallel;
    manifest["output"] = o->out;
    manifest["versions"] = versions_json();
    std::string manifest_path = o->manifest;
    if (manifest_path.empty() && !o->out.empty()) manifest_path = o->out + ".manifest.json";
    write_manifest(manifest_path, manifest);
  });
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t next = std::min({row[j] + 1, row[j - 1] + 1,
                                         diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = row[j];
      row[j] = next;
    }
  }
  return row[b.size()];
}

const std::vector<std::string> kSubcommands = {"inspect", "simulate", "dataset", "train",
                                               "eval",    "grid",     "export-csv"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph advection simulation and topology-informed neural CDE forecasting"};
  app.require_subcommand(1);
  register_inspect(app);
  register_simulate(app);
  register_dataset(app);
  register_export_csv(app);
  register_train(app);
  register_eval(app);
  register_grid(app);

  if (argc >= 2 && argv[1][0] != '-') {
    const std::string given = argv[1];
    if (std::find(kSubcommands.begin(), kSubcommands.end(), given) == kSubcommands.end()) {
      std::string best;
      std::size_t best_distance = std::string::npos;
      for (const std::string& name : kSubcommands) {
        const std::size_t d = edit_distance(given, name);
        if (d < best_distance) {
          best_distance = d;
          best = name;
        }
      }
      std::cerr << "gncde: unknown subcommand '" << given << "'";
      if (best_distance <= 3) std::cerr << " (did you mean '" << best << "'?)";
      std::cerr << "\nsee 'gncde --help'\n";
      return kExitUsage;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (argc < 2) {
      std::cerr << app.help();
    } else {
      std::cerr << "gncde: " << e.what() << "\nsee 'gncde --help'\n";
    }
    return kExitUsage;
  } catch (const gncde::ValidationError& e) {
    std::cerr << "gncde: " << e.what() << "\n";
    return kExitValidation;
  } catch (const gncde::NumericError& e) {
    std::cerr << "gncde: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
