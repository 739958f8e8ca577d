// Exercises every promised behavior of the library end to end and prints one
// verdict line per criterion, so the binary doubles as a release gate. The
// exit status is the number of hard failures; the soft convergence-speed
// observation is reported but never blocks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gncde/advection.hpp"
#include "gncde/checkpoint.hpp"
#include "gncde/dataset.hpp"
#include "gncde/graph.hpp"
#include "gncde/model.hpp"
#include "gncde/optimizer.hpp"
#include "gncde/rng.hpp"
#include "gncde/train.hpp"

namespace {

using namespace gncde;

struct Outcome {
  bool pass = false;
  std::string detail;
};

Matrix fixture_adjacency_4() {
  Matrix a = Matrix::Zero(4, 4);
  a(0, 1) = 1.0;
  a(1, 2) = 0.3;
  a(1, 3) = 0.7;
  a(2, 3) = 1.0;
  a(3, 0) = 1.0;
  return a;
}

Matrix path_adjacency_10() {
  Matrix a = Matrix::Zero(10, 10);
  for (Index k = 0; k < 9; ++k) a(k, k + 1) = 1.0;
  return a;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(4);
  out << v;
  return out.str();
}

// ---------------------------------------------------------------------------
// 1. Edge transitions equal a first-principles routing oracle.

Matrix transition_oracle(const EdgeList& edges) {
  const auto e = static_cast<Index>(edges.size());
  Matrix a = Matrix::Zero(e, e);
  for (Index j = 0; j < e; ++j) {
    for (Index i = 0; i < e; ++i) {
      if (edges[static_cast<std::size_t>(i)].tail == edges[static_cast<std::size_t>(j)].head) {
        a(i, j) = edges[static_cast<std::size_t>(i)].weight;
      }
    }
  }
  return a;
}

Outcome check_transitions() {
  for (const Matrix& adj : {fixture_adjacency_4(), path_adjacency_10()}) {
    const EdgeList edges = edges_from_adjacency(adj);
    const Matrix got = edge_transition_matrix(edges, adj.rows());
    if (got.rows() != transition_oracle(edges).rows() || got != transition_oracle(edges)) {
      return {false, "transition matrix deviates from the routing oracle"};
    }
  }

  const EdgeList edges = edges_from_adjacency(fixture_adjacency_4());
  if (edges.size() != 5) return {false, "4-vertex cycle should yield 5 edges"};
  Matrix want = Matrix::Zero(5, 5);
  want(1, 0) = 0.3;  // vertex 1 splits 0.3 / 0.7 onto its two out-edges
  want(2, 0) = 0.7;
  want(3, 1) = 1.0;
  want(4, 2) = 1.0;
  want(4, 3) = 1.0;
  want(0, 4) = 1.0;
  const Matrix got = edge_transition_matrix(edges, 4);
  if (got != want) return {false, "5-edge structure is wrong"};
  for (Index j = 0; j < 5; ++j) {
    if (got.col(j).sum() != 1.0) return {false, "columns must sum to one on a sink-free graph"};
  }
  return {true, "exact on both fixture graphs, including the 0.3/0.7 split"};
}

// ---------------------------------------------------------------------------
// 2. Advected mass is conserved (no sinks) or non-increasing (with a sink).

Outcome check_conservation() {
  SimulationConfig sim;
  sim.seed = 2;

  {
    const EdgeList edges = edges_from_adjacency(fixture_adjacency_4());
    const Matrix a_e = edge_transition_matrix(edges, 4);
    Rng rng(derive_seed(sim.seed, 0));
    EdgeState state = init_edge_state(edges, sim, rng);
    const double start = state.total_mass();
    double worst = 0.0;
    for (Index t = 0; t < 48; ++t) {
      state = advect_step(state, edges, a_e, sim.shift_per_step, 4).first;
      worst = std::max(worst, std::abs(state.total_mass() - start));
    }
    if (worst > 1e-9 * start) {
      return {false, "cycle drifted by " + fmt(worst / start) + " (relative)"};
    }
  }

  const EdgeList edges = edges_from_adjacency(path_adjacency_10());
  const Matrix a_e = edge_transition_matrix(edges, 10);
  Rng rng(derive_seed(sim.seed, 1));
  EdgeState state = init_edge_state(edges, sim, rng);
  double previous = state.total_mass();
  for (Index t = 0; t < 48; ++t) {
    state = advect_step(state, edges, a_e, sim.shift_per_step, 10).first;
    const double now = state.total_mass();
    if (now > previous * (1.0 + 1e-12)) {
      return {false, "mass grew on the sink path at step " + std::to_string(t)};
    }
    previous = now;
  }
  return {true, "cycle conserves to < 1e-9 relative; sink path never gains mass"};
}

// ---------------------------------------------------------------------------
// 3. Interior segments follow the closed-form shift exactly.

Outcome check_analytic_shift() {
  SimulationConfig sim;
  sim.seed = 3;
  const EdgeList edges = edges_from_adjacency(fixture_adjacency_4());
  const Matrix a_e = edge_transition_matrix(edges, 4);
  Rng rng(derive_seed(sim.seed, 0));
  const EdgeState init = init_edge_state(edges, sim, rng);
  const Index s = sim.segments_per_edge;
  const Index sigma = sim.shift_per_step;

  EdgeState state = init;
  for (Index t = 1; t * sigma <= s; ++t) {
    state = advect_step(state, edges, a_e, sigma, 4).first;
    const Index kept = s - t * sigma;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (state.segments[e].tail(kept) != init.segments[e].head(kept)) {
        return {false, "interior mismatch on edge " + std::to_string(e) + " after " +
                           std::to_string(t) + " steps"};
      }
    }
  }
  return {true, "bitwise shift by t*sigma for all t*sigma <= " + std::to_string(s)};
}

// ---------------------------------------------------------------------------
// 4. Tape gradients match central finite differences through the full model.

Outcome check_gradients() {
  Rng data_rng(4);
  const Index v = 4;
  std::vector<Matrix> windows;
  std::vector<Matrix> targets;
  for (int b = 0; b < 2; ++b) {
    Matrix w(kInputLen, v);
    Matrix y(kTargetLen, v);
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < v; ++c) w(r, c) = data_rng.uniform(0.0, 4.0);
    }
    for (Index r = 0; r < y.rows(); ++r) {
      for (Index c = 0; c < v; ++c) y(r, c) = data_rng.uniform(0.0, 4.0);
    }
    windows.push_back(std::move(w));
    targets.push_back(std::move(y));
  }
  Eigen::ArrayXd flat(2 * v * kTargetLen);
  for (Index b = 0; b < 2; ++b) {
    for (Index n = 0; n < v; ++n) {
      for (Index t = 0; t < kTargetLen; ++t) {
        flat((b * v + n) * kTargetLen + t) = targets[static_cast<std::size_t>(b)](t, n);
      }
    }
  }
  const Tensor target = Tensor::from_array({2, v, kTargetLen}, flat);

  ModelConfig base;
  base.n_vertices = v;
  base.d_h = 4;
  base.d_z = 4;
  base.hidden_width = 4;
  base.substeps = 2;
  base.input_len = kInputLen;
  base.target_len = kTargetLen;
  base.x_mean = 2.0;  // exercise the standardization path the trainer uses
  base.x_scale = 1.2;

  std::vector<ModelConfig> configs;
  configs.push_back(base);
  configs.push_back(base);
  configs.back().inner = Mechanism::Informed;
  configs.back().a_inner = informed_matrix(fixture_adjacency_4());
  configs.back().outer = Mechanism::Informed;
  configs.back().a_outer = informed_matrix(fixture_adjacency_4());
  configs.push_back(base);
  configs.back().inner = Mechanism::Agc;
  configs.push_back(base);
  configs.back().n_layers = 2;

  double worst = 0.0;
  std::string where;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const ModelConfig& config = configs[i];
    ParamStore params = init_params(config, 40 + static_cast<std::uint64_t>(i));
    const auto build_loss = [&] {
      return mean(abs(sub(forward_batch(config, params, windows), target)));
    };
    const GradCheckResult r = grad_check(build_loss, params);
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      where = "config " + std::to_string(i) + ", " + r.worst_param + "[" +
              std::to_string(r.worst_index) + "]";
    }
  }
  if (worst >= 1e-4) {
    return {false, "max relative error " + fmt(worst) + " at " + where};
  }
  return {true, "max relative error " + fmt(worst) + " over 4 architectures (" + where + ")"};
}

// ---------------------------------------------------------------------------
// 5. Informedness with the identity matrix collapses to the identity model.

Outcome check_collapse() {
  Rng rng(5);
  std::vector<Matrix> windows;
  for (int b = 0; b < 3; ++b) {
    Matrix w(8, 4);
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(0.0, 4.0);
    }
    windows.push_back(std::move(w));
  }

  ModelConfig plain;
  plain.n_vertices = 4;
  plain.d_h = 4;
  plain.d_z = 4;
  plain.hidden_width = 4;
  plain.substeps = 1;
  plain.input_len = 8;
  plain.target_len = 3;

  for (const char* position : {"inner", "outer", "both"}) {
    ModelConfig informed = plain;
    if (position != std::string("outer")) {
      informed.inner = Mechanism::Informed;
      informed.a_inner = Matrix::Identity(4, 4);
    }
    if (position != std::string("inner")) {
      informed.outer = Mechanism::Informed;
      informed.a_outer = Matrix::Identity(4, 4);
    }
    const ParamStore p1 = init_params(plain, 51);
    const ParamStore p2 = init_params(informed, 51);
    const Tensor a = forward_batch(plain, p1, windows);
    const Tensor b = forward_batch(informed, p2, windows);
    if (!(a.array() == b.array()).all()) {
      return {false, std::string("collapse broken at the ") + position + " position"};
    }
  }
  return {true, "bitwise equal at inner, outer, and both positions"};
}

// ---------------------------------------------------------------------------
// 6. Parameter accounting: formula == enumeration; informedness is free.

Outcome check_param_counts() {
  for (Index layers : {2, 3}) {
    for (Mechanism inner : {Mechanism::Identity, Mechanism::Informed, Mechanism::Agc}) {
      for (Mechanism outer : {Mechanism::Identity, Mechanism::Informed}) {
        ModelConfig config;
        config.n_vertices = 4;
        config.d_h = 16;
        config.d_z = 16;
        config.hidden_width = 16;
        config.n_layers = layers;
        config.inner = inner;
        config.outer = outer;
        if (inner == Mechanism::Informed) config.a_inner = informed_matrix(fixture_adjacency_4());
        if (outer == Mechanism::Informed) config.a_outer = informed_matrix(fixture_adjacency_4());
        if (count_params(config) != init_params(config, 6).total_size()) {
          return {false, "formula and enumeration disagree"};
        }
      }
    }
  }

  ModelConfig identity;
  identity.n_vertices = 10;
  ModelConfig informed = identity;
  informed.inner = Mechanism::Informed;
  informed.a_inner = informed_matrix(path_adjacency_10());
  informed.outer = Mechanism::Informed;
  informed.a_outer = informed_matrix(path_adjacency_10());
  ModelConfig agc = identity;
  agc.inner = Mechanism::Agc;

  const Index n_id = count_params(identity);
  const Index n_inf = count_params(informed);
  const Index n_agc = count_params(agc);
  if (n_id != n_inf) return {false, "informed variants must cost no extra parameters"};
  if (n_agc != n_id + 10 * agc.agc_embed_dim) {
    return {false, "agc must cost exactly |V| x embed_dim extra parameters"};
  }
  return {true, "identity == informed (" + std::to_string(n_id) + "), agc adds " +
                    std::to_string(n_agc - n_id)};
}

// ---------------------------------------------------------------------------
// 7. Topology-informed variants win on the 10-vertex path at desk scale.

std::vector<ExperimentResult> g_grid_results;  // shared with the soft criterion

Outcome check_trend() {
  GridConfig grid;
  grid.graph.n_vertices = 10;
  grid.graph.adjacency = path_adjacency_10();
  grid.n_series = 500;
  grid.model.d_h = 16;
  grid.model.d_z = 16;
  grid.model.hidden_width = 16;
  grid.model.substeps = 1;
  grid.train.epochs = 30;
  grid.train.batch_size = 32;
  grid.seeds = {0, 1, 2, 3, 4};
  grid.variants = {
      {Mechanism::Identity, Mechanism::Identity},
      {Mechanism::Identity, Mechanism::Informed},
      {Mechanism::Agc, Mechanism::Identity},
      {Mechanism::Agc, Mechanism::Informed},
  };

  g_grid_results = run_grid(grid, [](const ExperimentResult& r) {
    std::cout << "    … " << r.inner << "/" << r.outer << " seed " << r.seed << ": test mae "
              << fmt(r.test_mae) << " (" << fmt(r.wall_time_s) << "s)\n"
              << std::flush;
  });

  std::ofstream csv("acceptance_grid.csv");
  write_results_csv(csv, g_grid_results);

  std::map<std::pair<std::string, std::uint64_t>, double> mae;
  for (const ExperimentResult& r : g_grid_results) {
    mae[{r.inner + "/" + r.outer, r.seed}] = r.test_mae;
  }
  int outer_wins = 0;
  int agc_wins = 0;
  std::string lines;
  for (std::uint64_t seed : grid.seeds) {
    const double id_id = mae.at({"identity/identity", seed});
    const double id_inf = mae.at({"identity/informed", seed});
    const double agc_id = mae.at({"agc/identity", seed});
    const double agc_inf = mae.at({"agc/informed", seed});
    outer_wins += id_inf < id_id;
    agc_wins += agc_inf <= agc_id;
    lines += "\n    seed " + std::to_string(seed) + ": outer informed " + fmt(id_inf) +
             " vs identity " + fmt(id_id) + " | agc informed " + fmt(agc_inf) + " vs identity " +
             fmt(agc_id);
  }
  const bool pass = outer_wins >= 4 && agc_wins >= 3;
  return {pass, "informed outer wins " + std::to_string(outer_wins) + "/5 (need >= 4), agc " +
                    "informed wins " + std::to_string(agc_wins) + "/5 (need >= 3); full CSV in " +
                    "acceptance_grid.csv" + lines};
}

// ---------------------------------------------------------------------------
// 8. Soft: informed-outer training reaches its plateau no later (median).

Outcome check_convergence_speed() {
  if (g_grid_results.empty()) return {false, "skipped: no grid results"};
  const auto median_ett = [&](const std::string& inner, const std::string& outer) {
    std::vector<Index> v;
    for (const ExperimentResult& r : g_grid_results) {
      if (r.inner == inner && r.outer == outer) v.push_back(r.epochs_to_threshold);
    }
    std::sort(v.begin(), v.end());
    return static_cast<double>(v[v.size() / 2]);
  };
  const double informed = median_ett("identity", "informed");
  const double identity = median_ett("identity", "identity");
  return {informed <= identity, "median epochs-to-threshold: informed outer " + fmt(informed) +
                                    ", identity outer " + fmt(identity)};
}

// ---------------------------------------------------------------------------
// 9. Same seeds give identical bytes; resume equals an uninterrupted run.

bool stores_equal(const ParamStore& a, const ParamStore& b) {
  if (a.items().size() != b.items().size()) return false;
  for (std::size_t i = 0; i < a.items().size(); ++i) {
    if (a.items()[i].first != b.items()[i].first) return false;
    if (!(a.items()[i].second.array() == b.items()[i].second.array()).all()) return false;
  }
  return true;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Outcome check_determinism() {
  GraphSpec graph;
  graph.n_vertices = 4;
  graph.adjacency = fixture_adjacency_4();
  SimulationConfig sim;
  sim.seed = 9;

  // identical generation, and lossless bytes on disk
  const DatasetFile a = generate_dataset(graph, sim, 12);
  const DatasetFile b = generate_dataset(graph, sim, 12);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    if (a.samples[i].input != b.samples[i].input || a.samples[i].target != b.samples[i].target) {
      return {false, "regenerated dataset differs at sample " + std::to_string(i)};
    }
  }
  const std::string dir = std::filesystem::temp_directory_path().string();
  const std::string p1 = dir + "/gncde_accept_a.ds";
  const std::string p2 = dir + "/gncde_accept_b.ds";
  write_dataset(a, p1);
  write_dataset(read_dataset(p1), p2);
  const bool bytes_equal = file_bytes(p1) == file_bytes(p2);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
  if (!bytes_equal) return {false, "dataset bytes changed across a read/write round trip"};

  ModelConfig model;
  model.n_vertices = 4;
  model.d_h = 4;
  model.d_z = 4;
  model.hidden_width = 4;
  model.substeps = 1;
  model.input_len = a.samples[0].input.rows();
  model.target_len = a.samples[0].target.rows();
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 8;
  tc.seed = 3;
  fit_normalization(model, a.samples, split_dataset(12, tc).train);

  // twin runs
  TrainState run1 = init_train_state(model, derive_seed(tc.seed, 1));
  TrainState run2 = init_train_state(model, derive_seed(tc.seed, 1));
  const auto log1 = train(model, run1, a.samples, tc);
  const auto log2 = train(model, run2, a.samples, tc);
  if (log1.size() != log2.size()) return {false, "twin runs logged different record counts"};
  for (std::size_t i = 0; i < log1.size(); ++i) {
    if (log1[i].mae != log2[i].mae || log1[i].split != log2[i].split) {
      return {false, "twin runs diverged at record " + std::to_string(i)};
    }
  }
  if (!stores_equal(run1.params, run2.params)) return {false, "twin runs ended at different weights"};
  const Matrix pred1 = predict(model, inference_params(run1), a.samples[0].input);
  const Matrix pred2 = predict(model, inference_params(run2), a.samples[0].input);
  if (pred1 != pred2) return {false, "twin runs predict differently"};

  // interrupted run: 2 epochs, freeze to disk, thaw, finish
  TrainConfig half = tc;
  half.epochs = 2;
  TrainState resumed = init_train_state(model, derive_seed(tc.seed, 1));
  auto log3 = train(model, resumed, a.samples, half);
  const std::string ck = dir + "/gncde_accept.ckpt";
  save_checkpoint(ck, {model, half, std::move(resumed)});
  Checkpoint thawed = load_checkpoint(ck);
  std::remove(ck.c_str());
  const auto tail = train(thawed.model, thawed.state, a.samples, tc);
  log3.insert(log3.end(), tail.begin(), tail.end());

  if (log3.size() != log1.size()) return {false, "resumed run logged a different record count"};
  for (std::size_t i = 0; i < log1.size(); ++i) {
    if (log1[i].mae != log3[i].mae) return {false, "resumed run diverged at record " + std::to_string(i)};
  }
  if (!stores_equal(run1.params, thawed.state.params)) {
    return {false, "resumed run ended at different weights"};
  }
  for (std::size_t i = 0; i < run1.adam_state.m.size(); ++i) {
    if (!(run1.adam_state.m[i] == thawed.state.adam_state.m[i]).all() ||
        !(run1.adam_state.v[i] == thawed.state.adam_state.v[i]).all()) {
      return {false, "optimizer state diverged after resume"};
    }
  }
  const Matrix pred3 = predict(thawed.model, inference_params(thawed.state), a.samples[0].input);
  if (pred1 != pred3) return {false, "resumed run predicts differently"};
  return {true, "datasets, logs, weights, optimizer state, and predictions all bitwise equal"};
}

struct Criterion {
  std::string name;
  double budget_s;
  bool soft;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"edge transitions match the routing oracle", 1.0, false, check_transitions},
      {"advected mass is conserved", 1.0, false, check_conservation},
      {"interior advection equals the analytic shift", 1.0, false, check_analytic_shift},
      {"gradients match central finite differences", 120.0, false, check_gradients},
      {"identity-matrix informedness collapses to identity", 10.0, false, check_collapse},
      {"parameter accounting and variant ordering", 1.0, false, check_param_counts},
      {"informed variants win on the 10-vertex path", 1800.0, false, check_trend},
      {"informed training converges no slower (soft)", 1800.0, true, check_convergence_speed},
      {"determinism, persistence, and resume", 300.0, false, check_determinism},
  };

  std::cout << "gncde acceptance suite\n======================\n";
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const Criterion& c = criteria[i];
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (elapsed > c.budget_s) {
      outcome.pass = false;
      outcome.detail += " [exceeded the " + fmt(c.budget_s) + "s budget]";
    }
    const char* verdict = c.soft ? (outcome.pass ? "INFO" : "INFO")
                                 : (outcome.pass ? "PASS" : "FAIL");
    if (!c.soft && !outcome.pass) ++failures;
    std::cout << "[" << verdict << "] " << (i + 1) << ". " << c.name << " ("
              << fmt(elapsed) << "s of " << fmt(c.budget_s) << "s)\n";
    if (!outcome.detail.empty()) {
      std::cout << "       " << (c.soft ? (outcome.pass ? "holds: " : "does not hold: ") : "")
                << outcome.detail << "\n";
    }
    std::cout << std::flush;
  }
  std::cout << "======================\n"
            << (failures == 0 ? "all hard criteria passed" :
                                std::to_string(failures) + " hard criteria failed")
            << "\n";
  return failures;
}
