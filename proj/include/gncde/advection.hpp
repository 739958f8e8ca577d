#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gncde/graph.hpp"
#include "gncde/rng.hpp"
#include "gncde/types.hpp"

namespace gncde {

/// Knobs for one simulated series. `shift_per_step` is the advection
/// velocity in whole segments per step; keeping it integral makes each step
/// an exact shift of the initial condition.
struct SimulationConfig {
  Index segments_per_edge = 100;  // default segment count per edge
  Index shift_per_step = 4;       // sigma, segments moved per step
  Index n_steps = 48;             // measurements taken = n_steps + 1
  Index init_count = 50;          // segments initialized per edge
  std::int64_t init_low = 0;      // discrete uniform bounds, inclusive
  std::int64_t init_high = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Discretized quantity on every edge; segments[e] is ordered tail -> head.
struct EdgeState {
  std::vector<Vector> segments;

  double total_mass() const;
};

/// Aggregated vertex measurements, one row per step: (n_steps+1) x |V|.
using VertexSeries = Matrix;

/// Fills `init_count` uniformly chosen segments per edge (without
/// replacement) with draws from the discrete uniform {init_low..init_high};
/// all other segments are zero.
EdgeState init_edge_state(const EdgeList& edges, const SimulationConfig& config, Rng& rng);

/// One advection step of `sigma` segments: interior values shift toward the
/// head; the sigma head-most segments of each edge cross their head vertex
/// and are routed onto successor edges by A_E, preserving spatial order.
/// Returns the new state and the per-vertex quantity that crossed each
/// vertex during the step.
std::pair<EdgeState, Vector> advect_step(const EdgeState& state, const EdgeList& edges,
                                         const Matrix& a_e, Index sigma,
                                         Index n_vertices);

/// Runs n_steps+1 advection steps from a seeded initial state and stacks the
/// per-step vertex measurements into an (n_steps+1) x |V| matrix.
VertexSeries simulate_series(const EdgeList& edges, const Matrix& a_e, Index n_vertices,
                             const SimulationConfig& config);

/// n_series independent series; series i uses the generator derived from
/// (config.seed, i), so any prefix of the batch is reproducible on its own.
std::vector<VertexSeries> simulate_batch(const EdgeList& edges, const Matrix& a_e,
                                         Index n_vertices, const SimulationConfig& config,
                                         Index n_series);

}  // namespace gncde
