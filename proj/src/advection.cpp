#include "gncde/advection.hpp"

#include <algorithm>
#include <string>

namespace gncde {

void SimulationConfig::validate() const {
  if (segments_per_edge < 1) throw ValidationError("segments_per_edge must be >= 1");
  if (shift_per_step < 1 || shift_per_step > segments_per_edge) {
    throw ValidationError("shift_per_step must satisfy 1 <= sigma <= segments_per_edge");
  }
  if (n_steps < 0) throw ValidationError("n_steps must be >= 0");
  if (init_count < 0 || init_count > segments_per_edge) {
    throw ValidationError("init_count must satisfy 0 <= init_count <= segments_per_edge");
  }
  if (init_low > init_high) throw ValidationError("init_low must be <= init_high");
}

double EdgeState::total_mass() const {
  double mass = 0.0;
  for (const auto& seg : segments) mass += seg.sum();
  return mass;
}

namespace {

Index min_length(const EdgeList& edges) {
  Index m = std::numeric_limits<Index>::max();
  for (const Edge& e : edges) m = std::min(m, e.length);
  return m;
}

}  // namespace

EdgeState init_edge_state(const EdgeList& edges, const SimulationConfig& config, Rng& rng) {
  config.validate();
  if (!edges.empty() && config.init_count > min_length(edges)) {
    throw ValidationError("init_count exceeds the shortest edge length");
  }
  EdgeState state;
  state.segments.reserve(edges.size());
  for (const Edge& e : edges) {
    Vector seg = Vector::Zero(e.length);
    const auto positions = rng.sample_without_replacement(e.length, config.init_count);
    for (const Index pos : positions) {
      seg(pos) = static_cast<double>(rng.uniform_int(config.init_low, config.init_high));
    }
    state.segments.push_back(std::move(seg));
  }
  return state;
}

std::pair<EdgeState, Vector> advect_step(const EdgeState& state, const EdgeList& edges,
                                         const Matrix& a_e, Index sigma,
                                         Index n_vertices) {
  const auto n_edges = static_cast<Index>(edges.size());
  if (static_cast<Index>(state.segments.size()) != n_edges) {
    throw ValidationError("state has " + std::to_string(state.segments.size()) +
                          " edges, graph has " + std::to_string(n_edges));
  }
  if (a_e.rows() != n_edges || a_e.cols() != n_edges) {
    throw ValidationError("edge transition matrix shape does not match edge count");
  }

  EdgeState next;
  next.segments.reserve(state.segments.size());
  Vector crossed = Vector::Zero(n_vertices);

  for (Index e = 0; e < n_edges; ++e) {
    const Vector& seg = state.segments[static_cast<std::size_t>(e)];
    const Index len = seg.size();
    if (sigma > len) throw ValidationError("sigma exceeds length of edge " + std::to_string(e));
    if ((seg.array() < 0.0).any()) {
      throw ValidationError("negative quantity in edge state (edge " + std::to_string(e) + ")");
    }
    Vector shifted = Vector::Zero(len);
    shifted.tail(len - sigma) = seg.head(len - sigma);
    next.segments.push_back(std::move(shifted));
  }

  // Boundary flow: the sigma head-most segments of source edge j land on the
  // sigma tail-most segments of each successor edge i, scaled by A_E(i,j).
  // The segment nearest the head travels deepest into the destination, so
  // the chunk keeps its ordering.
  for (Index j = 0; j < n_edges; ++j) {
    const Vector& seg = state.segments[static_cast<std::size_t>(j)];
    const auto chunk = seg.tail(sigma);
    crossed(edges[static_cast<std::size_t>(j)].head) += chunk.sum();
    for (Index i = 0; i < n_edges; ++i) {
      const double p = a_e(i, j);
      if (p != 0.0) {
        next.segments[static_cast<std::size_t>(i)].head(sigma) += p * chunk;
      }
    }
  }

  return {std::move(next), std::move(crossed)};
}

VertexSeries simulate_series(const EdgeList& edges, const Matrix& a_e, Index n_vertices,
                             const SimulationConfig& config) {
  config.validate();
  Rng rng(config.seed);
  EdgeState state = init_edge_state(edges, config, rng);
  const Index n_rows = config.n_steps + 1;
  VertexSeries series = VertexSeries::Zero(n_rows, n_vertices);
  for (Index t = 0; t < n_rows; ++t) {
    auto [next, crossed] = advect_step(state, edges, a_e, config.shift_per_step, n_vertices);
    series.row(t) = crossed.transpose();
    state = std::move(next);
  }
  return series;
}

std::vector<VertexSeries> simulate_batch(const EdgeList& edges, const Matrix& a_e,
                                         Index n_vertices, const SimulationConfig& config,
                                         Index n_series) {
  if (n_series < 0) throw ValidationError("n_series must be >= 0");
  std::vector<VertexSeries> out;
  out.reserve(static_cast<std::size_t>(n_series));
  for (Index i = 0; i < n_series; ++i) {
    SimulationConfig per_series = config;
    per_series.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i));
    out.push_back(simulate_series(edges, a_e, n_vertices, per_series));
  }
  return out;
}

}  // namespace gncde
