#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gncde/types.hpp"

namespace gncde {

/// One directed edge. `weight` is the split proportion assigned at the tail
/// vertex, `length` the number of spatial segments on the edge.
struct Edge {
  Index tail = 0;
  Index head = 0;
  double weight = 1.0;
  Index length = 100;

  bool operator==(const Edge&) const = default;
};

using EdgeList = std::vector<Edge>;

/// Signed parts of a vertex incidence matrix.
struct IncidenceSplit {
  Matrix positive;      // entries of I where I > 0, else 0
  Matrix negative;      // -entries of I where I < 0, else 0
  Matrix conservative;  // 1 where I > 0, else I
};

/// Graph as read from a graph file: dense weighted adjacency plus an
/// optional uniform edge length.
struct GraphSpec {
  Index n_vertices = 0;
  Matrix adjacency;
  std::optional<Index> edge_length;
};

/// Checks the weighted-adjacency invariants: square, nonnegative entries,
/// zero diagonal, each row summing to 1 (vertex with outgoing edges) or 0
/// (sink), tolerance 1e-12. Throws ValidationError otherwise.
void validate_adjacency(const Matrix& adjacency);

/// Enumerates edges in row-major order over the adjacency matrix (by tail,
/// then head), one edge per strictly positive entry. All edges get
/// `default_length` segments.
EdgeList edges_from_adjacency(const Matrix& adjacency, Index default_length = 100);

/// |V|x|E| incidence matrix: column for edge (u,v,p) holds -p at row u and
/// +1 at row v.
Matrix incidence_from_edges(const EdgeList& edges, Index n_vertices);

/// Edge transition matrix A_E = (I^-)^T (I^c)^+, rows indexing the
/// destination edge and columns the source edge. Entry (i,j) is the split
/// weight of e_i when e_i continues e_j (head(e_j) == tail(e_i)), else 0.
/// Columns sum to 1, or to 0 when the source edge ends at a sink.
Matrix edge_transition_matrix(const Matrix& incidence);

/// Convenience: adjacency -> A_E through the full pipeline.
Matrix edge_transition_matrix(const EdgeList& edges, Index n_vertices);

GraphSpec load_graph(const std::string& path);
GraphSpec parse_graph(const std::string& json_text);
std::string graph_to_json(const GraphSpec& spec);

// --- templated pieces, usable on any dense Eigen expression ---------------

/// Splits an incidence matrix into (I^+, I^-, I^c).
template <typename Derived>
IncidenceSplit split_incidence(const Eigen::MatrixBase<Derived>& inc) {
  IncidenceSplit out;
  out.positive = inc.array().max(0.0).matrix();
  out.negative = inc.array().min(0.0).abs().matrix();
  out.conservative =
      (inc.array() > 0.0).select(Matrix::Ones(inc.rows(), inc.cols()), inc);
  return out;
}

}  // namespace gncde
