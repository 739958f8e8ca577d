#include "gncde/graph.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace gncde {

namespace {
constexpr double kRowSumTol = 1e-12;
}

void validate_adjacency(const Matrix& adjacency) {
  if (adjacency.rows() != adjacency.cols()) {
    throw ValidationError("adjacency must be square, got " +
                          std::to_string(adjacency.rows()) + "x" +
                          std::to_string(adjacency.cols()));
  }
  if (adjacency.rows() == 0) throw ValidationError("adjacency is empty");
  for (Index i = 0; i < adjacency.rows(); ++i) {
    if (adjacency(i, i) != 0.0) {
      throw ValidationError("adjacency diagonal must be zero at vertex " +
                            std::to_string(i));
    }
    double row_sum = 0.0;
    for (Index j = 0; j < adjacency.cols(); ++j) {
      const double w = adjacency(i, j);
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw ValidationError("adjacency entry (" + std::to_string(i) + "," +
                              std::to_string(j) + ") must be finite and >= 0");
      }
      row_sum += w;
    }
    if (std::abs(row_sum - 1.0) > kRowSumTol && std::abs(row_sum) > kRowSumTol) {
      std::ostringstream msg;
      msg << "adjacency row " << i << " sums to " << row_sum
          << ", expected 1 (outgoing edges) or 0 (sink)";
      throw ValidationError(msg.str());
    }
  }
}

EdgeList edges_from_adjacency(const Matrix& adjacency, Index default_length) {
  validate_adjacency(adjacency);
  if (default_length < 1) throw ValidationError("edge length must be positive");
  EdgeList edges;
  for (Index u = 0; u < adjacency.rows(); ++u) {
    for (Index v = 0; v < adjacency.cols(); ++v) {
      if (adjacency(u, v) > 0.0) {
        edges.push_back(Edge{u, v, adjacency(u, v), default_length});
      }
    }
  }
  return edges;
}

Matrix incidence_from_edges(const EdgeList& edges, Index n_vertices) {
  Matrix inc = Matrix::Zero(n_vertices, static_cast<Index>(edges.size()));
  for (std::size_t j = 0; j < edges.size(); ++j) {
    const Edge& e = edges[j];
    if (e.tail < 0 || e.tail >= n_vertices || e.head < 0 || e.head >= n_vertices) {
      throw ValidationError("edge " + std::to_string(j) +
                            " references a vertex outside [0, " +
                            std::to_string(n_vertices) + ")");
    }
    inc(e.tail, static_cast<Index>(j)) = -e.weight;
    inc(e.head, static_cast<Index>(j)) = 1.0;
  }
  return inc;
}

Matrix edge_transition_matrix(const Matrix& incidence) {
  const IncidenceSplit parts = split_incidence(incidence);
  const Matrix conservative_pos = parts.conservative.array().max(0.0).matrix();
  Matrix a_e = parts.negative.transpose() * conservative_pos;

  // Column sums must be 1 (live head vertex) or 0 (sink), else the split
  // weights feeding the source edge's head are inconsistent.
  for (Index j = 0; j < a_e.cols(); ++j) {
    const double s = a_e.col(j).sum();
    if (std::abs(s - 1.0) > kRowSumTol && std::abs(s) > kRowSumTol) {
      std::ostringstream msg;
      msg << "edge transition column " << j << " sums to " << s
          << "; split weights at the head vertex are inconsistent";
      throw ValidationError(msg.str());
    }
  }
  return a_e;
}

Matrix edge_transition_matrix(const EdgeList& edges, Index n_vertices) {
  return edge_transition_matrix(incidence_from_edges(edges, n_vertices));
}

GraphSpec parse_graph(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("graph file is not valid JSON: ") + e.what());
  }
  if (!j.contains("n_vertices") || !j.contains("adjacency")) {
    throw ValidationError("graph file needs fields n_vertices and adjacency");
  }
  GraphSpec spec;
  spec.n_vertices = j.at("n_vertices").get<Index>();
  const auto& rows = j.at("adjacency");
  if (!rows.is_array() || static_cast<Index>(rows.size()) != spec.n_vertices) {
    throw ValidationError("adjacency must be an array of n_vertices rows");
  }
  spec.adjacency = Matrix::Zero(spec.n_vertices, spec.n_vertices);
  for (Index i = 0; i < spec.n_vertices; ++i) {
    const auto& row = rows.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Index>(row.size()) != spec.n_vertices) {
      throw ValidationError("adjacency row " + std::to_string(i) +
                            " must have n_vertices entries");
    }
    for (Index k = 0; k < spec.n_vertices; ++k) {
      spec.adjacency(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
    }
  }
  if (j.contains("edge_length")) {
    spec.edge_length = j.at("edge_length").get<Index>();
    if (*spec.edge_length < 1) throw ValidationError("edge_length must be positive");
  }
  validate_adjacency(spec.adjacency);
  return spec;
}

GraphSpec load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open graph file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_graph(buf.str());
}

std::string graph_to_json(const GraphSpec& spec) {
  nlohmann::json j;
  j["n_vertices"] = spec.n_vertices;
  auto rows = nlohmann::json::array();
  for (Index i = 0; i < spec.n_vertices; ++i) {
    auto row = nlohmann::json::array();
    for (Index k = 0; k < spec.n_vertices; ++k) row.push_back(spec.adjacency(i, k));
    rows.push_back(row);
  }
  j["adjacency"] = rows;
  if (spec.edge_length) j["edge_length"] = *spec.edge_length;
  return j.dump();
}

}  // namespace gncde
