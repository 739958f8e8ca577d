#include <doctest.h>

#include <fstream>
#include <set>

#include "gncde/graph.hpp"
#include "gncde/rng.hpp"

using namespace gncde;

namespace {

/// Independent construction of the edge transition matrix straight from the
/// definition: entry (i, j) is the split weight of edge i when edge i
/// continues edge j, i.e. when tail(e_i) == head(e_j).
Matrix transition_oracle(const EdgeList& edges) {
  const auto n = static_cast<Index>(edges.size());
  Matrix a = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (edges[static_cast<std::size_t>(i)].tail == edges[static_cast<std::size_t>(j)].head) {
        a(i, j) = edges[static_cast<std::size_t>(i)].weight;
      }
    }
  }
  return a;
}

Matrix fixture_adjacency_4() {
  Matrix a = Matrix::Zero(4, 4);
  a(0, 1) = 1.0;
  a(1, 2) = 0.3;
  a(1, 3) = 0.7;
  a(2, 3) = 1.0;
  a(3, 0) = 1.0;
  return a;
}

Matrix fixture_adjacency_10() {
  Matrix a = Matrix::Zero(10, 10);
  for (Index k = 0; k + 1 < 10; ++k) a(k, k + 1) = 1.0;
  return a;
}

/// Random row-stochastic adjacency with some sink rows; always yields at
/// least one edge.
Matrix random_adjacency(Rng& rng, Index n) {
  while (true) {
    Matrix a = Matrix::Zero(n, n);
    bool any_edge = false;
    for (Index v = 0; v < n; ++v) {
      const Index out_degree = rng.uniform_int(0, std::min<Index>(3, n - 1));
      if (out_degree == 0) continue;
      std::vector<Index> heads;
      for (Index u : rng.sample_without_replacement(n, out_degree + 1)) {
        if (u != v && static_cast<Index>(heads.size()) < out_degree) heads.push_back(u);
      }
      if (heads.empty()) continue;
      double total = 0.0;
      std::vector<double> w(heads.size());
      for (auto& x : w) {
        x = rng.uniform(0.1, 1.0);
        total += x;
      }
      for (std::size_t k = 0; k < heads.size(); ++k) a(v, heads[k]) = w[k] / total;
      // renormalize exactly: force the row sum onto the last entry
      a(v, heads.back()) += 1.0 - a.row(v).sum();
      any_edge = true;
    }
    if (any_edge) return a;
  }
}

}  // namespace

TEST_CASE("adjacency validation accepts the fixtures") {
  CHECK_NOTHROW(validate_adjacency(fixture_adjacency_4()));
  CHECK_NOTHROW(validate_adjacency(fixture_adjacency_10()));
}

TEST_CASE("adjacency validation rejects malformed matrices") {
  CHECK_THROWS_AS(validate_adjacency(Matrix::Zero(2, 3)), ValidationError);

  Matrix negative = fixture_adjacency_4();
  negative(0, 1) = -1.0;
  CHECK_THROWS_AS(validate_adjacency(negative), ValidationError);

  Matrix self_loop = fixture_adjacency_4();
  self_loop(0, 0) = 0.5;
  self_loop(0, 1) = 0.5;
  CHECK_THROWS_AS(validate_adjacency(self_loop), ValidationError);

  Matrix bad_row = fixture_adjacency_4();
  bad_row(1, 2) = 0.4;  // row 1 now sums to 1.1
  CHECK_THROWS_AS(validate_adjacency(bad_row), ValidationError);

  CHECK_THROWS_AS(validate_adjacency(Matrix::Zero(0, 0)), ValidationError);
}

TEST_CASE("edges enumerate in row-major order") {
  const EdgeList edges = edges_from_adjacency(fixture_adjacency_4(), 50);
  REQUIRE(edges.size() == 5);
  CHECK(edges[0] == Edge{0, 1, 1.0, 50});
  CHECK(edges[1] == Edge{1, 2, 0.3, 50});
  CHECK(edges[2] == Edge{1, 3, 0.7, 50});
  CHECK(edges[3] == Edge{2, 3, 1.0, 50});
  CHECK(edges[4] == Edge{3, 0, 1.0, 50});
}

TEST_CASE("incidence columns hold -weight at the tail and +1 at the head") {
  const EdgeList edges = edges_from_adjacency(fixture_adjacency_4());
  const Matrix inc = incidence_from_edges(edges, 4);
  REQUIRE(inc.rows() == 4);
  REQUIRE(inc.cols() == 5);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto col = static_cast<Index>(e);
    for (Index v = 0; v < 4; ++v) {
      if (v == edges[e].tail) {
        CHECK(inc(v, col) == -edges[e].weight);
      } else if (v == edges[e].head) {
        CHECK(inc(v, col) == 1.0);
      } else {
        CHECK(inc(v, col) == 0.0);
      }
    }
  }
}

TEST_CASE("incidence split satisfies its defining identities") {
  const EdgeList edges = edges_from_adjacency(fixture_adjacency_4());
  const Matrix inc = incidence_from_edges(edges, 4);
  const IncidenceSplit parts = split_incidence(inc);
  CHECK((parts.positive - parts.negative - inc).cwiseAbs().maxCoeff() == 0.0);
  for (Index r = 0; r < inc.rows(); ++r) {
    for (Index c = 0; c < inc.cols(); ++c) {
      CHECK(parts.positive(r, c) >= 0.0);
      CHECK(parts.negative(r, c) >= 0.0);
      if (inc(r, c) > 0.0) {
        CHECK(parts.conservative(r, c) == 1.0);
      } else {
        CHECK(parts.conservative(r, c) == inc(r, c));
      }
    }
  }
}

TEST_CASE("edge transition matrix matches the brute-force oracle exactly") {
  Rng rng(42);
  std::vector<Matrix> cases = {fixture_adjacency_4(), fixture_adjacency_10()};
  for (int i = 0; i < 8; ++i) cases.push_back(random_adjacency(rng, rng.uniform_int(2, 8)));

  for (const Matrix& adjacency : cases) {
    CAPTURE(adjacency);
    validate_adjacency(adjacency);
    const EdgeList edges = edges_from_adjacency(adjacency);
    const Matrix a_e = edge_transition_matrix(edges, adjacency.rows());
    const Matrix oracle = transition_oracle(edges);
    REQUIRE(a_e.rows() == oracle.rows());
    CHECK((a_e.array() == oracle.array()).all());
  }
}

TEST_CASE("transition columns sum to one, or zero when the source edge hits a sink") {
  Rng rng(7);
  for (int i = 0; i < 6; ++i) {
    const Matrix adjacency = random_adjacency(rng, rng.uniform_int(3, 8));
    const EdgeList edges = edges_from_adjacency(adjacency);
    const Matrix a_e = edge_transition_matrix(edges, adjacency.rows());
    for (Index j = 0; j < a_e.cols(); ++j) {
      const Index head = edges[static_cast<std::size_t>(j)].head;
      const bool sink = adjacency.row(head).sum() == 0.0;
      const double sum = a_e.col(j).sum();
      if (sink) {
        CHECK(sum == 0.0);
      } else {
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("fixture files parse to the expected matrices") {
  const GraphSpec g4 = load_graph(std::string(GNCDE_DATA_DIR) + "/g4.json");
  CHECK(g4.n_vertices == 4);
  CHECK((g4.adjacency.array() == fixture_adjacency_4().array()).all());

  const GraphSpec g10 = load_graph(std::string(GNCDE_DATA_DIR) + "/g10.json");
  CHECK(g10.n_vertices == 10);
  CHECK((g10.adjacency.array() == fixture_adjacency_10().array()).all());
  CHECK(edges_from_adjacency(g10.adjacency).size() == 9);
}

TEST_CASE("graph JSON round-trips") {
  GraphSpec spec;
  spec.n_vertices = 4;
  spec.adjacency = fixture_adjacency_4();
  spec.edge_length = 25;
  const GraphSpec back = parse_graph(graph_to_json(spec));
  CHECK(back.n_vertices == spec.n_vertices);
  CHECK((back.adjacency.array() == spec.adjacency.array()).all());
  REQUIRE(back.edge_length.has_value());
  CHECK(*back.edge_length == 25);
}

TEST_CASE("graph parsing rejects malformed input") {
  CHECK_THROWS_AS(parse_graph("not json"), ValidationError);
  CHECK_THROWS_AS(parse_graph(R"({"n_vertices": 2})"), ValidationError);
  CHECK_THROWS_AS(parse_graph(R"({"n_vertices": 2, "adjacency": [[0, 1]]})"), ValidationError);
  CHECK_THROWS_AS(
      parse_graph(R"({"n_vertices": 2, "adjacency": [[0, 1], [1, 0]], "edge_length": 0})"),
      ValidationError);
  CHECK_THROWS_AS(load_graph("/nonexistent/path.json"), ValidationError);
}
