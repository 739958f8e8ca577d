#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gncde/dataset.hpp"
#include "gncde/graph.hpp"

using namespace gncde;

namespace {

GraphSpec fixture_graph() {
  GraphSpec spec;
  spec.n_vertices = 4;
  spec.adjacency = Matrix::Zero(4, 4);
  spec.adjacency(0, 1) = 1.0;
  spec.adjacency(1, 2) = 0.3;
  spec.adjacency(1, 3) = 0.7;
  spec.adjacency(2, 3) = 1.0;
  spec.adjacency(3, 0) = 1.0;
  return spec;
}

std::string temp_path(const std::string& name) {
  return std::string("gncde_test_") + name;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

}  // namespace

TEST_CASE("windowing slices input and target out of each series") {
  Matrix series(6, 2);
  for (Index t = 0; t < 6; ++t) {
    series(t, 0) = static_cast<double>(t);
    series(t, 1) = 10.0 + static_cast<double>(t);
  }
  const Dataset data = build_dataset({series}, 4, 2);
  REQUIRE(data.size() == 1);
  CHECK(data[0].input.rows() == 4);
  CHECK(data[0].target.rows() == 2);
  CHECK(data[0].input(0, 0) == 0.0);
  CHECK(data[0].input(3, 1) == 13.0);
  CHECK(data[0].target(0, 0) == 4.0);
  CHECK(data[0].target(1, 1) == 15.0);
}

TEST_CASE("windowing rejects short series") {
  CHECK_THROWS_AS(build_dataset({Matrix::Zero(48, 4)}), ValidationError);
  CHECK_THROWS_AS(build_dataset({Matrix::Zero(10, 2)}, 8, 3), ValidationError);
  CHECK_THROWS_AS(build_dataset({Matrix::Zero(10, 2)}, 0, 3), ValidationError);
}

TEST_CASE("generated datasets are deterministic in the seed") {
  const GraphSpec graph = fixture_graph();
  SimulationConfig sim;
  sim.seed = 31;
  const DatasetFile a = generate_dataset(graph, sim, 3);
  const DatasetFile b = generate_dataset(graph, sim, 3);
  REQUIRE(a.samples.size() == 3);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK((a.samples[i].input.array() == b.samples[i].input.array()).all());
    CHECK((a.samples[i].target.array() == b.samples[i].target.array()).all());
  }

  sim.seed = 32;
  const DatasetFile c = generate_dataset(graph, sim, 3);
  CHECK((a.samples[0].input.array() != c.samples[0].input.array()).any());
}

TEST_CASE("graph edge_length overrides the simulation segment count") {
  GraphSpec graph = fixture_graph();
  graph.edge_length = 60;
  SimulationConfig sim;
  sim.init_count = 30;
  const DatasetFile data = generate_dataset(graph, sim, 1);
  CHECK(data.sim.segments_per_edge == 60);
}

TEST_CASE("dataset files round-trip bitwise") {
  const GraphSpec graph = fixture_graph();
  SimulationConfig sim;
  sim.seed = 77;
  const DatasetFile data = generate_dataset(graph, sim, 4);
  const std::string path = temp_path("roundtrip.bin");

  write_dataset(data, path);
  const DatasetFile back = read_dataset(path);
  CHECK(back.graph.n_vertices == graph.n_vertices);
  CHECK((back.graph.adjacency.array() == graph.adjacency.array()).all());
  CHECK(back.sim.seed == sim.seed);
  REQUIRE(back.samples.size() == data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    CHECK((back.samples[i].input.array() == data.samples[i].input.array()).all());
    CHECK((back.samples[i].target.array() == data.samples[i].target.array()).all());
  }

  // Writing the loaded copy reproduces the file byte for byte.
  const std::string copy = temp_path("roundtrip_copy.bin");
  write_dataset(back, copy);
  CHECK(read_file(path) == read_file(copy));
  std::remove(path.c_str());
  std::remove(copy.c_str());
}

TEST_CASE("reader rejects tampered files") {
  const GraphSpec graph = fixture_graph();
  SimulationConfig sim;
  const DatasetFile data = generate_dataset(graph, sim, 2);
  const std::string path = temp_path("tampered.bin");
  write_dataset(data, path);
  const std::string good = read_file(path);

  auto write_raw = [&](const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };

  SUBCASE("trailing bytes") {
    write_raw(good + "x");
    CHECK_THROWS_AS(read_dataset(path), ValidationError);
  }
  SUBCASE("truncated payload") {
    write_raw(good.substr(0, good.size() - 9));
    CHECK_THROWS_AS(read_dataset(path), ValidationError);
  }
  SUBCASE("wrong magic") {
    std::string bad = good;
    bad[0] = 'X';
    write_raw(bad);
    CHECK_THROWS_AS(read_dataset(path), ValidationError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_dataset("no_such_file.bin"), ValidationError);
  }
  std::remove(path.c_str());
}

TEST_CASE("simulation config JSON carries every field") {
  SimulationConfig sim;
  sim.segments_per_edge = 42;
  sim.shift_per_step = 3;
  sim.n_steps = 12;
  sim.init_count = 7;
  sim.init_low = -2;
  sim.init_high = 9;
  sim.seed = 1234567890123456789ULL;
  const SimulationConfig back = sim_from_json(sim_to_json(sim));
  CHECK(back.segments_per_edge == 42);
  CHECK(back.shift_per_step == 3);
  CHECK(back.n_steps == 12);
  CHECK(back.init_count == 7);
  CHECK(back.init_low == -2);
  CHECK(back.init_high == 9);
  CHECK(back.seed == 1234567890123456789ULL);
}
