#include "gncde/dataset.hpp"

#include <fstream>

#include <json.hpp>

#include "gncde/serialize.hpp"

namespace gncde {

namespace {
constexpr const char* kMagic = "GNCDEDS1";
}  // namespace

nlohmann::json sim_to_json(const SimulationConfig& sim) {
  return {
      {"segments_per_edge", sim.segments_per_edge},
      {"shift_per_step", sim.shift_per_step},
      {"n_steps", sim.n_steps},
      {"init_count", sim.init_count},
      {"init_low", sim.init_low},
      {"init_high", sim.init_high},
      {"seed", sim.seed},
  };
}

SimulationConfig sim_from_json(const nlohmann::json& j) {
  SimulationConfig sim;
  if (j.contains("segments_per_edge")) sim.segments_per_edge = j["segments_per_edge"].get<Index>();
  if (j.contains("shift_per_step")) sim.shift_per_step = j["shift_per_step"].get<Index>();
  if (j.contains("n_steps")) sim.n_steps = j["n_steps"].get<Index>();
  if (j.contains("init_count")) sim.init_count = j["init_count"].get<Index>();
  if (j.contains("init_low")) sim.init_low = j["init_low"].get<std::int64_t>();
  if (j.contains("init_high")) sim.init_high = j["init_high"].get<std::int64_t>();
  if (j.contains("seed")) sim.seed = j["seed"].get<std::uint64_t>();
  return sim;
}

Dataset build_dataset(const std::vector<VertexSeries>& series, Index in_len, Index out_len) {
  if (in_len < 1 || out_len < 1) throw ValidationError("window lengths must be positive");
  Dataset out;
  out.reserve(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const VertexSeries& s = series[i];
    if (s.rows() < in_len + out_len) {
      throw ValidationError("series " + std::to_string(i) + " has " +
                            std::to_string(s.rows()) + " points, need " +
                            std::to_string(in_len + out_len));
    }
    ForecastSample sample;
    sample.input = s.topRows(in_len);
    sample.target = s.middleRows(in_len, out_len);
    out.push_back(std::move(sample));
  }
  return out;
}

DatasetFile generate_dataset(const GraphSpec& graph, const SimulationConfig& sim,
                             Index n_series) {
  SimulationConfig effective = sim;
  if (graph.edge_length) effective.segments_per_edge = *graph.edge_length;
  effective.validate();

  const EdgeList edges =
      edges_from_adjacency(graph.adjacency, effective.segments_per_edge);
  const Matrix a_e = edge_transition_matrix(edges, graph.n_vertices);
  const auto series = simulate_batch(edges, a_e, graph.n_vertices, effective, n_series);

  DatasetFile out;
  out.graph = graph;
  out.sim = effective;
  out.samples = build_dataset(series);
  return out;
}

void write_dataset(const DatasetFile& data, const std::string& path) {
  const Index in_len = data.samples.empty() ? kInputLen : data.samples.front().input.rows();
  const Index out_len = data.samples.empty() ? kTargetLen : data.samples.front().target.rows();
  const Index n_vertices = data.graph.n_vertices;

  nlohmann::json header;
  header["format"] = kMagic;
  header["graph"] = nlohmann::json::parse(graph_to_json(data.graph));
  header["sim"] = sim_to_json(data.sim);
  header["n_samples"] = data.samples.size();
  header["input_shape"] = {in_len, n_vertices};
  header["target_shape"] = {out_len, n_vertices};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  write_framed_header(out, kMagic, header.dump());
  for (const ForecastSample& s : data.samples) {
    if (s.input.rows() != in_len || s.input.cols() != n_vertices ||
        s.target.rows() != out_len || s.target.cols() != n_vertices) {
      throw ValidationError("inconsistent sample shapes in dataset");
    }
    write_matrix_le(out, s.input);
    write_matrix_le(out, s.target);
  }
  if (!out) throw ValidationError("write failed: " + path);
}

DatasetFile read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset: " + path);
  const std::string header_text = read_framed_header(in, kMagic, "dataset " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("dataset header is not valid JSON: " + std::string(e.what()));
  }

  DatasetFile data;
  try {
    data.graph = parse_graph(header.at("graph").dump());
    data.sim = sim_from_json(header.at("sim"));
    const auto n_samples = header.at("n_samples").get<std::size_t>();
    const auto in_shape = header.at("input_shape").get<std::vector<Index>>();
    const auto out_shape = header.at("target_shape").get<std::vector<Index>>();
    if (in_shape.size() != 2 || out_shape.size() != 2 || in_shape[1] != out_shape[1] ||
        in_shape[1] != data.graph.n_vertices) {
      throw ValidationError("dataset header shapes are inconsistent");
    }
    data.samples.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
      ForecastSample s;
      s.input = read_matrix_le(in, in_shape[0], in_shape[1]);
      s.target = read_matrix_le(in, out_shape[0], out_shape[1]);
      data.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("dataset header missing fields: " + std::string(e.what()));
  }

  // The payload must end exactly where the header said it would.
  char extra;
  if (in.read(&extra, 1)) throw ValidationError("dataset has trailing bytes: " + path);
  return data;
}

}  // namespace gncde
