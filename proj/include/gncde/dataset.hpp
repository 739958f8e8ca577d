#pragma once

#include <string>
#include <vector>

#include "gncde/advection.hpp"
#include "gncde/graph.hpp"
#include "gncde/types.hpp"

#include "json.hpp"

namespace gncde {

nlohmann::json sim_to_json(const SimulationConfig& sim);
SimulationConfig sim_from_json(const nlohmann::json& j);

inline constexpr Index kInputLen = 25;
inline constexpr Index kTargetLen = 24;

/// One forecasting sample: 25 observed time points and the 24 to predict.
struct ForecastSample {
  Matrix input;   // in_len x |V|
  Matrix target;  // out_len x |V|
};

using Dataset = std::vector<ForecastSample>;

/// One sample per series: the first in_len points become the input window,
/// the next out_len the target window. Order follows the input list.
Dataset build_dataset(const std::vector<VertexSeries>& series, Index in_len = kInputLen,
                      Index out_len = kTargetLen);

/// Dataset plus the provenance needed to regenerate it.
struct DatasetFile {
  GraphSpec graph;
  SimulationConfig sim;
  Dataset samples;
};

/// Full pipeline: graph -> edges -> A_E -> simulate n_series -> window.
DatasetFile generate_dataset(const GraphSpec& graph, const SimulationConfig& sim,
                             Index n_series);

/// File layout: magic line, decimal header length, JSON header (graph spec,
/// simulation config, seed, counts, shapes), then row-major 64-bit
/// little-endian floats (input then target per sample). Round-trips are
/// bitwise lossless.
void write_dataset(const DatasetFile& data, const std::string& path);
DatasetFile read_dataset(const std::string& path);

}  // namespace gncde
