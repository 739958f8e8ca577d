#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gncde/dataset.hpp"
#include "gncde/graph.hpp"
#include "gncde/model.hpp"
#include "gncde/optimizer.hpp"
#include "gncde/tensor.hpp"

namespace gncde {

struct TrainConfig {
  Index epochs = 30;
  Index batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 0;
  double train_frac = 0.8;
  double val_frac = 0.1;
  double test_frac = 0.1;
  std::optional<Index> patience;           // early stop on stalled val MAE
  std::optional<double> clip_norm = 10.0;  // global gradient norm

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct SplitIndices {
  std::vector<Index> train;
  std::vector<Index> val;
  std::vector<Index> test;
};

/// Deterministic partition of sample indices: a seeded shuffle of 0..n-1
/// cut at the rounded fraction boundaries.
SplitIndices split_dataset(Index n_samples, const TrainConfig& config);

/// Fits the model's input standardization (x_mean, x_scale) to every value
/// observed in the chosen training samples, inputs and targets alike. The
/// scale falls back to 1 when the data is constant.
void fit_normalization(ModelConfig& config, const Dataset& dataset,
                       std::span<const Index> train_indices);

struct MetricRecord {
  Index epoch = 0;
  std::string split;  // "train" or "val"
  double mae = 0.0;
};

/// One JSON object per line: {"epoch":…,"split":"…","mae":…}.
void write_metrics(std::ostream& out, std::span<const MetricRecord> records);

/// Everything training mutates; checkpoints persist exactly this plus the
/// configs, so save/resume reproduces an uninterrupted run bitwise.
struct TrainState {
  ParamStore params;
  AdamState adam_state;
  Index epochs_done = 0;
  double best_val_mae = std::numeric_limits<double>::infinity();
  Index best_epoch = -1;
  ParamStore best_params;  // empty until the first validation pass
};

TrainState init_train_state(const ModelConfig& config, std::uint64_t init_seed);

double mae(const Matrix& pred, const Matrix& target);

/// Mean of per-sample MAE over `indices`, iterated in the given order.
double evaluate(const ModelConfig& config, const ParamStore& params, const Dataset& dataset,
                std::span<const Index> indices, Index batch_size);

/// Advances `state` from state.epochs_done to config.epochs (minibatch MAE
/// training, per-epoch validation, best-parameter tracking) and returns the
/// metric records produced by this call. Aborts with NumericError naming
/// epoch/batch/step if the loss or a gradient turns non-finite.
std::vector<MetricRecord> train(const ModelConfig& config, TrainState& state,
                                const Dataset& dataset, const TrainConfig& train_config);

/// Parameters to use for inference: best-validation snapshot if one exists,
/// otherwise the current ones.
const ParamStore& inference_params(const TrainState& state);

struct ExperimentResult {
  std::string inner;
  std::string outer;
  double test_mae = 0.0;
  Index n_params = 0;
  Index epochs_to_threshold = 0;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
  std::vector<MetricRecord> log;
};

/// First epoch whose validation MAE is within 1.25x of the best validation
/// MAE in the log — the convergence-speed proxy.
Index epochs_to_threshold(std::span<const MetricRecord> log);

struct GridConfig {
  GraphSpec graph;
  SimulationConfig sim;
  Index n_series = 500;
  ModelConfig model;  // mechanisms and informed matrices are set per variant
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {0};
  bool include_informed_informed = false;
  bool parallel = false;  // one thread per variant within each seed
  // Optional subset of (inner, outer) cells; empty runs the standard grid.
  std::vector<std::pair<Mechanism, Mechanism>> variants;
};

/// The Identity/Informed/AGC grid: trains each variant from seed-identical
/// initializations on one shared dataset. `on_result` (optional) runs after
/// each variant so partial results survive a later abort.
std::vector<ExperimentResult> run_grid(
    const GridConfig& config,
    const std::function<void(const ExperimentResult&)>& on_result = {});

/// CSV with header inner,outer,mae,n_params,epochs_to_threshold,seed.
void write_results_csv(std::ostream& out, std::span<const ExperimentResult> results);

/// Fixed-width table in the inner x outer layout for terminal reading.
void write_results_table(std::ostream& out, std::span<const ExperimentResult> results);

}  // namespace gncde
