#include "gncde/train.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <thread>

#include "gncde/rng.hpp"

namespace gncde {

namespace {

// Sub-stream tags under a training seed; parameter init uses its own seed.
constexpr std::uint64_t kSplitStream = 0;
constexpr std::uint64_t kEpochStreamBase = 1;

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  adam.validate();
  for (double f : {train_frac, val_frac, test_frac}) {
    if (!(f >= 0.0 && f <= 1.0)) {
      throw ValidationError("split fractions must lie in [0, 1]");
    }
  }
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1");
  }
  if (patience && *patience < 1) throw ValidationError("patience must be at least 1");
  if (clip_norm && !(*clip_norm > 0.0)) {
    throw ValidationError("gradient clip norm must be positive");
  }
}

nlohmann::json train_config_to_json(const TrainConfig& config) {
  nlohmann::json j;
  j["epochs"] = config.epochs;
  j["batch_size"] = config.batch_size;
  j["lr"] = config.adam.lr;
  j["beta1"] = config.adam.beta1;
  j["beta2"] = config.adam.beta2;
  j["eps"] = config.adam.eps;
  j["seed"] = config.seed;
  j["train_frac"] = config.train_frac;
  j["val_frac"] = config.val_frac;
  j["test_frac"] = config.test_frac;
  j["patience"] = config.patience ? nlohmann::json(*config.patience) : nlohmann::json();
  j["clip_norm"] = config.clip_norm ? nlohmann::json(*config.clip_norm) : nlohmann::json();
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig config;
  if (j.contains("epochs")) config.epochs = j["epochs"].get<Index>();
  if (j.contains("batch_size")) config.batch_size = j["batch_size"].get<Index>();
  if (j.contains("lr")) config.adam.lr = j["lr"].get<double>();
  if (j.contains("beta1")) config.adam.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) config.adam.beta2 = j["beta2"].get<double>();
  if (j.contains("eps")) config.adam.eps = j["eps"].get<double>();
  if (j.contains("seed")) config.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("train_frac")) config.train_frac = j["train_frac"].get<double>();
  if (j.contains("val_frac")) config.val_frac = j["val_frac"].get<double>();
  if (j.contains("test_frac")) config.test_frac = j["test_frac"].get<double>();
  // explicit null clears an optional; absence keeps the default
  if (j.contains("patience")) {
    if (j["patience"].is_null()) {
      config.patience.reset();
    } else {
      config.patience = j["patience"].get<Index>();
    }
  }
  if (j.contains("clip_norm")) {
    if (j["clip_norm"].is_null()) {
      config.clip_norm.reset();
    } else {
      config.clip_norm = j["clip_norm"].get<double>();
    }
  }
  return config;
}

SplitIndices split_dataset(Index n_samples, const TrainConfig& config) {
  config.validate();
  if (n_samples < 1) throw ValidationError("cannot split an empty dataset");
  const auto n_train = static_cast<Index>(
      std::llround(config.train_frac * static_cast<double>(n_samples)));
  const auto n_val =
      static_cast<Index>(std::llround(config.val_frac * static_cast<double>(n_samples)));
  if (n_train + n_val > n_samples) {
    throw ValidationError("split fractions leave no room for the test split");
  }
  Rng rng(derive_seed(config.seed, kSplitStream));
  std::vector<Index> order = rng.sample_without_replacement(n_samples, n_samples);
  SplitIndices split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  return split;
}

void fit_normalization(ModelConfig& config, const Dataset& dataset,
                       std::span<const Index> train_indices) {
  double sum = 0.0;
  Index count = 0;
  for (Index i : train_indices) {
    const ForecastSample& s = dataset.at(static_cast<std::size_t>(i));
    sum += s.input.sum() + s.target.sum();
    count += s.input.size() + s.target.size();
  }
  if (count == 0) throw ValidationError("cannot fit normalization to an empty training split");
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (Index i : train_indices) {
    const ForecastSample& s = dataset.at(static_cast<std::size_t>(i));
    sq += (s.input.array() - mean).square().sum() + (s.target.array() - mean).square().sum();
  }
  const double stddev = std::sqrt(sq / static_cast<double>(count));
  config.x_mean = mean;
  config.x_scale = stddev > 1e-12 ? stddev : 1.0;
}

void write_metrics(std::ostream& out, std::span<const MetricRecord> records) {
  for (const MetricRecord& r : records) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["split"] = r.split;
    j["mae"] = r.mae;
    out << j.dump() << "\n";
  }
}

TrainState init_train_state(const ModelConfig& config, std::uint64_t init_seed) {
  TrainState state;
  state.params = init_params(config, init_seed);
  state.adam_state = AdamState::init(state.params);
  return state;
}

double mae(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ValidationError("mae: shapes " + std::to_string(pred.rows()) + "x" +
                          std::to_string(pred.cols()) + " and " + std::to_string(target.rows()) +
                          "x" + std::to_string(target.cols()) + " differ");
  }
  return (pred - target).array().abs().mean();
}

const ParamStore& inference_params(const TrainState& state) {
  return state.best_params.items().empty() ? state.params : state.best_params;
}

namespace {

std::vector<Matrix> gather_windows(const Dataset& dataset, std::span<const Index> indices) {
  std::vector<Matrix> windows;
  windows.reserve(indices.size());
  for (Index i : indices) windows.push_back(dataset[static_cast<std::size_t>(i)].input);
  return windows;
}

/// Targets rearranged to the prediction layout (B, |V|, target_len).
Tensor batch_targets(const Dataset& dataset, std::span<const Index> indices) {
  const auto b = static_cast<Index>(indices.size());
  const Matrix& first = dataset[static_cast<std::size_t>(indices[0])].target;
  const Index t_len = first.rows();
  const Index v = first.cols();
  Eigen::ArrayXd data(b * v * t_len);
  for (Index s = 0; s < b; ++s) {
    const Matrix& target = dataset[static_cast<std::size_t>(indices[s])].target;
    if (target.rows() != t_len || target.cols() != v) {
      throw ValidationError("dataset targets have mixed shapes");
    }
    for (Index n = 0; n < v; ++n) {
      for (Index t = 0; t < t_len; ++t) data((s * v + n) * t_len + t) = target(t, n);
    }
  }
  return Tensor::from_array({b, v, t_len}, std::move(data));
}

}  // namespace

double evaluate(const ModelConfig& config, const ParamStore& params, const Dataset& dataset,
                std::span<const Index> indices, Index batch_size) {
  if (indices.empty()) throw ValidationError("evaluate called with an empty split");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  const Index per_sample = config.n_vertices * config.target_len;
  double total = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto len = std::min(static_cast<std::size_t>(batch_size), indices.size() - start);
    const auto chunk = indices.subspan(start, len);
    const Tensor pred = forward_batch(config, params, gather_windows(dataset, chunk));
    const Tensor target = batch_targets(dataset, chunk);
    const Eigen::ArrayXd diff = (pred.array() - target.array()).abs();
    for (std::size_t s = 0; s < len; ++s) {
      total += diff.segment(static_cast<Index>(s) * per_sample, per_sample).mean();
    }
  }
  return total / static_cast<double>(indices.size());
}

std::vector<MetricRecord> train(const ModelConfig& config, TrainState& state,
                                const Dataset& dataset, const TrainConfig& train_config) {
  config.validate();
  train_config.validate();
  if (dataset.empty()) throw ValidationError("training needs a non-empty dataset");
  const SplitIndices split = split_dataset(static_cast<Index>(dataset.size()), train_config);
  std::vector<MetricRecord> records;
  if (state.epochs_done >= train_config.epochs) return records;
  if (split.train.empty()) throw ValidationError("the training split is empty");

  for (Index epoch = state.epochs_done; epoch < train_config.epochs; ++epoch) {
    Rng rng(derive_seed(train_config.seed, kEpochStreamBase + static_cast<std::uint64_t>(epoch)));
    const auto n_train = static_cast<Index>(split.train.size());
    const std::vector<Index> perm = rng.sample_without_replacement(n_train, n_train);
    std::vector<Index> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      order[i] = split.train[static_cast<std::size_t>(perm[i])];
    }

    double err_sum = 0.0;
    Index err_count = 0;
    Index batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(train_config.batch_size), ++batch_index) {
      const auto len =
          std::min(static_cast<std::size_t>(train_config.batch_size), order.size() - start);
      const auto batch = std::span<const Index>(order).subspan(start, len);
      try {
        state.params.zero_grad();
        double loss_value = 0.0;
        {
          Tape tape;
          TapeScope scope(tape);
          const Tensor pred = forward_batch(config, state.params, gather_windows(dataset, batch));
          const Tensor loss = mean(abs(sub(pred, batch_targets(dataset, batch))));
          loss_value = loss.value();
          if (!std::isfinite(loss_value)) throw NumericError("non-finite training loss");
          tape.backward(loss);
        }
        if (train_config.clip_norm) clip_grad_norm(state.params, *train_config.clip_norm);
        adam_step(state.params, state.adam_state, train_config.adam);
        err_sum += loss_value * static_cast<double>(len);
        err_count += static_cast<Index>(len);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " [epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index) + ", step " +
                           std::to_string(state.adam_state.step + 1) + "]");
      }
    }
    records.push_back({epoch, "train", err_sum / static_cast<double>(err_count)});

    if (!split.val.empty()) {
      const double val =
          evaluate(config, state.params, dataset, split.val, train_config.batch_size);
      records.push_back({epoch, "val", val});
      if (val < state.best_val_mae) {
        state.best_val_mae = val;
        state.best_epoch = epoch;
        state.best_params = state.params.clone();
      }
    }
    state.epochs_done = epoch + 1;
    if (train_config.patience && !split.val.empty() && state.best_epoch >= 0 &&
        epoch - state.best_epoch >= *train_config.patience) {
      break;
    }
  }
  return records;
}

Index epochs_to_threshold(std::span<const MetricRecord> log) {
  double best = std::numeric_limits<double>::infinity();
  bool any = false;
  for (const MetricRecord& r : log) {
    if (r.split == "val" && r.mae < best) {
      best = r.mae;
      any = true;
    }
  }
  if (!any) return -1;
  const double threshold = 1.25 * best;
  for (const MetricRecord& r : log) {
    if (r.split == "val" && r.mae <= threshold) return r.epoch;
  }
  return -1;
}

namespace {

std::string format_double(double x) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), ptr);
}

ExperimentResult run_variant(const GridConfig& grid, const Dataset& dataset,
                             const Matrix& informed, Mechanism inner, Mechanism outer,
                             std::uint64_t seed) {
  ModelConfig model = grid.model;
  model.n_vertices = grid.graph.n_vertices;
  model.inner = inner;
  model.outer = outer;
  model.a_inner.reset();
  model.a_outer.reset();
  if (inner == Mechanism::Informed) model.a_inner = informed;
  if (outer == Mechanism::Informed) model.a_outer = informed;
  if (!dataset.empty()) {
    model.input_len = dataset[0].input.rows();
    model.target_len = dataset[0].target.rows();
  }

  TrainConfig tc = grid.train;
  tc.seed = seed;
  fit_normalization(model, dataset, split_dataset(static_cast<Index>(dataset.size()), tc).train);
  model.validate();

  const auto start = std::chrono::steady_clock::now();
  TrainState state = init_train_state(model, derive_seed(seed, 1));
  ExperimentResult result;
  result.inner = mechanism_name(inner);
  result.outer = mechanism_name(outer);
  result.n_params = count_params(model);
  result.seed = seed;
  result.log = train(model, state, dataset, tc);
  const SplitIndices split = split_dataset(static_cast<Index>(dataset.size()), tc);
  result.test_mae =
      evaluate(model, inference_params(state), dataset, split.test, tc.batch_size);
  result.epochs_to_threshold = epochs_to_threshold(result.log);
  result.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

std::vector<ExperimentResult> run_grid(
    const GridConfig& config, const std::function<void(const ExperimentResult&)>& on_result) {
  validate_adjacency(config.graph.adjacency);
  config.train.validate();
  if (config.seeds.empty()) throw ValidationError("the grid needs at least one seed");

  const DatasetFile data = generate_dataset(config.graph, config.sim, config.n_series);
  const Matrix informed = informed_matrix(config.graph.adjacency);

  std::vector<std::pair<Mechanism, Mechanism>> variants = config.variants;
  if (variants.empty()) {
    variants = {
        {Mechanism::Identity, Mechanism::Identity},
        {Mechanism::Identity, Mechanism::Informed},
        {Mechanism::Informed, Mechanism::Identity},
    };
    if (config.include_informed_informed) {
      variants.emplace_back(Mechanism::Informed, Mechanism::Informed);
    }
    variants.emplace_back(Mechanism::Agc, Mechanism::Identity);
    variants.emplace_back(Mechanism::Agc, Mechanism::Informed);
  }

  std::vector<ExperimentResult> results;
  for (std::uint64_t seed : config.seeds) {
    if (!config.parallel) {
      for (const auto& [inner, outer] : variants) {
        results.push_back(run_variant(config, data.samples, informed, inner, outer, seed));
        if (on_result) on_result(results.back());
      }
      continue;
    }
    std::vector<ExperimentResult> batch(variants.size());
    std::vector<std::exception_ptr> errors(variants.size());
    std::vector<std::thread> workers;
    workers.reserve(variants.size());
    for (std::size_t i = 0; i < variants.size(); ++i) {
      workers.emplace_back([&, i] {
        try {
          batch[i] = run_variant(config, data.samples, informed, variants[i].first,
                                 variants[i].second, seed);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (std::size_t i = 0; i < variants.size(); ++i) {
      if (errors[i]) std::rethrow_exception(errors[i]);
      results.push_back(batch[i]);
      if (on_result) on_result(results.back());
    }
  }
  return results;
}

void write_results_csv(std::ostream& out, std::span<const ExperimentResult> results) {
  out << "inner,outer,mae,n_params,epochs_to_threshold,seed\n";
  for (const ExperimentResult& r : results) {
    out << r.inner << "," << r.outer << "," << format_double(r.test_mae) << "," << r.n_params
        << "," << r.epochs_to_threshold << "," << r.seed << "\n";
  }
}

void write_results_table(std::ostream& out, std::span<const ExperimentResult> results) {
  const std::array<std::string, 3> inners{"identity", "informed", "agc"};
  const std::array<std::string, 2> outers{"identity", "informed"};
  out << std::left << std::setw(14) << "inner \\ outer";
  for (const auto& o : outers) out << std::right << std::setw(12) << o;
  out << "\n";
  for (const auto& in : inners) {
    bool row_has_data = false;
    std::array<double, 2> sums{0.0, 0.0};
    std::array<Index, 2> counts{0, 0};
    for (const ExperimentResult& r : results) {
      if (r.inner != in) continue;
      for (std::size_t c = 0; c < outers.size(); ++c) {
        if (r.outer == outers[c]) {
          sums[c] += r.test_mae;
          counts[c] += 1;
          row_has_data = true;
        }
      }
    }
    if (!row_has_data) continue;
    out << std::left << std::setw(14) << in;
    for (std::size_t c = 0; c < outers.size(); ++c) {
      if (counts[c] == 0) {
        out << std::right << std::setw(12) << "-";
      } else {
        out << std::right << std::setw(12) << std::fixed << std::setprecision(4)
            << sums[c] / static_cast<double>(counts[c]);
        out.unsetf(std::ios_base::floatfield);
      }
    }
    out << "\n";
  }
}

}  // namespace gncde
