#include "gncde/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "gncde/serialize.hpp"

namespace gncde {

namespace {

void write_store_payload(std::ostream& out, const ParamStore& store) {
  for (const auto& [name, p] : store.items()) {
    write_doubles_le(out, p.array().data(), static_cast<std::size_t>(p.size()));
  }
}

ParamStore read_store_payload(std::istream& in,
                              const std::vector<std::pair<std::string, Shape>>& specs) {
  ParamStore store;
  for (const auto& [name, shape] : specs) {
    Eigen::ArrayXd data(shape_size(shape));
    read_doubles_le(in, data.data(), static_cast<std::size_t>(data.size()));
    store.add(name, Tensor::from_array(shape, std::move(data)));
  }
  return store;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  checkpoint.model.validate();
  const auto specs = param_shapes(checkpoint.model);
  if (specs.size() != checkpoint.state.params.items().size()) {
    throw ValidationError("checkpoint has " +
                          std::to_string(checkpoint.state.params.items().size()) +
                          " parameters, the model configuration defines " +
                          std::to_string(specs.size()));
  }
  nlohmann::json header;
  header["format"] = kCheckpointMagic;
  header["model"] = model_config_to_json(checkpoint.model);
  header["train"] = train_config_to_json(checkpoint.train);
  auto params = nlohmann::json::array();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& [name, p] = checkpoint.state.params.items()[i];
    if (name != specs[i].first || p.shape() != specs[i].second) {
      throw ValidationError("checkpoint parameter '" + name + "' with shape " +
                            shape_str(p.shape()) + " does not match the expected '" +
                            specs[i].first + "' " + shape_str(specs[i].second));
    }
    params.push_back({{"name", name}, {"shape", p.shape()}});
  }
  header["params"] = std::move(params);
  header["adam_step"] = checkpoint.state.adam_state.step;
  header["epochs_done"] = checkpoint.state.epochs_done;
  header["best_epoch"] = checkpoint.state.best_epoch;
  const bool has_best = !checkpoint.state.best_params.items().empty();
  header["has_best"] = has_best;
  if (has_best) header["best_val_mae"] = checkpoint.state.best_val_mae;

  write_framed_header(out, kCheckpointMagic, header.dump());
  write_store_payload(out, checkpoint.state.params);
  for (const auto& m : checkpoint.state.adam_state.m) {
    write_doubles_le(out, m.data(), static_cast<std::size_t>(m.size()));
  }
  for (const auto& v : checkpoint.state.adam_state.v) {
    write_doubles_le(out, v.data(), static_cast<std::size_t>(v.size()));
  }
  if (has_best) write_store_payload(out, checkpoint.state.best_params);
  if (!out) throw ValidationError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  const std::string header_text = read_framed_header(in, kCheckpointMagic, "checkpoint");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint checkpoint;
  try {
    checkpoint.model = model_config_from_json(header.at("model"));
    checkpoint.train = train_config_from_json(header.at("train"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint header is incomplete: ") + e.what());
  }
  checkpoint.model.validate();

  const auto expected = param_shapes(checkpoint.model);
  const auto& stored = header.at("params");
  if (stored.size() != expected.size()) {
    throw ValidationError("checkpoint lists " + std::to_string(stored.size()) +
                          " parameters, the model configuration defines " +
                          std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto name = stored[i].at("name").get<std::string>();
    const auto shape = stored[i].at("shape").get<Shape>();
    if (name != expected[i].first || shape != expected[i].second) {
      throw ValidationError("checkpoint parameter '" + name + "' with shape " +
                            shape_str(shape) + " does not match the expected '" +
                            expected[i].first + "' " + shape_str(expected[i].second));
    }
  }

  checkpoint.state.params = read_store_payload(in, expected);
  checkpoint.state.adam_state = AdamState::init(checkpoint.state.params);
  checkpoint.state.adam_state.step = header.at("adam_step").get<std::int64_t>();
  for (auto& m : checkpoint.state.adam_state.m) {
    read_doubles_le(in, m.data(), static_cast<std::size_t>(m.size()));
  }
  for (auto& v : checkpoint.state.adam_state.v) {
    read_doubles_le(in, v.data(), static_cast<std::size_t>(v.size()));
  }
  checkpoint.state.epochs_done = header.at("epochs_done").get<Index>();
  checkpoint.state.best_epoch = header.at("best_epoch").get<Index>();
  if (header.at("has_best").get<bool>()) {
    checkpoint.state.best_val_mae = header.at("best_val_mae").get<double>();
    checkpoint.state.best_params = read_store_payload(in, expected);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ValidationError("checkpoint has trailing bytes after the payload");
  }
  return checkpoint;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  write_checkpoint(out, checkpoint);
  if (!out.flush()) throw ValidationError("failed writing checkpoint to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace gncde
