#pragma once

#include <iosfwd>
#include <string>

#include "gncde/train.hpp"

namespace gncde {

inline constexpr const char* kCheckpointMagic = "GNCDECP1";

/// A training run frozen mid-flight: configuration plus every mutable
/// quantity of TrainState. Round-trips bitwise.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  TrainState state;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gncde
