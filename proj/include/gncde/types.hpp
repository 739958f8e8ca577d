#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace gncde {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Malformed inputs, configs, or files. Mapped to CLI exit code 3.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// NaN/Inf or other numeric failure mid-computation. CLI exit code 4.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gncde
