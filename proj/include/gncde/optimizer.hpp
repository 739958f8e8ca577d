#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gncde/tensor.hpp"
#include "gncde/types.hpp"

namespace gncde {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// First/second-moment buffers, one pair per parameter, in ParamStore order.
struct AdamState {
  std::vector<Eigen::ArrayXd> m;
  std::vector<Eigen::ArrayXd> v;
  std::int64_t step = 0;

  static AdamState init(const ParamStore& params);
};

/// One bias-corrected Adam update from the gradients currently stored in
/// `params`. Throws NumericError if any gradient is not finite.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& config);

/// Scales all gradients by max_norm / ||g|| when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
double clip_grad_norm(ParamStore& params, double max_norm);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central-difference check of d loss / d params against tape gradients.
/// `build_loss` maps the current parameter values to a scalar loss tensor;
/// it runs once under a fresh tape for the analytic pass and twice per
/// coordinate (no tape) for the numeric pass. Relative error uses
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const std::function<Tensor()>& build_loss, ParamStore& params,
                           double epsilon = 1e-5);

}  // namespace gncde
