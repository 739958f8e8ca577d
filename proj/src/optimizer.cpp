#include "gncde/optimizer.hpp"

#include <cmath>

namespace gncde {

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ValidationError("adam learning rate must be positive and finite");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("adam epsilon must be positive");
}

AdamState AdamState::init(const ParamStore& params) {
  AdamState state;
  state.m.reserve(params.items().size());
  state.v.reserve(params.items().size());
  for (const auto& [name, p] : params.items()) {
    state.m.push_back(Eigen::ArrayXd::Zero(p.size()));
    state.v.push_back(Eigen::ArrayXd::Zero(p.size()));
  }
  return state;
}

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& config) {
  config.validate();
  if (state.m.size() != params.items().size() || state.v.size() != params.items().size()) {
    throw ValidationError("adam state covers " + std::to_string(state.m.size()) +
                          " parameters but the store has " +
                          std::to_string(params.items().size()));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.items().size(); ++i) {
    auto& [name, p] = params.items()[i];
    const Eigen::ArrayXd& g = p.grad();
    if (!g.isFinite().all()) {
      throw NumericError("non-finite gradient in parameter '" + name + "' at adam step " +
                         std::to_string(state.step));
    }
    if (state.m[i].size() != g.size()) {
      throw ValidationError("adam state for parameter '" + name + "' has size " +
                            std::to_string(state.m[i].size()) + ", expected " +
                            std::to_string(g.size()));
    }
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g.square();
    const Eigen::ArrayXd m_hat = state.m[i] / bc1;
    const Eigen::ArrayXd v_hat = state.v[i] / bc2;
    p.mutable_array() -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
  }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ValidationError("gradient clip norm must be positive");
  double sq = 0.0;
  for (const auto& [name, p] : params.items()) {
    const Eigen::ArrayXd& g = p.grad();
    if (!g.isFinite().all()) {
      throw NumericError("non-finite gradient in parameter '" + name + "' before clipping");
    }
    sq += g.square().sum();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, p] : params.items()) p.mutable_grad() *= factor;
  }
  return norm;
}

GradCheckResult grad_check(const std::function<Tensor()>& build_loss, ParamStore& params,
                           double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("grad_check epsilon must be positive");
  params.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = build_loss();
    tape.backward(loss);
  }
  GradCheckResult result;
  for (auto& [name, p] : params.items()) {
    Eigen::ArrayXd analytic = p.grad();
    Eigen::ArrayXd& values = p.mutable_array();
    for (Index j = 0; j < values.size(); ++j) {
      const double saved = values(j);
      values(j) = saved + epsilon;
      const double up = build_loss().value();
      values(j) = saved - epsilon;
      const double down = build_loss().value();
      values(j) = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max({std::abs(analytic(j)), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic(j) - numeric) / denom;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = name;
        result.worst_index = j;
        result.analytic = analytic(j);
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace gncde
