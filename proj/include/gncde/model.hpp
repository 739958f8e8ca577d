#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gncde/spline.hpp"
#include "gncde/tensor.hpp"
#include "gncde/types.hpp"

#include "json.hpp"

namespace gncde {

enum class Mechanism {
  Identity,
  Informed,
  Agc,
};

enum class Activation {
  Tanh,
  Identity,
};

std::string mechanism_name(Mechanism m);
Mechanism mechanism_from_name(const std::string& name);
std::string interp_name(Interp s);
Interp interp_from_name(const std::string& name);
std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct InformedOptions {
  enum class Orientation { Transpose, Forward };
  enum class Weighting { Weighted, Binary, Symmetrized };
  Orientation orientation = Orientation::Transpose;
  Weighting weighting = Weighting::Weighted;
  bool self_loop = true;
};

/// Vertex mixing matrix derived from the graph adjacency. The default
/// (transposed, weighted, with self-loops) lets each vertex read from its
/// upstream in-neighbors and keep its own signal.
Matrix informed_matrix(const Matrix& adjacency, const InformedOptions& options = {});

struct ModelConfig {
  Index n_vertices = 0;
  Index d_h = 16;
  Index d_z = 16;
  Index n_layers = 3;     // affine layers per vector-field MLP (2 or 3)
  Index hidden_width = 16;
  Mechanism inner = Mechanism::Identity;
  Mechanism outer = Mechanism::Identity;
  Index agc_embed_dim = 8;
  std::optional<Matrix> a_inner;  // required iff inner == Informed
  std::optional<Matrix> a_outer;  // required iff outer == Informed
  Index substeps = 2;             // solver steps per knot interval
  Interp interp = Interp::NaturalCubic;
  Activation activation = Activation::Tanh;
  Index input_len = 25;
  Index target_len = 24;
  // Input standardization, usually fit on the training split: observations
  // enter the solver as (x - x_mean) / x_scale and predictions are mapped
  // back to the raw scale, so losses and metrics stay in data units.
  double x_mean = 0.0;
  double x_scale = 1.0;

  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Exact trainable-scalar count, written out as arithmetic so tests can
/// compare it against enumerating an initialized parameter store.
Index count_params(const ModelConfig& config);

/// Parameter names and shapes in their fixed registration order.
std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& config);

/// Deterministic uniform (Glorot-style) initialization; biases start at
/// zero. Parameter order is fixed and shared with checkpoints.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

// ---- building blocks (batched: leading axis is the minibatch) -------------

/// One control path per sample; channels are the graph vertices. The time
/// channel is implicit (unit slope) and handled by the callers below.
std::vector<ControlPath> build_control_paths(std::span<const Matrix> windows, Interp scheme);

/// Control values at t=0 as a (B, |V|, 2) tensor with channels [time, obs].
Tensor batch_x0(std::span<const ControlPath> paths);

/// Control derivative at time t evaluated inside `segment`, shaped
/// (B, |V|, 2); the time channel derivative is 1.
Tensor batch_dxdt(std::span<const ControlPath> paths, double t, Index segment);

/// Per-vertex MLP for the temporal field; (B, |V|, d_h) -> (B, |V|, d_h, 2).
/// No cross-vertex mixing.
Tensor vector_field_f(const ModelConfig& config, const ParamStore& params, const Tensor& h);

/// Per-vertex MLP for the spatial field with the inner mechanism applied to
/// the input of the final affine layer; (B, |V|, d_z) -> (B, |V|, d_z, d_h).
Tensor vector_field_g(const ModelConfig& config, const ParamStore& params, const Tensor& z);

/// Adaptive graph convolution: (I + row-softmax(relu(E Eᵀ))) · X · W + b.
Tensor agc_layer(const Tensor& e, const Tensor& xin, const Tensor& w, const Tensor& b);

/// dZ/dt from the field output G (B,|V|,d_z,d_h), a vertex matrix, and
/// dH/dt (B,|V|,d_h): (dZ/dt)_kz = Σ_h G_kzh (A · dH/dt)_kh.
Tensor informed_contraction(const Tensor& g, const Matrix& a_outer, const Tensor& dhdt);

/// H(0) = ℓ_H(x₀), Z(0) = ℓ_Z(H(0)); x0 is (B, |V|, 2).
std::pair<Tensor, Tensor> init_states(const ModelConfig& config, const ParamStore& params,
                                      const Tensor& x0);

struct IntegrationResult {
  Tensor h;  // (B, |V|, d_h) at the final knot
  Tensor z;  // (B, |V|, d_z) at the final knot
};

/// Joint fixed-step fourth-order Runge–Kutta over the knot grid, `substeps`
/// steps per interval, aligned to knots. Differentiable by unrolling.
IntegrationResult integrate(const ModelConfig& config, const ParamStore& params,
                            std::span<const ControlPath> paths);

/// Full forward pass: (B windows of input_len × |V|) -> (B, |V|, target_len).
Tensor forward_batch(const ModelConfig& config, const ParamStore& params,
                     std::span<const Matrix> windows);

/// Single-sample convenience: input_len × |V| window -> target_len × |V|.
Matrix predict(const ModelConfig& config, const ParamStore& params, const Matrix& window);

}  // namespace gncde
