#include "gncde/model.hpp"

#include <array>
#include <cmath>

#include "gncde/rng.hpp"
#include "gncde/serialize.hpp"

namespace gncde {

std::string mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::Identity: return "identity";
    case Mechanism::Informed: return "informed";
    case Mechanism::Agc: return "agc";
  }
  throw ValidationError("unknown mechanism value");
}

Mechanism mechanism_from_name(const std::string& name) {
  if (name == "identity") return Mechanism::Identity;
  if (name == "informed") return Mechanism::Informed;
  if (name == "agc") return Mechanism::Agc;
  throw ValidationError("unknown mechanism '" + name + "' (expected identity, informed or agc)");
}

std::string interp_name(Interp s) {
  return s == Interp::NaturalCubic ? "natural-cubic" : "linear";
}

Interp interp_from_name(const std::string& name) {
  if (name == "natural-cubic") return Interp::NaturalCubic;
  if (name == "linear") return Interp::Linear;
  throw ValidationError("unknown interpolation '" + name +
                        "' (expected natural-cubic or linear)");
}

std::string activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw ValidationError("unknown activation '" + name + "' (expected tanh or identity)");
}

Matrix informed_matrix(const Matrix& adjacency, const InformedOptions& options) {
  if (adjacency.rows() != adjacency.cols() || adjacency.rows() == 0) {
    throw ValidationError("informed matrix needs a non-empty square adjacency");
  }
  if (!adjacency.allFinite() || (adjacency.array() < 0.0).any()) {
    throw ValidationError("adjacency entries must be finite and non-negative");
  }
  Matrix base;
  switch (options.weighting) {
    case InformedOptions::Weighting::Weighted: base = adjacency; break;
    case InformedOptions::Weighting::Binary:
      base = (adjacency.array() > 0.0).cast<double>();
      break;
    case InformedOptions::Weighting::Symmetrized:
      base = adjacency + adjacency.transpose();
      break;
  }
  Matrix m =
      options.orientation == InformedOptions::Orientation::Transpose ? base.transpose() : base;
  if (options.self_loop) m += Matrix::Identity(m.rows(), m.cols());
  return m;
}

void ModelConfig::validate() const {
  if (n_vertices < 1) throw ValidationError("model needs at least one vertex");
  if (d_h < 1 || d_z < 1 || hidden_width < 1) {
    throw ValidationError("hidden dimensions must be at least 1");
  }
  if (n_layers != 2 && n_layers != 3) {
    throw ValidationError("n_layers must be 2 or 3, got " + std::to_string(n_layers));
  }
  if (substeps < 1) throw ValidationError("solver substeps must be at least 1");
  if (input_len < 2) throw ValidationError("input length must be at least 2 knots");
  if (target_len < 1) throw ValidationError("target length must be at least 1");
  if (outer == Mechanism::Agc) {
    throw ValidationError("the outer mechanism must be identity or informed");
  }
  auto check_matrix = [this](const std::optional<Matrix>& m, Mechanism mech, const char* which) {
    const bool informed = mech == Mechanism::Informed;
    if (informed && !m.has_value()) {
      throw ValidationError(std::string(which) + " mechanism is informed but no matrix is set");
    }
    if (!informed && m.has_value()) {
      throw ValidationError(std::string(which) + " matrix is set but the mechanism is " +
                            mechanism_name(mech));
    }
    if (m.has_value()) {
      if (m->rows() != n_vertices || m->cols() != n_vertices) {
        throw ValidationError(std::string(which) + " matrix must be " +
                              std::to_string(n_vertices) + "x" + std::to_string(n_vertices));
      }
      if (!m->allFinite()) throw ValidationError(std::string(which) + " matrix must be finite");
    }
  };
  check_matrix(a_inner, inner, "inner");
  check_matrix(a_outer, outer, "outer");
  if (inner == Mechanism::Agc && agc_embed_dim < 1) {
    throw ValidationError("agc embedding dimension must be at least 1");
  }
  if (!std::isfinite(x_mean) || !std::isfinite(x_scale) || x_scale <= 0.0) {
    throw ValidationError("input standardization needs a finite mean and a positive scale");
  }
}

nlohmann::json model_config_to_json(const ModelConfig& config) {
  nlohmann::json j;
  j["n_vertices"] = config.n_vertices;
  j["d_h"] = config.d_h;
  j["d_z"] = config.d_z;
  j["n_layers"] = config.n_layers;
  j["hidden_width"] = config.hidden_width;
  j["inner"] = mechanism_name(config.inner);
  j["outer"] = mechanism_name(config.outer);
  j["agc_embed_dim"] = config.agc_embed_dim;
  if (config.a_inner) j["a_inner"] = matrix_to_json(*config.a_inner);
  if (config.a_outer) j["a_outer"] = matrix_to_json(*config.a_outer);
  j["substeps"] = config.substeps;
  j["interp"] = interp_name(config.interp);
  j["activation"] = activation_name(config.activation);
  j["input_len"] = config.input_len;
  j["target_len"] = config.target_len;
  j["x_mean"] = config.x_mean;
  j["x_scale"] = config.x_scale;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig config;
  auto get_int = [&j](const char* key, Index fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer()) {
      throw ValidationError(std::string("model config field '") + key + "' must be an integer");
    }
    return j[key].get<Index>();
  };
  config.n_vertices = get_int("n_vertices", config.n_vertices);
  config.d_h = get_int("d_h", config.d_h);
  config.d_z = get_int("d_z", config.d_z);
  config.n_layers = get_int("n_layers", config.n_layers);
  config.hidden_width = get_int("hidden_width", config.hidden_width);
  if (j.contains("inner")) config.inner = mechanism_from_name(j["inner"].get<std::string>());
  if (j.contains("outer")) config.outer = mechanism_from_name(j["outer"].get<std::string>());
  config.agc_embed_dim = get_int("agc_embed_dim", config.agc_embed_dim);
  if (j.contains("a_inner")) config.a_inner = matrix_from_json(j["a_inner"], "a_inner");
  if (j.contains("a_outer")) config.a_outer = matrix_from_json(j["a_outer"], "a_outer");
  config.substeps = get_int("substeps", config.substeps);
  if (j.contains("interp")) config.interp = interp_from_name(j["interp"].get<std::string>());
  if (j.contains("activation")) {
    config.activation = activation_from_name(j["activation"].get<std::string>());
  }
  config.input_len = get_int("input_len", config.input_len);
  config.target_len = get_int("target_len", config.target_len);
  auto get_double = [&j](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) {
      throw ValidationError(std::string("model config field '") + key + "' must be a number");
    }
    return j[key].get<double>();
  };
  config.x_mean = get_double("x_mean", config.x_mean);
  config.x_scale = get_double("x_scale", config.x_scale);
  return config;
}

namespace {

constexpr Index kControlChannels = 2;  // [time, observation]

Index affine_count(Index in, Index out) { return in * out + out; }

Index mlp_count(Index in, Index width, Index out, Index n_layers) {
  Index total = affine_count(in, width);
  if (n_layers == 3) total += affine_count(width, width);
  total += affine_count(width, out);
  return total;
}

}  // namespace

Index count_params(const ModelConfig& config) {
  config.validate();
  const Index w = config.hidden_width;
  Index total = 0;
  total += mlp_count(config.d_h, w, config.d_h * kControlChannels, config.n_layers);  // f
  total += mlp_count(config.d_z, w, config.d_z * config.d_h, config.n_layers);        // g
  total += affine_count(kControlChannels, config.d_h);                                // ℓ_H
  total += affine_count(config.d_h, config.d_z);                                      // ℓ_Z
  total += affine_count(config.d_z, config.target_len);                               // readout
  if (config.inner == Mechanism::Agc) total += config.n_vertices * config.agc_embed_dim;
  return total;
}

namespace {

void spec_affine(std::vector<std::pair<std::string, Shape>>& specs, const std::string& prefix,
                 Index in, Index out) {
  specs.emplace_back(prefix + ".w", Shape{in, out});
  specs.emplace_back(prefix + ".b", Shape{out});
}

void spec_mlp(std::vector<std::pair<std::string, Shape>>& specs, const std::string& prefix,
              Index in, Index width, Index out, Index n_layers) {
  spec_affine(specs, prefix + ".l1", in, width);
  if (n_layers == 3) spec_affine(specs, prefix + ".l2", width, width);
  spec_affine(specs, prefix + ".l" + std::to_string(n_layers), width, out);
}

}  // namespace

std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& config) {
  config.validate();
  std::vector<std::pair<std::string, Shape>> specs;
  const Index w = config.hidden_width;
  spec_mlp(specs, "f", config.d_h, w, config.d_h * kControlChannels, config.n_layers);
  spec_mlp(specs, "g", config.d_z, w, config.d_z * config.d_h, config.n_layers);
  if (config.inner == Mechanism::Agc) {
    specs.emplace_back("agc.e", Shape{config.n_vertices, config.agc_embed_dim});
  }
  spec_affine(specs, "init.h", kControlChannels, config.d_h);
  spec_affine(specs, "init.z", config.d_h, config.d_z);
  spec_affine(specs, "readout", config.d_z, config.target_len);
  return specs;
}

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore params;
  for (const auto& [name, shape] : param_shapes(config)) {
    if (shape.size() == 2) {
      // Weight matrices and the AGC embedding: uniform with Glorot limit.
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      Eigen::ArrayXd data(shape_size(shape));
      for (Index i = 0; i < data.size(); ++i) data(i) = rng.uniform(-limit, limit);
      params.add(name, Tensor::from_array(shape, std::move(data)));
    } else {
      params.add(name, Tensor::zeros(shape));  // biases
    }
  }
  return params;
}

// ---- building blocks ---------------------------------------------------------

std::vector<ControlPath> build_control_paths(std::span<const Matrix> windows, Interp scheme) {
  if (windows.empty()) throw ValidationError("no input windows given");
  std::vector<ControlPath> paths;
  paths.reserve(windows.size());
  for (const Matrix& w : windows) {
    if (w.rows() != windows[0].rows() || w.cols() != windows[0].cols()) {
      throw ValidationError("input windows have mixed shapes");
    }
    paths.emplace_back(w, scheme);
  }
  return paths;
}

Tensor batch_x0(std::span<const ControlPath> paths) {
  const auto b = static_cast<Index>(paths.size());
  const Index v = paths[0].n_channels();
  Eigen::ArrayXd data(b * v * kControlChannels);
  for (Index i = 0; i < b; ++i) {
    const Vector obs = paths[i].value(0.0);
    for (Index n = 0; n < v; ++n) {
      data((i * v + n) * kControlChannels + 0) = 0.0;
      data((i * v + n) * kControlChannels + 1) = obs(n);
    }
  }
  return Tensor::from_array({b, v, kControlChannels}, std::move(data));
}

Tensor batch_dxdt(std::span<const ControlPath> paths, double t, Index segment) {
  const auto b = static_cast<Index>(paths.size());
  const Index v = paths[0].n_channels();
  Eigen::ArrayXd data(b * v * kControlChannels);
  for (Index i = 0; i < b; ++i) {
    const Vector d = paths[i].derivative_in(t, segment);
    for (Index n = 0; n < v; ++n) {
      data((i * v + n) * kControlChannels + 0) = 1.0;
      data((i * v + n) * kControlChannels + 1) = d(n);
    }
  }
  return Tensor::from_array({b, v, kControlChannels}, std::move(data));
}

namespace {

Tensor activate(const ModelConfig& config, const Tensor& x) {
  return config.activation == Activation::Tanh ? tanh(x) : x;
}

/// Left-multiplies the vertex axis of a (B, |V|, d) tensor.
Tensor mix_vertices(const Tensor& m, const Tensor& x) { return contract("vw,bwd->bvd", m, x); }

void check_state_shape(const char* what, const Tensor& x, Index n_vertices, Index dim) {
  if (x.rank() != 3 || x.shape()[1] != n_vertices || x.shape()[2] != dim) {
    throw ValidationError(std::string(what) + " must be shaped (batch, " +
                          std::to_string(n_vertices) + ", " + std::to_string(dim) + "), got " +
                          shape_str(x.shape()));
  }
}

}  // namespace

Tensor vector_field_f(const ModelConfig& config, const ParamStore& params, const Tensor& h) {
  check_state_shape("f input", h, config.n_vertices, config.d_h);
  Tensor a = activate(config, linear(h, params.at("f.l1.w"), params.at("f.l1.b")));
  if (config.n_layers == 3) {
    a = activate(config, linear(a, params.at("f.l2.w"), params.at("f.l2.b")));
  }
  const std::string last = "f.l" + std::to_string(config.n_layers);
  Tensor out = linear(a, params.at(last + ".w"), params.at(last + ".b"));
  return reshape(out, {h.shape()[0], config.n_vertices, config.d_h, kControlChannels});
}

Tensor vector_field_g(const ModelConfig& config, const ParamStore& params, const Tensor& z) {
  check_state_shape("g input", z, config.n_vertices, config.d_z);
  Tensor a = activate(config, linear(z, params.at("g.l1.w"), params.at("g.l1.b")));
  const std::string last = "g.l" + std::to_string(config.n_layers);
  Tensor out;
  if (config.inner == Mechanism::Agc) {
    // The adaptive layer takes the position of the middle affine map; in the
    // 2-layer form that position is the final map itself.
    if (config.n_layers == 3) {
      Tensor mixed = activate(config, agc_layer(params.at("agc.e"), a, params.at("g.l2.w"),
                                                params.at("g.l2.b")));
      out = linear(mixed, params.at(last + ".w"), params.at(last + ".b"));
    } else {
      out = agc_layer(params.at("agc.e"), a, params.at(last + ".w"), params.at(last + ".b"));
    }
  } else {
    if (config.n_layers == 3) {
      a = activate(config, linear(a, params.at("g.l2.w"), params.at("g.l2.b")));
    }
    if (config.inner == Mechanism::Informed) {
      a = mix_vertices(Tensor::from_matrix(*config.a_inner), a);
    }
    out = linear(a, params.at(last + ".w"), params.at(last + ".b"));
  }
  return reshape(out, {z.shape()[0], config.n_vertices, config.d_z, config.d_h});
}

Tensor agc_layer(const Tensor& e, const Tensor& xin, const Tensor& w, const Tensor& b) {
  if (e.rank() != 2) {
    throw ValidationError("agc embedding must be 2-d, got " + shape_str(e.shape()));
  }
  const bool single = xin.rank() == 2;
  Tensor x = single ? reshape(xin, {1, xin.shape()[0], xin.shape()[1]}) : xin;
  if (x.rank() != 3 || x.shape()[1] != e.shape()[0]) {
    throw ValidationError("agc input " + shape_str(xin.shape()) +
                          " does not match the embedding " + shape_str(e.shape()));
  }
  Tensor attention = softmax(relu(contract("ve,we->vw", e, e)), 1);
  Tensor mixed = add(x, mix_vertices(attention, x));
  Tensor out = linear(mixed, w, b);
  if (single) out = reshape(out, {out.shape()[1], out.shape()[2]});
  return out;
}

Tensor informed_contraction(const Tensor& g, const Matrix& a_outer, const Tensor& dhdt) {
  const bool single = g.rank() == 3;
  Tensor gg = single ? reshape(g, {1, g.shape()[0], g.shape()[1], g.shape()[2]}) : g;
  Tensor dh = single ? reshape(dhdt, {1, dhdt.shape()[0], dhdt.shape()[1]}) : dhdt;
  if (gg.rank() != 4 || dh.rank() != 3) {
    throw ValidationError("informed contraction expects G (batch, V, d_z, d_h) and dH/dt "
                          "(batch, V, d_h), got " +
                          shape_str(g.shape()) + " and " + shape_str(dhdt.shape()));
  }
  if (a_outer.rows() != gg.shape()[1] || a_outer.cols() != dh.shape()[1]) {
    throw ValidationError("vertex matrix is " + std::to_string(a_outer.rows()) + "x" +
                          std::to_string(a_outer.cols()) + " but the fields cover " +
                          std::to_string(gg.shape()[1]) + " vertices");
  }
  Tensor mixed = contract("vw,bwh->bvh", Tensor::from_matrix(a_outer), dh);
  Tensor out = contract("bvzh,bvh->bvz", gg, mixed);
  if (single) out = reshape(out, {out.shape()[1], out.shape()[2]});
  return out;
}

std::pair<Tensor, Tensor> init_states(const ModelConfig& config, const ParamStore& params,
                                      const Tensor& x0) {
  check_state_shape("initial control value", x0, config.n_vertices, kControlChannels);
  Tensor h0 = linear(x0, params.at("init.h.w"), params.at("init.h.b"));
  Tensor z0 = linear(h0, params.at("init.z.w"), params.at("init.z.b"));
  return {h0, z0};
}

namespace {

struct FieldEval {
  Tensor dh;
  Tensor dz;
};

FieldEval eval_fields(const ModelConfig& config, const ParamStore& params,
                      std::span<const ControlPath> paths, double t, Index segment,
                      const Tensor& h, const Tensor& z) {
  Tensor dxdt = batch_dxdt(paths, t, segment);
  Tensor dh = contract("bvhx,bvx->bvh", vector_field_f(config, params, h), dxdt);
  Tensor dz;
  if (config.outer == Mechanism::Informed) {
    dz = informed_contraction(vector_field_g(config, params, z), *config.a_outer, dh);
  } else {
    dz = contract("bvzh,bvh->bvz", vector_field_g(config, params, z), dh);
  }
  return {dh, dz};
}

Tensor axpy(const Tensor& y, double c, const Tensor& d) {
  const std::array<std::pair<double, Tensor>, 2> terms{{{1.0, y}, {c, d}}};
  return lincomb(terms);
}

Tensor rk4_combine(const Tensor& y, double dt, const Tensor& k1, const Tensor& k2,
                   const Tensor& k3, const Tensor& k4) {
  const std::array<std::pair<double, Tensor>, 5> terms{
      {{1.0, y}, {dt / 6.0, k1}, {dt / 3.0, k2}, {dt / 3.0, k3}, {dt / 6.0, k4}}};
  return lincomb(terms);
}

}  // namespace

IntegrationResult integrate(const ModelConfig& config, const ParamStore& params,
                            std::span<const ControlPath> paths) {
  config.validate();
  if (paths.empty()) throw ValidationError("no control paths to integrate");
  if (paths[0].n_channels() != config.n_vertices) {
    throw ValidationError("control paths cover " + std::to_string(paths[0].n_channels()) +
                          " vertices, model expects " + std::to_string(config.n_vertices));
  }
  auto [h, z] = init_states(config, params, batch_x0(paths));
  const Index n_segments = paths[0].n_knots() - 1;
  const Index k = config.substeps;
  const double dt = 1.0 / static_cast<double>(k);
  for (Index seg = 0; seg < n_segments; ++seg) {
    for (Index sub = 0; sub < k; ++sub) {
      const double t0 = static_cast<double>(seg) + static_cast<double>(sub) * dt;
      FieldEval k1 = eval_fields(config, params, paths, t0, seg, h, z);
      FieldEval k2 = eval_fields(config, params, paths, t0 + dt / 2.0, seg,
                                 axpy(h, dt / 2.0, k1.dh), axpy(z, dt / 2.0, k1.dz));
      FieldEval k3 = eval_fields(config, params, paths, t0 + dt / 2.0, seg,
                                 axpy(h, dt / 2.0, k2.dh), axpy(z, dt / 2.0, k2.dz));
      FieldEval k4 = eval_fields(config, params, paths, t0 + dt, seg, axpy(h, dt, k3.dh),
                                 axpy(z, dt, k3.dz));
      h = rk4_combine(h, dt, k1.dh, k2.dh, k3.dh, k4.dh);
      z = rk4_combine(z, dt, k1.dz, k2.dz, k3.dz, k4.dz);
      if (!h.array().isFinite().all() || !z.array().isFinite().all()) {
        throw NumericError("non-finite state after integration step " +
                           std::to_string(seg * k + sub) + " (t = " +
                           std::to_string(t0 + dt) + ")");
      }
    }
  }
  return {h, z};
}

Tensor forward_batch(const ModelConfig& config, const ParamStore& params,
                     std::span<const Matrix> windows) {
  config.validate();
  if (windows.empty()) throw ValidationError("forward pass needs at least one window");
  for (const Matrix& w : windows) {
    if (w.rows() != config.input_len || w.cols() != config.n_vertices) {
      throw ValidationError("input window is " + std::to_string(w.rows()) + "x" +
                            std::to_string(w.cols()) + ", model expects " +
                            std::to_string(config.input_len) + "x" +
                            std::to_string(config.n_vertices));
    }
  }
  // standardized observations drive the solver; raw-scale values leave it
  const bool standardized = config.x_mean != 0.0 || config.x_scale != 1.0;
  std::vector<Matrix> scaled;
  std::span<const Matrix> effective = windows;
  if (standardized) {
    scaled.assign(windows.begin(), windows.end());
    for (Matrix& w : scaled) w = ((w.array() - config.x_mean) / config.x_scale).matrix();
    effective = scaled;
  }
  std::vector<ControlPath> paths = build_control_paths(effective, config.interp);
  IntegrationResult end = integrate(config, params, paths);
  Tensor out = linear(end.z, params.at("readout.w"), params.at("readout.b"));
  if (standardized) {
    out = add(scale(out, config.x_scale),
              Tensor::from_array(out.shape(),
                                 Eigen::ArrayXd::Constant(out.array().size(), config.x_mean)));
  }
  return out;
}

Matrix predict(const ModelConfig& config, const ParamStore& params, const Matrix& window) {
  const std::array<Matrix, 1> windows{window};
  Tensor out = forward_batch(config, params, windows);
  // (1, |V|, target_len) -> target_len x |V|
  Matrix result(config.target_len, config.n_vertices);
  const Eigen::ArrayXd& data = out.array();
  for (Index v = 0; v < config.n_vertices; ++v) {
    for (Index t = 0; t < config.target_len; ++t) {
      result(t, v) = data(v * config.target_len + t);
    }
  }
  return result;
}

}  // namespace gncde
