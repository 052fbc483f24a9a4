#pragma once

// Feed-forward tanh networks and the Adam optimizer.
//
// Parameters live in a flat array (per layer: weight matrix row-major
// out x in, then bias).  The forward pass is emitted into an expression
// graph, with one leaf per parameter, so that both input derivatives and
// parameter gradients are available through the autodiff module.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "sdegan/autodiff.hpp"
#include "sdegan/rng.hpp"

namespace sdegan::nn {

struct MlpSpec {
  int input_width = 1;
  int hidden_layers = 4;
  int hidden_width = 128;
  int output_width = 1;

  void validate() const {
    if (input_width < 1 || hidden_layers < 0 || output_width < 1 ||
        (hidden_layers > 0 && hidden_width < 1))
      throw std::invalid_argument("MlpSpec: widths must be >= 1");
  }

  int layer_count() const { return hidden_layers + 1; }
  int layer_in(int layer) const {
    return layer == 0 ? input_width : hidden_width;
  }
  int layer_out(int layer) const {
    return layer == hidden_layers ? output_width : hidden_width;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layer_count(); ++l)
      n += std::size_t(layer_out(l)) * layer_in(l) + layer_out(l);
    return n;
  }

  bool operator==(const MlpSpec&) const = default;
};

struct MlpParams {
  MlpSpec spec;
  std::vector<double> values;  // per layer: W row-major (out x in), then b
};

// Uniform Xavier weights in +-sqrt(6/(fan_in+fan_out)); zero biases.
inline MlpParams init_mlp(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  MlpParams p{spec, std::vector<double>(spec.param_count(), 0.0)};
  std::size_t at = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.layer_in(l), out = spec.layer_out(l);
    const double bound = std::sqrt(6.0 / (in + out));
    for (int i = 0; i < out * in; ++i) p.values[at++] = rng.uniform_sym(bound);
    at += out;  // biases stay zero
  }
  return p;
}

// Leaf ids congruent with MlpParams::values.
struct MlpLeaves {
  MlpSpec spec;
  std::vector<ad::NodeId> ids;
};

inline MlpLeaves make_mlp_leaves(ad::Graph& g, const MlpSpec& spec) {
  spec.validate();
  MlpLeaves leaves{spec, {}};
  leaves.ids.reserve(spec.param_count());
  for (std::size_t i = 0; i < spec.param_count(); ++i)
    leaves.ids.push_back(g.leaf());
  return leaves;
}

// Emits the affine/tanh chain; returns the output nodes (identity head).
inline std::vector<ad::NodeId> mlp_forward(ad::Graph& g,
                                           const MlpLeaves& params,
                                           std::span<const ad::NodeId> inputs) {
  const MlpSpec& spec = params.spec;
  if (static_cast<int>(inputs.size()) != spec.input_width)
    throw std::invalid_argument("mlp_forward: input width mismatch");
  std::vector<ad::NodeId> cur(inputs.begin(), inputs.end());
  std::size_t at = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.layer_in(l), out = spec.layer_out(l);
    const std::size_t w0 = at, b0 = at + std::size_t(out) * in;
    std::vector<ad::NodeId> next(out);
    for (int j = 0; j < out; ++j) {
      ad::NodeId acc = params.ids[b0 + j];
      for (int i = 0; i < in; ++i)
        acc = g.fma(params.ids[w0 + std::size_t(j) * in + i], cur[i], acc);
      next[j] = (l < spec.hidden_layers) ? g.tanh(acc) : acc;
    }
    cur = std::move(next);
    at = b0 + out;
  }
  return cur;
}

inline ad::NodeId mlp_forward_scalar(ad::Graph& g, const MlpLeaves& params,
                                     std::span<const ad::NodeId> inputs) {
  if (params.spec.output_width != 1)
    throw std::invalid_argument("mlp_forward_scalar: output width must be 1");
  return mlp_forward(g, params, inputs)[0];
}

template <int L>
inline void bind_params(ad::Workspace<L>& ws, const MlpLeaves& leaves,
                        const MlpParams& params) {
  if (!(params.spec == leaves.spec))
    throw std::invalid_argument("bind_params: spec mismatch");
  for (std::size_t i = 0; i < leaves.ids.size(); ++i)
    ws.set_leaf_all(leaves.ids[i], params.values[i]);
}

struct AdamConfig {
  double alpha = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double epsilon = 1e-8;
};

struct AdamState {
  std::int64_t t = 0;
  std::vector<double> m, v;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Standard Adam with bias correction.  Rejects the whole step on any
// non-finite gradient component.
inline void adam_step(AdamState& state, const AdamConfig& cfg,
                      std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  for (double gv : grads)
    if (!std::isfinite(gv))
      throw std::runtime_error("adam_step: non-finite gradient");
  state.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double gv = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gv;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gv * gv;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.alpha * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

}  // namespace sdegan::nn
