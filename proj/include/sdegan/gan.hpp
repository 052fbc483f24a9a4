#pragma once

// Adversarial pieces: generator/discriminator parameter sets, graph
// builders for the induced networks (the differential operator applied to
// the u and k generators through nested autodiff), snapshot-row assembly,
// and the numeric WGAN-GP / vanilla loss operations.

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "sdegan/autodiff.hpp"
#include "sdegan/metrics.hpp"
#include "sdegan/nn.hpp"
#include "sdegan/processes.hpp"

namespace sdegan::gan {

enum class LossKind { kWganGp, kVanilla };

// Generators for u and k; the f and b generators are induced from them and
// own no parameters of their own.
struct GeneratorSet {
  nn::MlpParams u_net, k_net;
  int noise_dim = 0;
};

// One discriminator per snapshot group.
struct DiscriminatorSet {
  std::vector<nn::MlpParams> nets;
};

// Leaves for evaluating the generator pair at one (x, xi) point.
struct GenLeaves {
  nn::MlpLeaves u, k;
  ad::NodeId x = ad::kNoNode;
  std::vector<ad::NodeId> xi;

  std::vector<ad::NodeId> input_ids() const {
    std::vector<ad::NodeId> in;
    in.reserve(1 + xi.size());
    in.push_back(x);
    in.insert(in.end(), xi.begin(), xi.end());
    return in;
  }
};

inline GenLeaves make_gen_leaves(ad::Graph& g, const nn::MlpSpec& u_spec,
                                 const nn::MlpSpec& k_spec, int noise_dim) {
  if (u_spec.input_width != 1 + noise_dim ||
      k_spec.input_width != 1 + noise_dim)
    throw std::invalid_argument(
        "make_gen_leaves: generator input width must be 1 + noise_dim");
  GenLeaves leaves;
  leaves.u = nn::make_mlp_leaves(g, u_spec);
  leaves.k = nn::make_mlp_leaves(g, k_spec);
  leaves.x = g.leaf();
  for (int i = 0; i < noise_dim; ++i) leaves.xi.push_back(g.leaf());
  return leaves;
}

enum class Field { kK, kU };

// The direct generator network for k or u evaluated at (x, xi).
inline ad::NodeId gen_field(ad::Graph& g, const GenLeaves& leaves, Field which) {
  const auto in = leaves.input_ids();
  return nn::mlp_forward_scalar(g, which == Field::kK ? leaves.k : leaves.u, in);
}

struct InducedParts {
  ad::NodeId u, k, du, ddu, dk, f;
};

// The induced forcing generator
//   f(x;xi) = -(1/10) ( dk/dx du/dx + k d2u/dx2 ),
// with every derivative emitted into the same graph, so the result stays
// differentiable w.r.t. both parameter sets.  leaves.x must be a leaf.
inline InducedParts build_induced_f(ad::Graph& g, const GenLeaves& leaves) {
  InducedParts parts;
  parts.u = gen_field(g, leaves, Field::kU);
  parts.k = gen_field(g, leaves, Field::kK);
  parts.du = g.tangents(std::vector<ad::NodeId>{parts.u}, leaves.x)[0];
  parts.ddu = g.tangents(std::vector<ad::NodeId>{parts.du}, leaves.x)[0];
  parts.dk = g.tangents(std::vector<ad::NodeId>{parts.k}, leaves.x)[0];
  parts.f = g.mul(g.constant(-0.1),
                  g.fma(parts.dk, parts.du, g.mul(parts.k, parts.ddu)));
  return parts;
}

inline ad::NodeId induced_f(ad::Graph& g, const GenLeaves& leaves) {
  return build_induced_f(g, leaves).f;
}

// Dirichlet trace: the boundary generator is u itself at the boundary
// sensor.
inline ad::NodeId induced_b(ad::Graph& g, const GenLeaves& leaves,
                            double boundary_x) {
  if (boundary_x != -1.0 && boundary_x != 1.0)
    throw std::invalid_argument("induced_b: x must sit on the boundary");
  return gen_field(g, leaves, Field::kU);
}

// One generated snapshot row in (K,U,F,B) order at fixed sensor positions,
// sharing one xi (one random event per snapshot).  Coordinates enter as
// leaves; `coord_bindings` carries their fixed sensor values.
struct SnapshotNodes {
  std::vector<ad::NodeId> row;
  nn::MlpLeaves u_leaves, k_leaves;
  std::vector<ad::NodeId> xi;
  std::vector<std::pair<ad::NodeId, double>> coord_bindings;
};

inline SnapshotNodes fake_snapshot(ad::Graph& g, const nn::MlpSpec& u_spec,
                                   const nn::MlpSpec& k_spec, int noise_dim,
                                   const proc::SensorLayout& layout) {
  layout.validate();
  SnapshotNodes nodes;
  nodes.u_leaves = nn::make_mlp_leaves(g, u_spec);
  nodes.k_leaves = nn::make_mlp_leaves(g, k_spec);
  for (int i = 0; i < noise_dim; ++i) nodes.xi.push_back(g.leaf());

  auto leaves_at = [&](double x) {
    GenLeaves point;
    point.u = nodes.u_leaves;
    point.k = nodes.k_leaves;
    point.xi = nodes.xi;
    point.x = g.leaf();
    nodes.coord_bindings.push_back({point.x, x});
    return point;
  };
  for (double x : layout.k)
    nodes.row.push_back(gen_field(g, leaves_at(x), Field::kK));
  for (double x : layout.u)
    nodes.row.push_back(gen_field(g, leaves_at(x), Field::kU));
  for (double x : layout.f) nodes.row.push_back(induced_f(g, leaves_at(x)));
  for (double x : layout.b)
    nodes.row.push_back(induced_b(g, leaves_at(x), x));
  return nodes;
}

// Numeric loss operations --------------------------------------------------

struct LossPair {
  double generator = 0.0;
  double discriminator = 0.0;
};

namespace detail {

struct DiscScorer {
  ad::Graph g;
  nn::MlpLeaves rho;
  std::vector<ad::NodeId> in;
  ad::NodeId out = ad::kNoNode;
  std::vector<ad::NodeId> in_grad;
  ad::Plan value_plan, grad_plan;
};

inline DiscScorer make_disc_scorer(const nn::MlpParams& disc,
                                   bool with_input_grad) {
  DiscScorer sc;
  sc.rho = nn::make_mlp_leaves(sc.g, disc.spec);
  for (int i = 0; i < disc.spec.input_width; ++i) sc.in.push_back(sc.g.leaf());
  sc.out = nn::mlp_forward_scalar(sc.g, sc.rho, sc.in);
  sc.value_plan = ad::Plan(sc.g, std::vector<ad::NodeId>{sc.out});
  if (with_input_grad) {
    sc.in_grad = sc.g.grad(sc.out, sc.in);
    std::vector<ad::NodeId> outs = sc.in_grad;
    outs.push_back(sc.out);
    sc.grad_plan = ad::Plan(sc.g, outs);
  }
  return sc;
}

}  // namespace detail

// WGAN-GP losses for one batch triple:
//   L_g = -mean D(fake)
//   L_d = mean D(fake) - mean D(real)
//         + lambda * mean (||grad_xhat D(xhat)||_2 - 1)^2,
// with xhat = eps*real + (1-eps)*fake rowwise.
inline LossPair wgan_gp_losses(const nn::MlpParams& disc,
                               const metrics::PointCloud& real,
                               const metrics::PointCloud& fake,
                               std::span<const double> eps, double lambda) {
  real.validate();
  fake.validate();
  if (real.n != fake.n || real.d != fake.d ||
      eps.size() != std::size_t(real.n))
    throw std::invalid_argument("wgan_gp_losses: batch shape mismatch");
  if (real.d != disc.spec.input_width)
    throw std::invalid_argument("wgan_gp_losses: discriminator width mismatch");
  if (lambda < 0.0)
    throw std::invalid_argument("wgan_gp_losses: lambda must be >= 0");

  detail::DiscScorer sc = detail::make_disc_scorer(disc, true);
  ad::ScalarWorkspace ws(sc.g);
  nn::bind_params(ws, sc.rho, disc);

  const int n = real.n, d = real.d;
  double sum_fake = 0.0, sum_real = 0.0, sum_pen = 0.0;
  std::vector<double> xhat(d);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < d; ++i) ws.set_leaf(sc.in[i], 0, fake.row(j)[i]);
    ws.run(sc.value_plan);
    const double d_fake = ws.lanes(sc.out)[0];
    sum_fake += d_fake;

    for (int i = 0; i < d; ++i) ws.set_leaf(sc.in[i], 0, real.row(j)[i]);
    ws.run(sc.value_plan);
    sum_real += ws.lanes(sc.out)[0];

    const double e = eps[j];
    if (e < 0.0 || e > 1.0)
      throw std::invalid_argument("wgan_gp_losses: eps outside [0,1]");
    for (int i = 0; i < d; ++i)
      xhat[i] = e * real.row(j)[i] + (1.0 - e) * fake.row(j)[i];
    for (int i = 0; i < d; ++i) ws.set_leaf(sc.in[i], 0, xhat[i]);
    ws.run(sc.grad_plan);
    double norm2 = 0.0;
    for (int i = 0; i < d; ++i) {
      const double gi = ws.lanes(sc.in_grad[i])[0];
      norm2 += gi * gi;
    }
    const double dev = std::sqrt(norm2) - 1.0;
    sum_pen += dev * dev;
  }
  LossPair loss;
  loss.generator = -sum_fake / n;
  loss.discriminator =
      sum_fake / n - sum_real / n + lambda * sum_pen / n;
  if (!std::isfinite(loss.generator) || !std::isfinite(loss.discriminator))
    throw std::runtime_error("wgan_gp_losses: non-finite loss");
  return loss;
}

// Vanilla GAN losses; the raw discriminator output is mapped through a
// logistic sigmoid with probabilities clamped to [1e-7, 1-1e-7]:
//   L_g = mean log(1 - s(fake))
//   L_d = -mean log s(real) - mean log(1 - s(fake))
inline LossPair vanilla_losses(const nn::MlpParams& disc,
                               const metrics::PointCloud& real,
                               const metrics::PointCloud& fake) {
  real.validate();
  fake.validate();
  if (real.n != fake.n || real.d != fake.d)
    throw std::invalid_argument("vanilla_losses: batch shape mismatch");
  if (real.d != disc.spec.input_width)
    throw std::invalid_argument("vanilla_losses: discriminator width mismatch");

  detail::DiscScorer sc = detail::make_disc_scorer(disc, false);
  ad::ScalarWorkspace ws(sc.g);
  nn::bind_params(ws, sc.rho, disc);

  auto prob = [&](const double* row) {
    for (int i = 0; i < real.d; ++i) ws.set_leaf(sc.in[i], 0, row[i]);
    ws.run(sc.value_plan);
    const double y = ws.lanes(sc.out)[0];
    const double s = 1.0 / (1.0 + std::exp(-y));
    return std::clamp(s, 1e-7, 1.0 - 1e-7);
  };
  const int n = real.n;
  double lg = 0.0, ld = 0.0;
  for (int j = 0; j < n; ++j) {
    const double s_fake = prob(fake.row(j));
    const double s_real = prob(real.row(j));
    lg += std::log(1.0 - s_fake);
    ld += -std::log(s_real) - std::log(1.0 - s_fake);
  }
  return {lg / n, ld / n};
}

}  // namespace sdegan::gan
