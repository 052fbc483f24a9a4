#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sdegan/gan.hpp"
#include "sdegan/train.hpp"

using namespace sdegan;
using ad::NodeId;
using gan::Field;

namespace {
using Bind = std::vector<std::pair<NodeId, double>>;

void bind_mlp(Bind& b, const nn::MlpLeaves& leaves, const nn::MlpParams& p) {
  for (std::size_t i = 0; i < leaves.ids.size(); ++i)
    b.push_back({leaves.ids[i], p.values[i]});
}

// A 1-input "network" computing c0 + c1 x + c2 x^2 is not an MLP, so for
// hand cases we build tiny parameter sets whose tanh nets degenerate:
// width-1, single hidden layer nets with zero weights where needed.
}  // namespace

TEST_CASE("induced f on hand-built generators") {
  // u(x) = x^2 and k(x) = 1 via explicit graphs (bypassing the MLP): the
  // operator itself is what is under test.
  ad::Graph g;
  const NodeId x = g.leaf();
  const NodeId u = g.square(x);
  const NodeId k1 = g.add(g.constant(1.0), g.mul(g.constant(0.0), x));
  const NodeId du = g.tangents(std::vector<NodeId>{u}, x)[0];
  const NodeId ddu = g.tangents(std::vector<NodeId>{du}, x)[0];
  const NodeId dk = g.tangents(std::vector<NodeId>{k1}, x)[0];
  const NodeId f =
      g.mul(g.constant(-0.1), g.fma(dk, du, g.mul(k1, ddu)));
  SECTION("u=x^2, k=1: f = -0.2 everywhere") {
    for (double xv : {-0.7, 0.0, 1.0})
      CHECK_THAT(ad::eval_scalar(g, f, Bind{{x, xv}}),
                 Catch::Matchers::WithinAbs(-0.2, 1e-14));
  }
  SECTION("u=x^2, k=x: f(1) = -0.4") {
    const NodeId kx = x;
    const NodeId dkx = g.tangents(std::vector<NodeId>{kx}, x)[0];
    const NodeId f2 =
        g.mul(g.constant(-0.1), g.fma(dkx, du, g.mul(kx, ddu)));
    CHECK_THAT(ad::eval_scalar(g, f2, Bind{{x, 1.0}}),
               Catch::Matchers::WithinAbs(-0.4, 1e-14));
  }
}

TEST_CASE("induced f on mlp generators matches finite differences in x") {
  // randomly initialized width-8 generators; f-tilde must equal the
  // centered-difference application of the operator to the networks
  const int noise_dim = 3;
  nn::MlpSpec spec{1 + noise_dim, 2, 8, 1};
  Rng rng(21);
  const auto u_params = nn::init_mlp(spec, rng);
  const auto k_params = nn::init_mlp(spec, rng);

  ad::Graph g;
  auto leaves = gan::make_gen_leaves(g, spec, spec, noise_dim);
  const auto parts = gan::build_induced_f(g, leaves);

  Bind base;
  bind_mlp(base, leaves.u, u_params);
  bind_mlp(base, leaves.k, k_params);

  auto eval_at = [&](NodeId node, double xv, const std::vector<double>& xi) {
    Bind b = base;
    b.push_back({leaves.x, xv});
    for (int d = 0; d < noise_dim; ++d) b.push_back({leaves.xi[d], xi[d]});
    return ad::eval_scalar(g, node, b);
  };

  const double h = 1e-4;
  for (int trial = 0; trial < 100; ++trial) {
    const double xv = rng.uniform_sym(0.95);
    std::vector<double> xi(noise_dim);
    for (double& v : xi) v = rng.normal();

    const double u0 = eval_at(parts.u, xv, xi);
    const double up = eval_at(parts.u, xv + h, xi);
    const double um = eval_at(parts.u, xv - h, xi);
    const double k0 = eval_at(parts.k, xv, xi);
    const double kp = eval_at(parts.k, xv + h, xi);
    const double km = eval_at(parts.k, xv - h, xi);
    const double du_fd = (up - um) / (2 * h);
    const double ddu_fd = (up - 2 * u0 + um) / (h * h);
    const double dk_fd = (kp - km) / (2 * h);
    const double f_fd = -0.1 * (dk_fd * du_fd + k0 * ddu_fd);

    const double f_ad = eval_at(parts.f, xv, xi);
    CHECK_THAT(f_ad, Catch::Matchers::WithinAbs(
                         f_fd, 1e-4 * std::max(1.0, std::fabs(f_fd))));
  }
}

TEST_CASE("generator-loss gradient through induced f matches finite differences") {
  // d/d(theta_u) of -D(fake row with f entries) exercises third-order
  // nesting: theta of (d2u/dx2).
  const int noise_dim = 2;
  nn::MlpSpec gspec{1 + noise_dim, 2, 4, 1};
  Rng rng(31);
  auto u_params = nn::init_mlp(gspec, rng);
  auto k_params = nn::init_mlp(gspec, rng);

  proc::SensorLayout layout;
  layout.f = {-0.5, 0.25};
  nn::MlpSpec dspec{2, 2, 4, 1};
  auto d_params = nn::init_mlp(dspec, rng);

  ad::Graph g;
  auto snap = gan::fake_snapshot(g, gspec, gspec, noise_dim, layout);
  auto rho = nn::make_mlp_leaves(g, dspec);
  const NodeId loss = g.neg(nn::mlp_forward_scalar(g, rho, snap.row));
  const auto grads_u = g.grad(loss, snap.u_leaves.ids);
  const auto grads_k = g.grad(loss, snap.k_leaves.ids);

  const std::vector<double> xi = {0.4, -1.1};
  auto make_bind = [&](const nn::MlpParams& up, const nn::MlpParams& kp) {
    Bind b;
    bind_mlp(b, snap.u_leaves, up);
    bind_mlp(b, snap.k_leaves, kp);
    bind_mlp(b, rho, d_params);
    for (int d = 0; d < noise_dim; ++d) b.push_back({snap.xi[d], xi[d]});
    for (auto [id, v] : snap.coord_bindings) b.push_back({id, v});
    return b;
  };

  const Bind base = make_bind(u_params, k_params);
  const double h = 1e-5;
  for (std::size_t p = 0; p < u_params.values.size(); p += 7) {
    const double ad_grad = ad::eval_scalar(g, grads_u[p], base);
    auto up = u_params, um = u_params;
    up.values[p] += h;
    um.values[p] -= h;
    const double fd = (ad::eval_scalar(g, loss, make_bind(up, k_params)) -
                       ad::eval_scalar(g, loss, make_bind(um, k_params))) /
                      (2 * h);
    CHECK_THAT(ad_grad, Catch::Matchers::WithinAbs(
                            fd, 1e-3 * std::max(1.0, std::fabs(fd))));
  }
  for (std::size_t p = 0; p < k_params.values.size(); p += 7) {
    const double ad_grad = ad::eval_scalar(g, grads_k[p], base);
    auto kp = k_params, km = k_params;
    kp.values[p] += h;
    km.values[p] -= h;
    const double fd = (ad::eval_scalar(g, loss, make_bind(u_params, kp)) -
                       ad::eval_scalar(g, loss, make_bind(u_params, km))) /
                      (2 * h);
    CHECK_THAT(ad_grad, Catch::Matchers::WithinAbs(
                            fd, 1e-3 * std::max(1.0, std::fabs(fd))));
  }
}

TEST_CASE("fake snapshot layout") {
  const int noise_dim = 4;
  nn::MlpSpec gspec{1 + noise_dim, 1, 4, 1};
  SECTION("forward layout gives 13+2+21 = 36 entries") {
    const auto layout = proc::equidistant_layout(13, 2, 21, 0);
    ad::Graph g;
    const auto snap = gan::fake_snapshot(g, gspec, gspec, noise_dim, layout);
    CHECK(snap.row.size() == 36);
    CHECK(snap.xi.size() == 4);
  }
  SECTION("k/f-only layout omits the other blocks") {
    proc::SensorLayout layout;
    layout.k = {-0.3, 0.3};
    layout.f = {0.0};
    ad::Graph g;
    const auto snap = gan::fake_snapshot(g, gspec, gspec, noise_dim, layout);
    CHECK(snap.row.size() == 3);
  }
  SECTION("zero-initialized nets generate all-zero rows") {
    const auto layout = proc::equidistant_layout(3, 2, 3, 0);
    ad::Graph g;
    const auto snap = gan::fake_snapshot(g, gspec, gspec, noise_dim, layout);
    nn::MlpParams zeros{gspec, std::vector<double>(gspec.param_count(), 0.0)};
    Bind b;
    bind_mlp(b, snap.u_leaves, zeros);
    bind_mlp(b, snap.k_leaves, zeros);
    for (auto id : snap.xi) b.push_back({id, 0.77});
    for (auto [id, v] : snap.coord_bindings) b.push_back({id, v});
    for (NodeId node : snap.row)
      CHECK(ad::eval_scalar(g, node, b) == 0.0);
  }
}

TEST_CASE("wgan-gp loss hand values") {
  const int d = 3;
  nn::MlpSpec dspec{d, 1, 4, 1};
  Rng rng(5);
  metrics::PointCloud real(4, d), fake(4, d);
  for (double& v : real.data) v = rng.uniform_sym(1.0);
  for (double& v : fake.data) v = rng.uniform_sym(1.0);
  std::vector<double> eps = {0.1, 0.5, 0.9, 0.3};

  SECTION("constant discriminator: L_g = -c, L_d = lambda") {
    // zero weights, output bias c
    nn::MlpParams disc{dspec, std::vector<double>(dspec.param_count(), 0.0)};
    disc.values.back() = 2.5;  // output bias is the last flat entry
    const auto loss = gan::wgan_gp_losses(disc, real, fake, eps, 0.1);
    CHECK_THAT(loss.generator, Catch::Matchers::WithinAbs(-2.5, 1e-14));
    CHECK_THAT(loss.discriminator, Catch::Matchers::WithinAbs(0.1, 1e-14));
  }
  SECTION("identical batches with lambda=0 give L_d = 0") {
    auto disc = nn::init_mlp(dspec, rng);
    const auto loss = gan::wgan_gp_losses(disc, real, real, eps, 0.0);
    CHECK_THAT(loss.discriminator, Catch::Matchers::WithinAbs(0.0, 1e-14));
  }
  SECTION("unit-gradient linear discriminator has zero penalty") {
    // single hidden layer cannot be linear through tanh; use a direct
    // linear check through the graph-level op instead: D(x) = w.x with
    // |w| = 1 makes the penalty vanish; emulate by comparing lambda on/off.
    auto disc = nn::init_mlp(dspec, rng);
    const auto l0 = gan::wgan_gp_losses(disc, real, fake, eps, 0.0);
    const auto l1 = gan::wgan_gp_losses(disc, real, fake, eps, 0.1);
    CHECK(l1.discriminator >= l0.discriminator);  // penalty is nonnegative
    CHECK(l0.generator == l1.generator);
  }
}

TEST_CASE("vanilla loss hand values") {
  const int d = 2;
  nn::MlpSpec dspec{d, 1, 4, 1};
  Rng rng(6);
  metrics::PointCloud real(8, d), fake(8, d);
  for (double& v : real.data) v = rng.uniform_sym(1.0);
  for (double& v : fake.data) v = rng.uniform_sym(1.0);

  SECTION("zero discriminator: s = 1/2, L_g = log(1/2), L_d = 2 log 2") {
    nn::MlpParams disc{dspec, std::vector<double>(dspec.param_count(), 0.0)};
    const auto loss = gan::vanilla_losses(disc, real, fake);
    CHECK_THAT(loss.generator,
               Catch::Matchers::WithinAbs(std::log(0.5), 1e-12));
    CHECK_THAT(loss.discriminator,
               Catch::Matchers::WithinAbs(2.0 * std::log(2.0), 1e-12));
  }
  SECTION("a confident correct discriminator drives L_d toward 0") {
    // big positive bias on real scores via a saturated net is hard to hand
    // build; instead check monotonicity: clamping keeps losses finite for
    // an extreme-bias net.
    nn::MlpParams disc{dspec, std::vector<double>(dspec.param_count(), 0.0)};
    disc.values.back() = 50.0;  // output bias: always "real"
    const auto loss = gan::vanilla_losses(disc, real, fake);
    CHECK(std::isfinite(loss.generator));
    CHECK(std::isfinite(loss.discriminator));
    CHECK(loss.generator < std::log(0.5));
  }
}

TEST_CASE("wgan-gp discriminator gradient matches finite differences") {
  // the tape used by the trainer, checked against numeric losses
  const int width = 3, noise_dim = 2;
  nn::MlpSpec gspec{1 + noise_dim, 1, 4, 1};
  nn::MlpSpec dspec{width, 2, 6, 1};
  Rng rng(9);
  auto d_params = nn::init_mlp(dspec, rng);

  metrics::PointCloud real(4, width), fake(4, width);
  for (double& v : real.data) v = rng.uniform_sym(1.0);
  for (double& v : fake.data) v = rng.uniform_sym(1.0);
  std::vector<double> eps = {0.2, 0.8, 0.4, 0.6};
  const double lambda = 0.1;

  // analytic gradient via a per-sample graph identical to the engine tape
  ad::Graph g;
  auto rho = nn::make_mlp_leaves(g, dspec);
  std::vector<NodeId> in_f, in_r, in_x;
  for (int i = 0; i < width; ++i) in_f.push_back(g.leaf());
  for (int i = 0; i < width; ++i) in_r.push_back(g.leaf());
  for (int i = 0; i < width; ++i) in_x.push_back(g.leaf());
  const NodeId yf = nn::mlp_forward_scalar(g, rho, in_f);
  const NodeId yr = nn::mlp_forward_scalar(g, rho, in_r);
  const NodeId yx = nn::mlp_forward_scalar(g, rho, in_x);
  const auto gvec = g.grad(yx, in_x);
  NodeId norm2 = g.square(gvec[0]);
  for (int i = 1; i < width; ++i) norm2 = g.fma(gvec[i], gvec[i], norm2);
  const NodeId pen =
      g.square(g.sub(g.sqrt(norm2), g.constant(1.0)));
  const NodeId ld =
      g.fma(g.constant(lambda), pen, g.sub(yf, yr));
  const auto grho = g.grad(ld, rho.ids);

  std::vector<double> grad(d_params.values.size(), 0.0);
  for (int j = 0; j < 4; ++j) {
    Bind b;
    bind_mlp(b, rho, d_params);
    for (int i = 0; i < width; ++i) {
      b.push_back({in_f[i], fake.row(j)[i]});
      b.push_back({in_r[i], real.row(j)[i]});
      b.push_back({in_x[i], eps[j] * real.row(j)[i] +
                                (1 - eps[j]) * fake.row(j)[i]});
    }
    for (std::size_t p = 0; p < grad.size(); ++p)
      grad[p] += ad::eval_scalar(g, grho[p], b) / 4.0;
  }

  const double h = 1e-6;
  for (std::size_t p = 0; p < d_params.values.size(); p += 5) {
    auto dp = d_params, dm = d_params;
    dp.values[p] += h;
    dm.values[p] -= h;
    const double fd =
        (gan::wgan_gp_losses(dp, real, fake, eps, lambda).discriminator -
         gan::wgan_gp_losses(dm, real, fake, eps, lambda).discriminator) /
        (2 * h);
    CHECK_THAT(grad[p], Catch::Matchers::WithinAbs(
                            fd, 1e-3 * std::max(1.0, std::fabs(fd))));
  }
}
