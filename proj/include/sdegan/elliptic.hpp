#pragma once

// Finite-difference oracle for the stochastic elliptic problem
//   -(1/10) d/dx [ k(x) u'(x) ] = f(x)  on [-1,1],  u(-1)=u(1)=0,
// and its Monte-Carlo reference statistics.  Conservative flux form with
// arithmetic-mean interface coefficients; tridiagonal (Thomas) solve;
// second-order accurate.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "sdegan/parallel.hpp"
#include "sdegan/processes.hpp"
#include "sdegan/rng.hpp"

namespace sdegan::ell {

struct Grid1D {
  int m = 0;
  double h = 0.0;
  std::vector<double> points;

  static Grid1D uniform(int m) {
    if (m < 3) throw std::invalid_argument("Grid1D: need at least 3 points");
    Grid1D g;
    g.m = m;
    g.h = 2.0 / (m - 1);
    g.points = proc::equidistant_points(m);
    return g;
  }
};

// k and f given at the grid points; returns u with u(+-1)=0.
inline std::vector<double> solve_elliptic_fd(std::span<const double> k,
                                             std::span<const double> f,
                                             const Grid1D& grid) {
  const int m = grid.m;
  if (static_cast<int>(k.size()) != m || static_cast<int>(f.size()) != m)
    throw std::invalid_argument("solve_elliptic_fd: field size mismatch");
  for (double kv : k)
    if (!(kv > 0.0))
      throw std::invalid_argument("solve_elliptic_fd: k must be positive");

  // Interior unknowns i = 1..m-2 with interface coefficients
  // k_{i+1/2} = (k_i + k_{i+1})/2 and scale c = 1/(10 h^2):
  //   c*(k_{i-1/2}+k_{i+1/2}) u_i - c*k_{i-1/2} u_{i-1} - c*k_{i+1/2} u_{i+1} = f_i
  const int n = m - 2;
  const double c = 1.0 / (10.0 * grid.h * grid.h);
  std::vector<double> diag(n), lower(n), upper(n), rhs(n);
  for (int i = 1; i <= n; ++i) {
    const double km = 0.5 * (k[i - 1] + k[i]);
    const double kp = 0.5 * (k[i] + k[i + 1]);
    diag[i - 1] = c * (km + kp);
    lower[i - 1] = -c * km;
    upper[i - 1] = -c * kp;
    rhs[i - 1] = f[i];
  }

  // Thomas algorithm.
  for (int i = 1; i < n; ++i) {
    if (diag[i - 1] == 0.0)
      throw std::runtime_error("solve_elliptic_fd: singular system");
    const double w = lower[i] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  if (diag[n - 1] == 0.0)
    throw std::runtime_error("solve_elliptic_fd: singular system");

  std::vector<double> u(m, 0.0);
  u[n] = rhs[n - 1] / diag[n - 1];
  for (int i = n - 1; i >= 1; --i)
    u[i] = (rhs[i - 1] - upper[i - 1] * u[i + 1]) / diag[i - 1];
  for (double uv : u)
    if (!std::isfinite(uv))
      throw std::runtime_error("solve_elliptic_fd: non-finite solution");
  return u;
}

// Cubic (4-point Lagrange) interpolation on a uniform grid; exact at grid
// points.  Used to read sensors that fall off the oracle grid.
inline double interp_cubic(const Grid1D& grid, std::span<const double> values,
                           double x) {
  const int m = grid.m;
  const double t = (x + 1.0) / grid.h;
  const double r = std::round(t);
  if (std::abs(t - r) < 1e-9 && r >= 0.0 && r <= double(m - 1))
    return values[static_cast<int>(r)];  // grid coincidence
  int i = static_cast<int>(std::floor(t));
  i = std::clamp(i, 0, m - 2);
  int i0 = std::clamp(i - 1, 0, m - 4);
  const double s = t - i0;
  double result = 0.0;
  for (int j = 0; j < 4; ++j) {
    double lj = 1.0;
    for (int l = 0; l < 4; ++l)
      if (l != j) lj *= (s - l) / double(j - l);
    result += lj * values[i0 + j];
  }
  return result;
}

struct FieldStats {
  std::vector<double> mean, stddev;
  std::vector<double> spectra;  // descending covariance eigenvalues
};

struct ReferenceStats {
  Grid1D grid;
  std::int64_t n_paths = 0;
  std::int64_t n_skipped = 0;
  FieldStats u, k, f;
  // Eq-22-style correlation coefficients between paired fields:
  // c_ku over interior points, c_kf over the full grid.
  double c_ku = 0.0;
  double c_kf = 0.0;
};

namespace detail {

// Streaming accumulator: pointwise first/second moments plus the Gram
// matrix for covariance spectra.
struct FieldAccum {
  Eigen::VectorXd sum, sum2;
  Eigen::MatrixXd gram;
  std::int64_t n = 0;

  explicit FieldAccum(int m)
      : sum(Eigen::VectorXd::Zero(m)),
        sum2(Eigen::VectorXd::Zero(m)),
        gram(Eigen::MatrixXd::Zero(m, m)) {}

  void add(const Eigen::VectorXd& path) {
    sum += path;
    sum2 += path.cwiseProduct(path);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(path, 1.0);
    ++n;
  }

  void merge(const FieldAccum& o) {
    sum += o.sum;
    sum2 += o.sum2;
    gram += o.gram;
    n += o.n;
  }

  FieldStats finish() const {
    if (n < 2)
      throw std::runtime_error("reference stats need at least 2 paths");
    const auto m = sum.size();
    FieldStats out;
    const Eigen::VectorXd mean = sum / double(n);
    Eigen::VectorXd var =
        (sum2 - double(n) * mean.cwiseProduct(mean)) / double(n - 1);
    var = var.cwiseMax(0.0);
    out.mean.assign(mean.data(), mean.data() + m);
    out.stddev.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) out.stddev[i] = std::sqrt(var[i]);
    Eigen::MatrixXd cov = Eigen::MatrixXd(gram.selfadjointView<Eigen::Lower>());
    cov -= double(n) * mean * mean.transpose();
    cov /= double(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov,
                                                      Eigen::EigenvaluesOnly);
    Eigen::VectorXd ev = es.eigenvalues().reverse();
    out.spectra.resize(m);
    for (Eigen::Index i = 0; i < m; ++i)
      out.spectra[i] = std::max(ev[i], 0.0);
    return out;
  }
};

inline double abs_corr_mean(const Eigen::VectorXd& s1, const Eigen::VectorXd& s12,
                            const Eigen::VectorXd& s2, const Eigen::VectorXd& sq1,
                            const Eigen::VectorXd& sq2, std::int64_t n, int lo,
                            int hi) {
  double acc = 0.0;
  int cnt = 0;
  for (int i = lo; i < hi; ++i) {
    const double m1 = s1[i] / double(n), m2 = s2[i] / double(n);
    const double cov = (s12[i] - double(n) * m1 * m2) / double(n - 1);
    const double v1 = (sq1[i] - double(n) * m1 * m1) / double(n - 1);
    const double v2 = (sq2[i] - double(n) * m2 * m2) / double(n - 1);
    if (v1 <= 0.0 || v2 <= 0.0) continue;
    acc += std::abs(cov / std::sqrt(v1 * v2));
    ++cnt;
  }
  return cnt > 0 ? acc / cnt : 0.0;
}

}  // namespace detail

// Monte-Carlo reference: samples k and f independently per path, solves the
// elliptic problem and accumulates pointwise statistics, covariance spectra
// and cross-field correlations.  Deterministic for a fixed key regardless
// of thread count (fixed 256-path chunks, sequential merge).
inline ReferenceStats mc_reference(const proc::ProcessSpec& k_spec,
                                   const proc::ProcessSpec& f_spec,
                                   std::int64_t n_paths, const Grid1D& grid,
                                   StreamKey key, int n_threads = 1) {
  if (n_paths < 2)
    throw std::invalid_argument("mc_reference: need n_paths >= 2 for unbiased std");
  const int m = grid.m;
  const Eigen::MatrixXd chol_k = proc::cholesky_with_jitter(
      proc::kernel_matrix(grid.points, k_spec.kernel), k_spec.kernel.variance);
  const Eigen::MatrixXd chol_f = proc::cholesky_with_jitter(
      proc::kernel_matrix(grid.points, f_spec.kernel), f_spec.kernel.variance);

  constexpr std::int64_t kChunk = 256;
  const int n_chunks = static_cast<int>((n_paths + kChunk - 1) / kChunk);

  struct ChunkAccum {
    detail::FieldAccum u, k, f;
    Eigen::VectorXd s_ku, s_kf;
    std::int64_t skipped = 0;
    explicit ChunkAccum(int m)
        : u(m), k(m), f(m), s_ku(Eigen::VectorXd::Zero(m)),
          s_kf(Eigen::VectorXd::Zero(m)) {}
  };
  std::vector<ChunkAccum> acc(n_chunks, ChunkAccum(m));

  const StreamKey k_key = key.child(1), f_key = key.child(2);
  parallel_for(n_chunks, n_threads, [&](int chunk) {
    ChunkAccum& a = acc[chunk];
    Eigen::VectorXd zk(m), zf(m), kp(m), fp(m);
    const std::int64_t lo = chunk * kChunk;
    const std::int64_t hi = std::min(n_paths, lo + kChunk);
    for (std::int64_t j = lo; j < hi; ++j) {
      Rng rk = k_key.child(std::uint64_t(j)).rng();
      Rng rf = f_key.child(std::uint64_t(j)).rng();
      for (int i = 0; i < m; ++i) zk[i] = rk.normal();
      for (int i = 0; i < m; ++i) zf[i] = rf.normal();
      const Eigen::VectorXd gk = chol_k * zk;
      const Eigen::VectorXd gf = chol_f * zf;
      for (int i = 0; i < m; ++i) {
        const double x = grid.points[i];
        kp[i] = k_spec.apply(x, k_spec.mean_at(x) + gk[i]);
        fp[i] = f_spec.apply(x, f_spec.mean_at(x) + gf[i]);
      }
      try {
        const std::vector<double> u = solve_elliptic_fd(
            {kp.data(), size_t(m)}, {fp.data(), size_t(m)}, grid);
        Eigen::Map<const Eigen::VectorXd> up(u.data(), m);
        a.u.add(up);
        a.k.add(kp);
        a.f.add(fp);
        a.s_ku += kp.cwiseProduct(up);
        a.s_kf += kp.cwiseProduct(fp);
      } catch (const std::exception&) {
        ++a.skipped;
      }
    }
  });

  ChunkAccum total(m);
  for (const ChunkAccum& a : acc) {
    total.u.merge(a.u);
    total.k.merge(a.k);
    total.f.merge(a.f);
    total.s_ku += a.s_ku;
    total.s_kf += a.s_kf;
    total.skipped += a.skipped;
  }

  ReferenceStats stats;
  stats.grid = grid;
  stats.n_paths = total.u.n;
  stats.n_skipped = total.skipped;
  stats.u = total.u.finish();
  stats.k = total.k.finish();
  stats.f = total.f.finish();
  stats.c_ku = detail::abs_corr_mean(total.k.sum, total.s_ku, total.u.sum,
                                     total.k.sum2, total.u.sum2, total.u.n, 1,
                                     m - 1);
  stats.c_kf = detail::abs_corr_mean(total.k.sum, total.s_kf, total.f.sum,
                                     total.k.sum2, total.f.sum2, total.u.n, 0,
                                     m);
  return stats;
}

// Training snapshots paired with the oracle: per event, k and f are sampled
// jointly on (grid  U  sensor positions) so sensor reads are exact, u reads
// come from the per-event solve (cubic interpolation off-grid), and b reads
// are the boundary trace of u.
inline proc::SnapshotGroup mc_training_snapshots(
    const proc::ProcessSpec& k_spec, const proc::ProcessSpec& f_spec,
    const proc::SensorLayout& layout, int n, const Grid1D& grid,
    StreamKey key, int group_index = 0, int n_threads = 1) {
  layout.validate();
  const int m = grid.m;

  // union point set: grid first, then off-grid sensors (per field)
  auto build_union = [&](const std::vector<double>& sensors,
                         std::vector<int>& sensor_slot) {
    std::vector<double> pts = grid.points;
    sensor_slot.resize(sensors.size());
    for (std::size_t s = 0; s < sensors.size(); ++s) {
      const double t = (sensors[s] + 1.0) / grid.h;
      const double r = std::round(t);
      if (std::abs(t - r) < 1e-9 && r >= 0 && r < m) {
        sensor_slot[s] = static_cast<int>(r);
      } else {
        sensor_slot[s] = static_cast<int>(pts.size());
        pts.push_back(sensors[s]);
      }
    }
    return pts;
  };
  std::vector<int> k_slot, f_slot;
  const std::vector<double> k_pts = build_union(layout.k, k_slot);
  const std::vector<double> f_pts = build_union(layout.f, f_slot);

  const Eigen::MatrixXd chol_k = proc::cholesky_with_jitter(
      proc::kernel_matrix(k_pts, k_spec.kernel), k_spec.kernel.variance);
  const Eigen::MatrixXd chol_f = proc::cholesky_with_jitter(
      proc::kernel_matrix(f_pts, f_spec.kernel), f_spec.kernel.variance);

  const int width = layout.width();
  std::vector<double> rows(std::size_t(n) * width);
  const StreamKey k_key = key.child(1), f_key = key.child(2);
  parallel_for(n, n_threads, [&](int j) {
    Rng rk = k_key.child(std::uint64_t(j)).rng();
    Rng rf = f_key.child(std::uint64_t(j)).rng();
    Eigen::VectorXd zk(chol_k.rows()), zf(chol_f.rows());
    for (Eigen::Index i = 0; i < zk.size(); ++i) zk[i] = rk.normal();
    for (Eigen::Index i = 0; i < zf.size(); ++i) zf[i] = rf.normal();
    const Eigen::VectorXd gk = chol_k * zk;
    const Eigen::VectorXd gf = chol_f * zf;
    std::vector<double> kv(k_pts.size()), fv(f_pts.size());
    for (std::size_t i = 0; i < k_pts.size(); ++i)
      kv[i] = k_spec.apply(k_pts[i], k_spec.mean_at(k_pts[i]) + gk[i]);
    for (std::size_t i = 0; i < f_pts.size(); ++i)
      fv[i] = f_spec.apply(f_pts[i], f_spec.mean_at(f_pts[i]) + gf[i]);
    const std::vector<double> u = solve_elliptic_fd(
        {kv.data(), std::size_t(m)}, {fv.data(), std::size_t(m)}, grid);

    double* out = rows.data() + std::size_t(j) * width;
    for (std::size_t s = 0; s < layout.k.size(); ++s) *out++ = kv[k_slot[s]];
    for (double xu : layout.u) *out++ = interp_cubic(grid, u, xu);
    for (std::size_t s = 0; s < layout.f.size(); ++s) *out++ = fv[f_slot[s]];
    for (double xb : layout.b) *out++ = interp_cubic(grid, u, xb);
  });

  proc::SnapshotGroup group{layout, group_index, n, std::move(rows)};
  group.validate();
  return group;
}

}  // namespace sdegan::ell
