#pragma once

// Target stochastic processes: squared-exponential Gaussian processes with
// optional pointwise transforms, sensor layouts on [-1,1], and snapshot
// assembly (one row = one simultaneous read of every sensor = one random
// event).

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdegan/parallel.hpp"
#include "sdegan/rng.hpp"

namespace sdegan::proc {

struct KernelSpec {
  double variance = 1.0;  // sigma^2 = k(x,x)
  double length = 1.0;    // correlation length l

  void validate() const {
    if (!(variance > 0.0) || !(length > 0.0))
      throw std::invalid_argument("KernelSpec: variance and length must be > 0");
  }
};

// k(x,x') = sigma^2 exp(-(x-x')^2 / (2 l^2))
inline Eigen::MatrixXd kernel_matrix(std::span<const double> points,
                                     const KernelSpec& kernel) {
  kernel.validate();
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd m(n, n);
  const double inv2l2 = 1.0 / (2.0 * kernel.length * kernel.length);
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i, i) = kernel.variance;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double d = points[i] - points[j];
      const double v = kernel.variance * std::exp(-d * d * inv2l2);
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

enum class Transform { kIdentity, kExpShift, kBoundaryFactor };

// A stochastic process: pointwise transform of g(x) = mean(x) + GP draw.
//   kIdentity:        y = g(x)
//   kExpShift:        y = exp(shift(x) + g(x))        (strictly positive)
//   kBoundaryFactor:  y = (x^2 - 1) * g(x)            (vanishes at +-1)
struct ProcessSpec {
  std::function<double(double)> mean_fn;   // defaults to zero
  KernelSpec kernel;
  Transform transform = Transform::kIdentity;
  std::function<double(double)> shift_fn;  // s(x) for kExpShift

  double mean_at(double x) const { return mean_fn ? mean_fn(x) : 0.0; }
  double shift_at(double x) const { return shift_fn ? shift_fn(x) : 0.0; }

  // g = mean(x) + zero-mean GP value at x.
  double apply(double x, double g) const {
    switch (transform) {
      case Transform::kIdentity:
        return g;
      case Transform::kExpShift:
        return std::exp(shift_at(x) + g);
      case Transform::kBoundaryFactor:
        return (x * x - 1.0) * g;
    }
    return 0.0;
  }
};

// Cholesky factor with a jitter ladder: start at 1e-12*sigma^2 on the
// diagonal, double until success, give up past 1e-8*sigma^2.
inline Eigen::MatrixXd cholesky_with_jitter(Eigen::MatrixXd m,
                                            double variance) {
  double jitter = 1e-12 * variance;
  const double max_jitter = 1e-8 * variance;
  // First attempt without jitter.
  {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  while (jitter <= max_jitter) {
    Eigen::MatrixXd jm = m;
    jm.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(jm);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    jitter *= 2.0;
  }
  throw std::runtime_error(
      "cholesky_with_jitter: factorization failed up to jitter 1e-8*variance "
      "(matrix badly conditioned)");
}

// n sample paths at `points`, row-major (n x points.size()).  Each path j
// draws its normals from substream `key.child(j)`, so results do not
// depend on evaluation order or thread count.
inline std::vector<double> sample_gp(std::span<const double> points,
                                     const ProcessSpec& spec, int n,
                                     StreamKey key, int n_threads = 1) {
  if (n < 1) throw std::invalid_argument("sample_gp: n must be >= 1");
  const int mpts = static_cast<int>(points.size());
  const Eigen::MatrixXd chol =
      cholesky_with_jitter(kernel_matrix(points, spec.kernel),
                           spec.kernel.variance);
  std::vector<double> paths(std::size_t(n) * mpts);
  parallel_for(n, n_threads, [&](int j) {
    Rng rng = key.child(std::uint64_t(j)).rng();
    Eigen::VectorXd z(mpts);
    for (int i = 0; i < mpts; ++i) z[i] = rng.normal();
    const Eigen::VectorXd g = chol * z;
    double* row = paths.data() + std::size_t(j) * mpts;
    for (int i = 0; i < mpts; ++i)
      row[i] = spec.apply(points[i], spec.mean_at(points[i]) + g[i]);
  });
  return paths;
}

struct SensorLayout {
  std::vector<double> k, u, f, b;  // positions per field, sorted

  int n_k() const { return static_cast<int>(k.size()); }
  int n_u() const { return static_cast<int>(u.size()); }
  int n_f() const { return static_cast<int>(f.size()); }
  int n_b() const { return static_cast<int>(b.size()); }
  int width() const { return n_k() + n_u() + n_f() + n_b(); }

  void validate() const {
    for (const auto* v : {&k, &u, &f, &b}) {
      for (std::size_t i = 0; i < v->size(); ++i) {
        if ((*v)[i] < -1.0 || (*v)[i] > 1.0)
          throw std::invalid_argument("SensorLayout: position outside [-1,1]");
        if (i > 0 && (*v)[i] <= (*v)[i - 1])
          throw std::invalid_argument("SensorLayout: positions must be sorted");
      }
    }
    for (double xb : b)
      if (xb != -1.0 && xb != 1.0)
        throw std::invalid_argument("SensorLayout: b sensors must sit at +-1");
  }
};

// n equispaced points on [lo,hi] including the endpoints; a single sensor
// defaults to the midpoint.
inline std::vector<double> equidistant_points(int n, double lo = -1.0,
                                              double hi = 1.0) {
  if (n < 0) throw std::invalid_argument("equidistant_points: n must be >= 0");
  if (n == 0) return {};
  if (n == 1) return {0.5 * (lo + hi)};
  std::vector<double> pts(n);
  for (int i = 0; i < n; ++i)
    pts[i] = lo + (hi - lo) * double(i) / double(n - 1);
  pts.front() = lo;
  pts.back() = hi;
  return pts;
}

inline SensorLayout equidistant_layout(int n_k, int n_u, int n_f, int n_b,
                                       double lo = -1.0, double hi = 1.0) {
  SensorLayout layout;
  layout.k = equidistant_points(n_k, lo, hi);
  layout.u = equidistant_points(n_u, lo, hi);
  layout.f = equidistant_points(n_f, lo, hi);
  if (n_b > 2)
    throw std::invalid_argument("equidistant_layout: at most 2 boundary sensors");
  if (n_b >= 1) layout.b.push_back(lo);
  if (n_b == 2) layout.b.push_back(hi);
  layout.validate();
  return layout;
}

// One group of snapshots: N rows of simultaneous (K,U,F,B) sensor reads.
struct SnapshotGroup {
  SensorLayout layout;
  int group_index = 0;
  int n_rows = 0;
  std::vector<double> rows;  // row-major, width = layout.width()

  int width() const { return layout.width(); }
  const double* row(int j) const { return rows.data() + std::size_t(j) * width(); }
  double* row(int j) { return rows.data() + std::size_t(j) * width(); }

  void validate() const {
    layout.validate();
    if (rows.size() != std::size_t(n_rows) * width())
      throw std::invalid_argument("SnapshotGroup: row storage size mismatch");
    for (double v : rows)
      if (!std::isfinite(v))
        throw std::invalid_argument("SnapshotGroup: non-finite entry");
  }
};

// Concatenates per-field path matrices (each n x n_field, row j = event j)
// into snapshot rows in (K,U,F,B) order.  Fields without sensors pass {}.
inline SnapshotGroup collect_snapshots(const SensorLayout& layout,
                                       std::span<const double> k_paths,
                                       std::span<const double> u_paths,
                                       std::span<const double> f_paths,
                                       std::span<const double> b_paths,
                                       int n, int group_index = 0) {
  layout.validate();
  auto check = [&](std::span<const double> paths, int cols, const char* name) {
    if (paths.size() != std::size_t(n) * cols)
      throw std::invalid_argument(std::string("collect_snapshots: ") + name +
                                  " length mismatch");
  };
  check(k_paths, layout.n_k(), "k");
  check(u_paths, layout.n_u(), "u");
  check(f_paths, layout.n_f(), "f");
  check(b_paths, layout.n_b(), "b");

  SnapshotGroup group{layout, group_index, n, {}};
  group.rows.resize(std::size_t(n) * layout.width());
  for (int j = 0; j < n; ++j) {
    double* out = group.row(j);
    auto put = [&](std::span<const double> paths, int cols) {
      const double* src = paths.data() + std::size_t(j) * cols;
      for (int i = 0; i < cols; ++i) *out++ = src[i];
    };
    put(k_paths, layout.n_k());
    put(u_paths, layout.n_u());
    put(f_paths, layout.n_f());
    put(b_paths, layout.n_b());
  }
  group.validate();
  return group;
}

}  // namespace sdegan::proc
