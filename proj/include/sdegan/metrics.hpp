#pragma once

// Evaluation quantities: exact empirical Wasserstein-1 between equal-size
// point clouds, covariance spectra (PCA of sample paths), pointwise
// correlation coefficients, discrete-L2 relative errors, and the
// overfitting diagnostics row.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "sdegan/rng.hpp"

namespace sdegan::metrics {

// Uniform-weight empirical distribution: n rows of d-dimensional snapshots.
struct PointCloud {
  int n = 0, d = 0;
  std::vector<double> data;  // row-major

  PointCloud() = default;
  PointCloud(int n_, int d_) : n(n_), d(d_), data(std::size_t(n_) * d_, 0.0) {}

  const double* row(int j) const { return data.data() + std::size_t(j) * d; }
  double* row(int j) { return data.data() + std::size_t(j) * d; }

  void validate() const {
    if (n < 1 || d < 1 || data.size() != std::size_t(n) * d)
      throw std::invalid_argument("PointCloud: bad shape");
    for (double v : data)
      if (!std::isfinite(v))
        throw std::invalid_argument("PointCloud: non-finite entry");
  }

  PointCloud head(int m) const {
    if (m > n) throw std::invalid_argument("PointCloud::head: not enough rows");
    PointCloud out(m, d);
    std::copy(data.begin(), data.begin() + std::size_t(m) * d,
              out.data.begin());
    return out;
  }
};

namespace detail {

// Exact square linear assignment by successive shortest augmenting paths
// (Jonker-Volgenant style, the formulation used by common LAP solvers).
// Returns, in col4row, the column assigned to each row of `cost`.
inline void solve_assignment(const std::vector<double>& cost, int n,
                             std::vector<int>& col4row) {
  std::vector<double> u(n, 0.0), v(n, 0.0), shortest(n);
  std::vector<int> path(n, -1), remaining(n), row4col(n, -1);
  std::vector<char> scanned_row(n), scanned_col(n);
  col4row.assign(n, -1);

  for (int cur_row = 0; cur_row < n; ++cur_row) {
    std::fill(shortest.begin(), shortest.end(),
              std::numeric_limits<double>::infinity());
    std::fill(scanned_row.begin(), scanned_row.end(), 0);
    std::fill(scanned_col.begin(), scanned_col.end(), 0);
    for (int it = 0; it < n; ++it) remaining[it] = n - it - 1;
    int num_remaining = n;

    double min_val = 0.0;
    int i = cur_row;
    int sink = -1;
    while (sink == -1) {
      scanned_row[i] = 1;
      int index = -1;
      double lowest = std::numeric_limits<double>::infinity();
      for (int it = 0; it < num_remaining; ++it) {
        const int j = remaining[it];
        const double r = min_val + cost[std::size_t(i) * n + j] - u[i] - v[j];
        if (r < shortest[j]) {
          path[j] = i;
          shortest[j] = r;
        }
        if (shortest[j] < lowest ||
            (shortest[j] == lowest && row4col[j] == -1)) {
          lowest = shortest[j];
          index = it;
        }
      }
      min_val = lowest;
      if (!(min_val < std::numeric_limits<double>::infinity()))
        throw std::runtime_error("assignment: infeasible cost matrix");
      const int j = remaining[index];
      if (row4col[j] == -1) sink = j;
      else i = row4col[j];
      scanned_col[j] = 1;
      remaining[index] = remaining[--num_remaining];
    }

    u[cur_row] += min_val;
    for (int r = 0; r < n; ++r)
      if (scanned_row[r] && r != cur_row)
        u[r] += min_val - shortest[col4row[r]];
    for (int j = 0; j < n; ++j)
      if (scanned_col[j]) v[j] -= min_val - shortest[j];

    int j = sink;
    for (;;) {
      const int r = path[j];
      row4col[j] = r;
      std::swap(col4row[r], j);
      if (r == cur_row) break;
    }
  }
}

}  // namespace detail

// Exact empirical Wasserstein-1 with Euclidean ground cost:
// (1/n) min over pairings of sum ||a_i - b_sigma(i)||_2.
inline double w1_empirical(const PointCloud& a, const PointCloud& b) {
  a.validate();
  b.validate();
  if (a.n != b.n || a.d != b.d)
    throw std::invalid_argument("w1_empirical: clouds must share n and d");
  const int n = a.n, d = a.d;

  if (d == 1) {
    // sorted pairing is optimal on the line
    std::vector<double> av(a.data), bv(b.data);
    std::sort(av.begin(), av.end());
    std::sort(bv.begin(), bv.end());
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += std::fabs(av[i] - bv[i]);
    return total / n;
  }

  std::vector<double> cost(std::size_t(n) * n);
  for (int i = 0; i < n; ++i) {
    const double* ra = a.row(i);
    for (int j = 0; j < n; ++j) {
      const double* rb = b.row(j);
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = ra[k] - rb[k];
        s += diff * diff;
      }
      cost[std::size_t(i) * n + j] = std::sqrt(s);
    }
  }
  std::vector<int> col4row;
  detail::solve_assignment(cost, n, col4row);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost[std::size_t(i) * n + col4row[i]];
  return total / n;
}

struct SpectraReport {
  std::vector<double> eigenvalues;  // descending, clamped at 0
  int grid_size = 0;
  int n_paths = 0;
};

// Eigenvalues of the unbiased empirical covariance of path values across
// the grid, descending.
inline SpectraReport spectra(const PointCloud& paths) {
  paths.validate();
  if (paths.n < 2) throw std::invalid_argument("spectra: need at least 2 paths");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      x(paths.data.data(), paths.n, paths.d);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / double(paths.n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);

  SpectraReport report;
  report.grid_size = paths.d;
  report.n_paths = paths.n;
  report.eigenvalues.resize(paths.d);
  const double scale = std::max(1.0, cov.trace());
  for (int i = 0; i < paths.d; ++i) {
    double ev = es.eigenvalues()[paths.d - 1 - i];
    if (ev < 0.0) {
      if (ev < -1e-12 * scale)
        throw std::runtime_error("spectra: covariance significantly indefinite");
      ev = 0.0;
    }
    report.eigenvalues[i] = ev;
  }
  return report;
}

struct CorrelationResult {
  double value = 0.0;
  int excluded_points = 0;  // grid points with vanishing variance
};

// Mean over grid points of |Cov(f1(x_i), f2(x_i))| / sqrt(Var f1 Var f2),
// with paired paths (row j of both clouds = same event).
inline CorrelationResult correlation_coefficient(const PointCloud& f1,
                                                 const PointCloud& f2) {
  f1.validate();
  f2.validate();
  if (f1.n != f2.n || f1.d != f2.d)
    throw std::invalid_argument("correlation_coefficient: shape mismatch");
  if (f1.n < 2)
    throw std::invalid_argument("correlation_coefficient: need >= 2 paths");
  const int n = f1.n, d = f1.d;
  CorrelationResult res;
  double acc = 0.0;
  int used = 0;
  for (int i = 0; i < d; ++i) {
    double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0;
    for (int j = 0; j < n; ++j) {
      const double v1 = f1.row(j)[i], v2 = f2.row(j)[i];
      s1 += v1;
      s2 += v2;
      s11 += v1 * v1;
      s22 += v2 * v2;
      s12 += v1 * v2;
    }
    const double m1 = s1 / n, m2 = s2 / n;
    const double var1 = (s11 - n * m1 * m1) / (n - 1);
    const double var2 = (s22 - n * m2 * m2) / (n - 1);
    if (var1 <= 0.0 || var2 <= 0.0) {
      ++res.excluded_points;
      continue;
    }
    const double cov = (s12 - n * m1 * m2) / (n - 1);
    acc += std::min(1.0, std::fabs(cov) / std::sqrt(var1 * var2));
    ++used;
  }
  if (used == 0)
    throw std::runtime_error("correlation_coefficient: all points excluded");
  res.value = acc / used;
  return res;
}

// Discrete L2 relative error over a shared evaluation grid.
inline double relative_error(std::span<const double> estimate,
                             std::span<const double> reference) {
  if (estimate.size() != reference.size())
    throw std::invalid_argument("relative_error: grid mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double diff = estimate[i] - reference[i];
    num += diff * diff;
    den += reference[i] * reference[i];
  }
  if (den == 0.0)
    throw std::invalid_argument("relative_error: zero-norm reference");
  return std::sqrt(num / den);
}

struct OverfitReport {
  double neg_ld_train = 0.0;   // -L_d with training rows as the real batch
  double neg_ld_val = 0.0;     // -L_d with validation rows
  double w1_gen_train = 0.0;   // W1(gen, train)
  double w1_gen_val = 0.0;     // W1(gen, validation)
  double baseline_mean = 0.0;  // E[W1(real_1, real_2)], 50 independent pairs
  double baseline_std = 0.0;
  int n = 0;
};

// neg_ld(real, fake): negative discriminator loss for the given batches.
// sampler(count, stream): fresh snapshots from the true process.
inline OverfitReport overfit_report(
    const std::function<double(const PointCloud&, const PointCloud&)>& neg_ld,
    const std::function<PointCloud(int, StreamKey)>& sampler,
    const PointCloud& train, const PointCloud& validation,
    const PointCloud& generated, int n, StreamKey key, int baseline_pairs = 50) {
  if (train.n < n || validation.n < n || generated.n < n)
    throw std::invalid_argument("overfit_report: clouds smaller than n");
  OverfitReport report;
  report.n = n;
  const PointCloud gen_n = generated.head(n);
  const PointCloud train_n = train.head(n);
  const PointCloud val_n = validation.head(n);
  report.w1_gen_train = w1_empirical(gen_n, train_n);
  report.w1_gen_val = w1_empirical(gen_n, val_n);
  report.neg_ld_train = neg_ld(train_n, gen_n);
  report.neg_ld_val = neg_ld(val_n, gen_n);

  double s = 0.0, s2 = 0.0;
  for (int p = 0; p < baseline_pairs; ++p) {
    const PointCloud r1 = sampler(n, key.child(2 * p));
    const PointCloud r2 = sampler(n, key.child(2 * p + 1));
    const double w = w1_empirical(r1, r2);
    s += w;
    s2 += w * w;
  }
  report.baseline_mean = s / baseline_pairs;
  const double var =
      (s2 - baseline_pairs * report.baseline_mean * report.baseline_mean) /
      (baseline_pairs - 1);
  report.baseline_std = std::sqrt(std::max(0.0, var));
  return report;
}

}  // namespace sdegan::metrics
