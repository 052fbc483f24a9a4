#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdegan/metrics.hpp"
#include "sdegan/rng.hpp"

using namespace sdegan;
using metrics::PointCloud;

namespace {

PointCloud random_cloud(int n, int d, Rng& rng, double scale = 1.0) {
  PointCloud c(n, d);
  for (double& v : c.data) v = rng.uniform_sym(scale);
  return c;
}

// Brute-force permutation minimum, the independent oracle for w1.
double w1_brute(const PointCloud& a, const PointCloud& b) {
  const int n = a.n, d = a.d;
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = a.row(i)[k] - b.row(perm[i])[k];
        s += diff * diff;
      }
      total += std::sqrt(s);
    }
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / n;
}

}  // namespace

TEST_CASE("w1 basics") {
  SECTION("identical clouds have distance zero") {
    Rng rng(1);
    const auto a = random_cloud(20, 3, rng);
    CHECK(metrics::w1_empirical(a, a) == 0.0);
  }
  SECTION("1-d singletons: distance |a-b|") {
    PointCloud a(1, 1), b(1, 1);
    a.data = {0.0};
    b.data = {1.0};
    CHECK(metrics::w1_empirical(a, b) == 1.0);
  }
  SECTION("1-d {0,1} vs {1,2}: both pairings cost 2, so w1 = 1") {
    PointCloud a(2, 1), b(2, 1);
    a.data = {0.0, 1.0};
    b.data = {1.0, 2.0};
    CHECK(metrics::w1_empirical(a, b) == 1.0);
  }
  SECTION("size mismatch rejected") {
    PointCloud a(2, 1), b(3, 1);
    a.data = {0.0, 1.0};
    b.data = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(metrics::w1_empirical(a, b), std::invalid_argument);
  }
}

TEST_CASE("w1 equals the brute-force permutation minimum") {
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + int(rng.next_u64() % 5);  // up to 6
    const int d = 2 + int(rng.next_u64() % 3);  // 2..4 (d=1 goes to sorting)
    const auto a = random_cloud(n, d, rng);
    const auto b = random_cloud(n, d, rng);
    const double fast = metrics::w1_empirical(a, b);
    const double brute = w1_brute(a, b);
    CHECK_THAT(fast, Catch::Matchers::WithinAbs(brute, 1e-12));
  }
}

TEST_CASE("w1 in 1-d equals the sorted pairing") {
  Rng rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + int(rng.next_u64() % 40);
    auto a = random_cloud(n, 1, rng);
    auto b = random_cloud(n, 1, rng);
    std::vector<double> av = a.data, bv = b.data;
    std::sort(av.begin(), av.end());
    std::sort(bv.begin(), bv.end());
    double expect = 0.0;
    for (int i = 0; i < n; ++i) expect += std::fabs(av[i] - bv[i]);
    expect /= n;
    CHECK_THAT(metrics::w1_empirical(a, b),
               Catch::Matchers::WithinAbs(expect, 1e-13));
  }
}

TEST_CASE("w1 is a metric on equal-size clouds") {
  Rng rng(44);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + int(rng.next_u64() % 4);
    const int d = 1 + int(rng.next_u64() % 3);
    const auto a = random_cloud(n, d, rng);
    const auto b = random_cloud(n, d, rng);
    const auto c = random_cloud(n, d, rng);
    const double ab = metrics::w1_empirical(a, b);
    const double ba = metrics::w1_empirical(b, a);
    const double ac = metrics::w1_empirical(a, c);
    const double cb = metrics::w1_empirical(c, b);
    CHECK_THAT(ab, Catch::Matchers::WithinAbs(ba, 1e-12));
    CHECK(ab >= 0.0);
    CHECK(ab <= ac + cb + 1e-12);
  }
}

TEST_CASE("spectra") {
  SECTION("identical paths have all-zero eigenvalues") {
    PointCloud paths(5, 4);
    for (int j = 0; j < 5; ++j)
      for (int i = 0; i < 4; ++i) paths.row(j)[i] = double(i);
    const auto rep = metrics::spectra(paths);
    for (double ev : rep.eigenvalues) CHECK(ev == 0.0);
  }
  SECTION("rank-1 paths a*phi give a single eigenvalue sum phi^2") {
    Rng rng(7);
    const int n = 5000, d = 6;
    std::vector<double> phi = {0.3, -1.1, 0.7, 2.0, -0.4, 0.9};
    PointCloud paths(n, d);
    double s = 0.0, s2 = 0.0;
    std::vector<double> amps(n);
    for (int j = 0; j < n; ++j) {
      amps[j] = rng.normal();
      s += amps[j];
      s2 += amps[j] * amps[j];
    }
    // standardize so the sample variance of a is exactly 1
    const double mean = s / n;
    const double sd = std::sqrt((s2 - n * mean * mean) / (n - 1));
    for (int j = 0; j < n; ++j) {
      const double a = (amps[j] - mean) / sd;
      for (int i = 0; i < d; ++i) paths.row(j)[i] = a * phi[i];
    }
    const auto rep = metrics::spectra(paths);
    double phi2 = 0.0;
    for (double p : phi) phi2 += p * p;
    CHECK_THAT(rep.eigenvalues[0], Catch::Matchers::WithinRel(phi2, 1e-10));
    for (int i = 1; i < d; ++i)
      CHECK_THAT(rep.eigenvalues[i], Catch::Matchers::WithinAbs(0.0, 1e-10));
  }
  SECTION("eigenvalue sum equals total pointwise variance") {
    Rng rng(8);
    const auto paths = random_cloud(200, 7, rng);
    const auto rep = metrics::spectra(paths);
    double trace = 0.0;
    for (int i = 0; i < 7; ++i) {
      double s = 0.0, s2 = 0.0;
      for (int j = 0; j < 200; ++j) {
        s += paths.row(j)[i];
        s2 += paths.row(j)[i] * paths.row(j)[i];
      }
      trace += (s2 - 200.0 * (s / 200) * (s / 200)) / 199.0;
    }
    double sum = 0.0;
    for (double ev : rep.eigenvalues) sum += ev;
    CHECK_THAT(sum, Catch::Matchers::WithinRel(trace, 1e-9));
  }
  SECTION("invariant to path order and to a shared constant shift") {
    Rng rng(9);
    auto paths = random_cloud(50, 5, rng);
    auto rep1 = metrics::spectra(paths);
    PointCloud shuffled = paths;
    std::reverse(shuffled.data.begin(), shuffled.data.end());
    // reversing all doubles reverses rows *and* columns; instead swap rows
    shuffled = paths;
    for (int j = 0; j < 25; ++j)
      std::swap_ranges(shuffled.row(j), shuffled.row(j) + 5,
                       shuffled.row(49 - j));
    auto rep2 = metrics::spectra(shuffled);
    PointCloud shifted = paths;
    for (int j = 0; j < 50; ++j)
      for (int i = 0; i < 5; ++i) shifted.row(j)[i] += 3.25;
    auto rep3 = metrics::spectra(shifted);
    for (int i = 0; i < 5; ++i) {
      CHECK_THAT(rep2.eigenvalues[i],
                 Catch::Matchers::WithinAbs(rep1.eigenvalues[i], 1e-11));
      CHECK_THAT(rep3.eigenvalues[i],
                 Catch::Matchers::WithinAbs(rep1.eigenvalues[i], 1e-10));
    }
  }
}

TEST_CASE("correlation coefficient") {
  Rng rng(10);
  const auto f1 = random_cloud(500, 9, rng);

  SECTION("self-correlation is 1, anti-correlation too") {
    auto res = metrics::correlation_coefficient(f1, f1);
    CHECK_THAT(res.value, Catch::Matchers::WithinAbs(1.0, 1e-12));
    PointCloud neg = f1;
    for (double& v : neg.data) v = -v;
    res = metrics::correlation_coefficient(f1, neg);
    CHECK_THAT(res.value, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
  SECTION("scale invariance") {
    const auto f2 = random_cloud(500, 9, rng);
    PointCloud sa = f1, sb = f2;
    for (double& v : sa.data) v *= -3.7;
    for (double& v : sb.data) v *= 0.04;
    const double base = metrics::correlation_coefficient(f1, f2).value;
    const double scaled = metrics::correlation_coefficient(sa, sb).value;
    CHECK_THAT(scaled, Catch::Matchers::WithinAbs(base, 1e-12));
  }
  SECTION("zero-variance points are excluded and counted") {
    PointCloud a = f1, b = random_cloud(500, 9, rng);
    for (int j = 0; j < 500; ++j) a.row(j)[4] = 2.0;
    const auto res = metrics::correlation_coefficient(a, b);
    CHECK(res.excluded_points == 1);
    CHECK(res.value >= 0.0);
    CHECK(res.value <= 1.0);
  }
}

TEST_CASE("relative error") {
  const std::vector<double> ref = {1.0, -2.0, 0.5, 3.0};
  SECTION("exact estimate gives zero") {
    CHECK(metrics::relative_error(ref, ref) == 0.0);
  }
  SECTION("homogeneity: est = 1.1 ref gives 0.1") {
    std::vector<double> est(ref);
    for (double& v : est) v *= 1.1;
    CHECK_THAT(metrics::relative_error(est, ref),
               Catch::Matchers::WithinRel(0.1, 1e-12));
  }
  SECTION("single off point contributes c/||ref||") {
    std::vector<double> est(ref);
    est[2] += 0.25;
    double norm = 0.0;
    for (double v : ref) norm += v * v;
    CHECK_THAT(metrics::relative_error(est, ref),
               Catch::Matchers::WithinRel(0.25 / std::sqrt(norm), 1e-12));
  }
  SECTION("zero reference rejected") {
    const std::vector<double> zero = {0.0, 0.0};
    const std::vector<double> est = {1.0, 1.0};
    CHECK_THROWS_AS(metrics::relative_error(est, zero), std::invalid_argument);
  }
  SECTION("scale invariance in both arguments") {
    std::vector<double> est = {1.1, -2.2, 0.4, 3.3};
    std::vector<double> est2(est), ref2(ref);
    for (double& v : est2) v *= -7.0;
    for (double& v : ref2) v *= -7.0;
    CHECK_THAT(metrics::relative_error(est2, ref2),
               Catch::Matchers::WithinRel(metrics::relative_error(est, ref),
                                          1e-12));
  }
}

TEST_CASE("overfit diagnostics mechanics") {
  // True process: independent standard normals in 3-d (cheap and exact).
  const int d = 3, n = 64;
  auto sampler = [&](int count, StreamKey key) {
    Rng rng = key.rng();
    PointCloud c(count, d);
    for (double& v : c.data) v = rng.normal();
    return c;
  };
  auto neg_ld = [](const PointCloud& real, const PointCloud& fake) {
    // stand-in diagnostic: difference of first-coordinate means
    double mr = 0.0, mf = 0.0;
    for (int j = 0; j < real.n; ++j) mr += real.row(j)[0];
    for (int j = 0; j < fake.n; ++j) mf += fake.row(j)[0];
    return mr / real.n - mf / fake.n;
  };
  const PointCloud train = sampler(n, StreamKey{100});
  const PointCloud val = sampler(n, StreamKey{101});

  SECTION("true-process generator sits at the baseline") {
    const PointCloud gen = sampler(n, StreamKey{102});
    const auto rep = metrics::overfit_report(neg_ld, sampler, train, val, gen,
                                             n, StreamKey{103});
    CHECK(std::fabs(rep.w1_gen_train - rep.baseline_mean) <
          4.0 * rep.baseline_std);
    CHECK(std::fabs(rep.w1_gen_val - rep.baseline_mean) <
          4.0 * rep.baseline_std);
  }
  SECTION("copying the training rows is flagged as type-1 overfitting") {
    const auto rep = metrics::overfit_report(neg_ld, sampler, train, val, train,
                                             n, StreamKey{104});
    CHECK(rep.w1_gen_train == 0.0);
    CHECK(rep.w1_gen_val > rep.baseline_mean / 2.0);
  }
}
