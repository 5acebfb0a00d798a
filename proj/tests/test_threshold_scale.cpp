#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "design/threshold_scale.hpp"
#include "support.hpp"

using namespace design;

namespace {

// Lloyd iteration on a dense uniform grid over [0, 10] weighted by the
// half-normal density. Cell sums come from prefix sums, so each iteration is
// cheap even with millions of grid points.
std::vector<double> grid_lloyd_boundaries(std::size_t n, std::size_t points = 2'000'000) {
  const double hi = 10.0, dx = hi / static_cast<double>(points);
  std::vector<double> w(points), wx(points + 1, 0.0), ws(points + 1, 0.0);
  for (std::size_t i = 0; i < points; ++i) {
    const double x = (static_cast<double>(i) + 0.5) * dx;
    w[i] = std::exp(-0.5 * x * x);
    ws[i + 1] = ws[i] + w[i];
    wx[i + 1] = wx[i] + w[i] * x;
  }
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = 3.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  for (int it = 0; it < 100000; ++it) {
    double shift = 0;
    std::size_t lo = 0;
    std::vector<double> next(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t up = points;
      if (k + 1 < n) {
        const double b = 0.5 * (c[k] + c[k + 1]);
        up = std::min<std::size_t>(points, static_cast<std::size_t>(std::floor(b / dx + 0.5)));
      }
      next[k] = (wx[up] - wx[lo]) / (ws[up] - ws[lo]);
      shift = std::max(shift, std::abs(next[k] - c[k]));
      lo = up;
    }
    c = next;
    if (shift < 1e-12) break;
  }
  std::vector<double> b(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) b[k] = 0.5 * (c[k - 1] + c[k]);
  return b;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("inverse normal CDF", "[threshold-scale]") {
  for (double p : {1e-12, 1e-6, 0.001, 0.02, 0.1, 0.3, 0.5, 0.7, 0.9, 0.98, 0.999, 1 - 1e-9}) {
    const double x = inverse_normal_cdf(p);
    REQUIRE(std::abs(normal_cdf(x) - p) < 1e-14 + 1e-12 * p);
  }
  CHECK(inverse_normal_cdf(0.5) == Catch::Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(inverse_normal_cdf(0.0), std::domain_error);
  CHECK_THROWS_AS(inverse_normal_cdf(1.0), std::domain_error);
}

TEST_CASE("kmeans boundaries match a dense-grid Lloyd oracle", "[threshold-scale][oracle]") {
  for (std::size_t n = 2; n <= 6; ++n) {
    const QuantizerLevels q = half_gaussian_kmeans(n, 100000, 0);
    const auto oracle = grid_lloyd_boundaries(n);
    REQUIRE(q.boundaries.size() == n);
    REQUIRE(q.boundaries[0] == 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      INFO("n=" << n << " i=" << i << " got " << q.boundaries[i] << " oracle " << oracle[i]);
      REQUIRE(std::abs(q.boundaries[i] - oracle[i]) < 1e-3);
    }
  }
}

TEST_CASE("n=2 boundary is the midpoint of the two centers", "[threshold-scale]") {
  const QuantizerLevels q = half_gaussian_kmeans(2, 100000, 3);
  REQUIRE(q.centers.size() == 2);
  CHECK(q.boundaries[1] == Catch::Approx(0.5 * (q.centers[0] + q.centers[1])).epsilon(1e-15));
  CHECK(std::abs(q.boundaries[1] - grid_lloyd_boundaries(2)[1]) < 1e-3);
}

TEST_CASE("quantizer structure", "[threshold-scale][property]") {
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    for (std::size_t n = 2; n <= 10; ++n) {
      const QuantizerLevels q = half_gaussian_kmeans(n, 20000, seed);
      REQUIRE(q.n() == n);
      REQUIRE(q.boundaries[0] == 0.0);
      for (std::size_t i = 1; i < n; ++i) {
        REQUIRE(q.centers[i] > q.centers[i - 1]);
        REQUIRE(q.boundaries[i] > q.boundaries[i - 1]);
        REQUIRE(q.boundaries[i] == 0.5 * (q.centers[i - 1] + q.centers[i]));
      }
    }
  }
}

TEST_CASE("kmeans is seeded and stable in the sample count", "[threshold-scale]") {
  const auto a = half_gaussian_kmeans(6, 100000, 5);
  const auto b = half_gaussian_kmeans(6, 100000, 5);
  CHECK(a.boundaries == b.boundaries);
  const auto c = half_gaussian_kmeans(6, 200000, 5);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(a.boundaries[i] - c.boundaries[i]) < 5e-3);
}

TEST_CASE("kmeans argument checks", "[threshold-scale]") {
  CHECK_THROWS_AS(half_gaussian_kmeans(1, 1000, 0), std::invalid_argument);
  CHECK_THROWS_AS(half_gaussian_kmeans(6, 59, 0), std::invalid_argument);
  CHECK_NOTHROW(half_gaussian_kmeans(6, 60, 0));
}

TEST_CASE("lloyd_1d reports empty clusters", "[threshold-scale]") {
  const std::vector<double> x = {0.1, 0.2, 0.3, 0.4};
  std::vector<double> centers = {0.2, 5.0, 6.0};
  std::size_t it = 0;
  CHECK_FALSE(lloyd_1d(x, centers, {}, it));
}

TEST_CASE("scale_kernel maps levels to left-side thresholds", "[threshold-scale]") {
  const LevelSet levels = build_levels(3);
  const QuantizerLevels q = half_gaussian_kmeans(6, 100000, 0);
  const ScaledThresholdKernel s = scale_kernel(default_kernel(), q, levels);
  CHECK(s.entries() == std::vector<double>{q.boundaries[1], q.boundaries[1], q.boundaries[2], q.boundaries[2]});
  const auto oracle = grid_lloyd_boundaries(6);
  CHECK(std::abs(s.entries()[0] - oracle[1]) < 1e-3);
  CHECK(std::abs(s.entries()[2] - oracle[2]) < 1e-3);
  CHECK(scale_kernel(ThresholdKernel(2, {0, 9, 0, 0}), q, levels).entries()[0] == 0.0);
  CHECK(s.source() == default_kernel());
  CHECK(s.as_plane()(1, 0) == q.boundaries[2]);

  CHECK_THROWS_AS(scale_kernel(ThresholdKernel(2, {1, 2, 3, 3}), q, levels), std::invalid_argument);
  CHECK_THROWS_AS(scale_kernel(default_kernel(), half_gaussian_kmeans(5, 1000, 0), levels), std::invalid_argument);
}

TEST_CASE("scale_kernel is order preserving", "[threshold-scale][property]") {
  const LevelSet levels = build_levels(3);
  const QuantizerLevels q = half_gaussian_kmeans(6, 50000, 1);
  const KernelEnumerator all(levels, 2);
  for (std::uint64_t i = 0; i < all.size(); ++i) {
    const ThresholdKernel t = all.at(i);
    const auto s = scale_kernel(t, q, levels).entries();
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b) {
        if (t.entries()[a] < t.entries()[b]) REQUIRE(s[a] < s[b]);
        if (t.entries()[a] == levels[0]) REQUIRE(s[a] == 0.0);
      }
  }
}

TEST_CASE("gamma rescale", "[threshold-scale][gamma]") {
  const LevelSet levels = build_levels(3);
  const QuantizerLevels q = half_gaussian_kmeans(6, 50000, 0);
  const auto s = scale_kernel(default_kernel(), q, levels);
  CHECK(gamma_rescale(s, 1.0) == s);
  const ScaledThresholdKernel one(ThresholdKernel(1, {1}), {0.3});
  CHECK(gamma_rescale(one, 2.0).entries()[0] == Catch::Approx(0.6));
  for (double g : {0.5, 1.7, 3.0}) {
    const auto r = gamma_rescale(s, g);
    const auto r2 = gamma_rescale(s, 2 * g);
    for (std::size_t i = 0; i < 4; ++i) {
      REQUIRE(r.entries()[i] == Catch::Approx(g * s.entries()[i]));
      REQUIRE(r2.entries()[i] == Catch::Approx(2 * r.entries()[i]));
    }
  }
  CHECK_THROWS_AS(gamma_rescale(s, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gamma_rescale(s, -1.0), std::invalid_argument);
}

TEST_CASE("rescaled thresholds keep firing rates on scaled inputs", "[threshold-scale][gamma][oracle]") {
  const LevelSet levels = build_levels(3);
  const QuantizerLevels q = half_gaussian_kmeans(6, 50000, 0);
  std::mt19937_64 rng(41);
  std::normal_distribution<double> z(0.0, 1.0);
  const std::size_t n = 200000;
  for (double gamma : {0.5, 2.0, 4.0}) {
    for (std::int32_t level : {1, 3, 5, 7}) {
      const auto s = scale_kernel(ThresholdKernel(1, {level}), q, levels);
      const double t = s.entries()[0];
      const double tg = gamma_rescale(s, gamma).entries()[0];
      std::size_t fire_unit = 0, fire_scaled = 0;
      for (std::size_t i = 0; i < n; ++i) {
        fire_unit += z(rng) >= t;
        fire_scaled += gamma * z(rng) >= tg;
      }
      const double a = static_cast<double>(fire_unit) / n, b = static_cast<double>(fire_scaled) / n;
      INFO("gamma " << gamma << " level " << level << " rates " << a << " " << b);
      REQUIRE(std::abs(a - b) <= 0.02 * a);
    }
  }
}

TEST_CASE("complement pairs levels from both ends", "[threshold-scale][3d]") {
  const LevelSet levels = build_levels(3);
  const ThresholdKernel t(2, {0, 1, 3, 5});
  CHECK(complement(t, levels).entries() == std::vector<std::int32_t>{9, 7, 5, 3});
  CHECK(complement(ThresholdKernel(1, {7}), levels).entries()[0] == 1);
  CHECK(complement(ThresholdKernel(1, {9}), levels).entries()[0] == 0);
}

TEST_CASE("make_3d", "[threshold-scale][3d]") {
  const LevelSet levels = build_levels(3);
  const ThresholdKernel t = default_kernel();
  CHECK(make_3d(t, 1, Mode3D::kShift, levels) == std::vector<ThresholdKernel>{t});
  const auto s = make_3d(t, 4, Mode3D::kShift, levels);
  CHECK(s[0] == t);
  CHECK(s[1].entries() == std::vector<std::int32_t>{3, 3, 5, 5});
  CHECK(s[2].entries() == std::vector<std::int32_t>{5, 5, 7, 7});
  CHECK(s[3].entries() == std::vector<std::int32_t>{7, 7, 9, 9});
  CHECK(make_3d(t, 6, Mode3D::kShift, levels)[5].entries() == std::vector<std::int32_t>{0, 0, 1, 1});
  const auto c = make_3d(t, 3, Mode3D::kComplement, levels);
  CHECK(c[0] == t);
  CHECK(c[1].entries() == std::vector<std::int32_t>{7, 7, 5, 5});
  CHECK(c[2] == t);
  CHECK_THROWS_AS(make_3d(t, 0, Mode3D::kShift, levels), std::invalid_argument);
  CHECK_THROWS_AS(make_3d(ThresholdKernel(2, {2, 2, 2, 2}), 2, Mode3D::kShift, levels), std::invalid_argument);
}

TEST_CASE("3D generators form the expected groups", "[threshold-scale][3d][property]") {
  for (std::size_t k : {2u, 3u, 4u}) {
    const LevelSet levels = build_levels(k);
    const KernelEnumerator all(levels, 2);
    for (std::uint64_t i = 0; i < all.size(); ++i) {
      const ThresholdKernel t = all.at(i);
      REQUIRE(complement(complement(t, levels), levels) == t);
      REQUIRE(shift_levels(t, levels, levels.n()) == t);
      ThresholdKernel r = t;
      for (std::size_t step = 0; step < levels.n(); ++step) r = shift_levels(r, levels, 1);
      REQUIRE(r == t);
      const auto chans = make_3d(t, levels.n() + 1, Mode3D::kShift, levels);
      REQUIRE(chans[levels.n()] == t);
    }
  }
}
