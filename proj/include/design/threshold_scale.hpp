#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "design/threshold_design.hpp"

namespace design {

// Inverse of the standard normal CDF. Rational approximation (P. J. Acklam)
// refined with one Halley step against std::erfc; accurate to ~1e-15.
inline double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("inverse_normal_cdf: p must be in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

// Cluster centers on the half-wave Gaussian and their left-side thresholds.
struct QuantizerLevels {
  std::vector<double> centers;     // strictly increasing
  std::vector<double> boundaries;  // boundaries[0] = 0, boundaries[i] = (centers[i-1] + centers[i]) / 2
  std::size_t iterations = 0;
  std::size_t n() const { return boundaries.size(); }
};

struct KMeansOptions {
  std::size_t max_iterations = 200;
  double tolerance = 1e-6;  // max absolute center shift
  std::size_t max_restarts = 10;
};

namespace detail {

// Sorted |z| samples, z ~ N(0,1), stratified over the half-normal quantile
// range: sample i sits at quantile (i + u_i) / n with u_i ~ U(0,1).
inline std::vector<double> half_normal_samples(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = (static_cast<double>(i) + unit(rng)) / static_cast<double>(n);
    u = std::clamp(u, 1e-300, std::nextafter(1.0, 0.0));
    x[i] = inverse_normal_cdf(0.5 + 0.5 * u);
  }
  std::sort(x.begin(), x.end());
  return x;
}

inline std::vector<double> midpoints(const std::vector<double>& centers) {
  std::vector<double> b(centers.size());
  b[0] = 0.0;
  for (std::size_t i = 1; i < centers.size(); ++i) b[i] = 0.5 * (centers[i - 1] + centers[i]);
  return b;
}

}  // namespace detail

// Lloyd's algorithm on sorted 1D samples. Returns false on an empty cluster.
inline bool lloyd_1d(const std::vector<double>& sorted, std::vector<double>& centers, const KMeansOptions& opt,
                     std::size_t& iterations) {
  std::vector<double> prefix(sorted.size() + 1, 0.0);
  for (std::size_t i = 0; i < sorted.size(); ++i) prefix[i + 1] = prefix[i] + sorted[i];
  const std::size_t n = centers.size();
  std::vector<std::size_t> cut(n + 1);
  for (iterations = 0; iterations < opt.max_iterations; ++iterations) {
    cut[0] = 0;
    cut[n] = sorted.size();
    for (std::size_t i = 1; i < n; ++i) {
      const double b = 0.5 * (centers[i - 1] + centers[i]);
      cut[i] = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), b) - sorted.begin());
    }
    double shift = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t count = cut[i + 1] - cut[i];
      if (count == 0) return false;
      const double m = (prefix[cut[i + 1]] - prefix[cut[i]]) / static_cast<double>(count);
      shift = std::max(shift, std::abs(m - centers[i]));
      centers[i] = m;
    }
    if (shift < opt.tolerance) {
      ++iterations;
      break;
    }
  }
  return true;
}

// K-means quantization of the half-wave Gaussian into n clusters.
inline QuantizerLevels half_gaussian_kmeans(std::size_t n, std::size_t samples, std::uint64_t seed,
                                            const KMeansOptions& opt = {}) {
  if (n < 2) throw std::invalid_argument("half_gaussian_kmeans: n must be >= 2");
  if (samples < 10 * n) throw std::invalid_argument("half_gaussian_kmeans: need at least 10*n samples");
  const std::vector<double> x = detail::half_normal_samples(samples, seed);

  // First attempt starts from evenly spaced sample quantiles; restarts draw
  // random distinct samples.
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<double> centers(n);
  for (std::size_t i = 0; i < n; ++i) centers[i] = x[(2 * i + 1) * x.size() / (2 * n)];
  for (std::size_t attempt = 0; attempt <= opt.max_restarts; ++attempt) {
    std::size_t iters = 0;
    if (lloyd_1d(x, centers, opt, iters)) {
      bool increasing = true;
      for (std::size_t i = 1; i < n; ++i) increasing = increasing && centers[i] > centers[i - 1];
      if (increasing) {
        QuantizerLevels q;
        q.centers = centers;
        q.boundaries = detail::midpoints(centers);
        q.iterations = iters;
        return q;
      }
    }
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    for (auto& c : centers) c = x[pick(rng)];
    std::sort(centers.begin(), centers.end());
  }
  throw std::runtime_error("half_gaussian_kmeans: empty cluster persisted after " +
                           std::to_string(opt.max_restarts) + " restarts");
}

// Real-valued thresholds: each integer level replaced by the left-side
// threshold of its cluster.
class ScaledThresholdKernel {
 public:
  ScaledThresholdKernel(ThresholdKernel source, std::vector<double> entries)
      : source_(std::move(source)), entries_(std::move(entries)) {
    if (entries_.size() != source_.entries().size()) throw std::invalid_argument("ScaledThresholdKernel: size mismatch");
  }

  std::size_t d() const { return source_.d(); }
  const ThresholdKernel& source() const { return source_; }
  const std::vector<double>& entries() const { return entries_; }
  RealPlane as_plane() const { return RealPlane(d(), d(), entries_); }

  bool operator==(const ScaledThresholdKernel&) const = default;

 private:
  ThresholdKernel source_;
  std::vector<double> entries_;
};

inline ScaledThresholdKernel scale_kernel(const ThresholdKernel& t, const QuantizerLevels& q, const LevelSet& levels) {
  if (q.n() != levels.n()) {
    throw std::invalid_argument("scale_kernel: quantizer has " + std::to_string(q.n()) + " levels, level set has " +
                                std::to_string(levels.n()));
  }
  std::vector<double> out;
  out.reserve(t.entries().size());
  for (auto v : t.entries()) out.push_back(q.boundaries[levels.index_of(v)]);
  return ScaledThresholdKernel(t, std::move(out));
}

inline ScaledThresholdKernel gamma_rescale(const ScaledThresholdKernel& ts, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma_rescale: gamma must be positive, got " + std::to_string(gamma));
  std::vector<double> out = ts.entries();
  for (auto& v : out) v *= gamma;
  return ScaledThresholdKernel(ts.source(), std::move(out));
}

enum class Mode3D { kShift, kComplement };

inline ThresholdKernel shift_levels(const ThresholdKernel& t, const LevelSet& levels, std::size_t steps) {
  std::vector<std::int32_t> e;
  e.reserve(t.entries().size());
  for (auto v : t.entries()) e.push_back(levels[(levels.index_of(v) + steps) % levels.n()]);
  return ThresholdKernel(t.d(), std::move(e));
}

// Level with 1-indexed position kappa maps to position N - (kappa - 1).
inline ThresholdKernel complement(const ThresholdKernel& t, const LevelSet& levels) {
  std::vector<std::int32_t> e;
  e.reserve(t.entries().size());
  for (auto v : t.entries()) e.push_back(levels[levels.n() - 1 - levels.index_of(v)]);
  return ThresholdKernel(t.d(), std::move(e));
}

// Per-channel kernels: channel c is t shifted by c level steps, or
// alternates between t and its complement.
inline std::vector<ThresholdKernel> make_3d(const ThresholdKernel& t, std::size_t channels, Mode3D mode,
                                            const LevelSet& levels) {
  if (channels == 0) throw std::invalid_argument("make_3d: channels must be >= 1");
  t.validate(levels);
  std::vector<ThresholdKernel> out;
  out.reserve(channels);
  const ThresholdKernel comp = complement(t, levels);
  for (std::size_t c = 0; c < channels; ++c) {
    if (mode == Mode3D::kShift) out.push_back(shift_levels(t, levels, c));
    else out.push_back(c % 2 == 0 ? t : comp);
  }
  return out;
}

}  // namespace design
