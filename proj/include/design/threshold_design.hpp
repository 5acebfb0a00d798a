#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "design/activation.hpp"
#include "design/bitconv.hpp"
#include "design/parallel.hpp"
#include "design/tensor.hpp"

namespace design {

// Ordered candidate threshold levels for a k x k binary convolution: the
// non-negative part of its range, with 0 included for odd k.
class LevelSet {
 public:
  LevelSet(std::size_t k, std::vector<std::int32_t> levels) : k_(k), levels_(std::move(levels)) {
    if (levels_.empty()) throw std::invalid_argument("LevelSet: empty");
    for (std::size_t i = 1; i < levels_.size(); ++i) {
      if (levels_[i] <= levels_[i - 1]) throw std::invalid_argument("LevelSet: levels must be strictly increasing");
    }
  }

  std::size_t k() const { return k_; }
  std::size_t n() const { return levels_.size(); }
  const std::vector<std::int32_t>& levels() const { return levels_; }
  std::int32_t operator[](std::size_t i) const { return levels_[i]; }

  bool contains(std::int32_t v) const { return std::binary_search(levels_.begin(), levels_.end(), v); }

  std::size_t index_of(std::int32_t v) const {
    auto it = std::lower_bound(levels_.begin(), levels_.end(), v);
    if (it == levels_.end() || *it != v) {
      throw std::invalid_argument("level " + std::to_string(v) + " is not in the level set");
    }
    return static_cast<std::size_t>(it - levels_.begin());
  }

  bool operator==(const LevelSet&) const = default;

 private:
  std::size_t k_;
  std::vector<std::int32_t> levels_;
};

inline LevelSet build_levels(std::size_t k) {
  std::vector<std::int32_t> levels;
  if (k % 2 == 1) levels.push_back(0);
  for (std::int32_t v : conv_range(k)) {
    if (v >= 0) levels.push_back(v);
  }
  return LevelSet(k, std::move(levels));
}

// d x d integer pattern, row-major.
class ThresholdKernel {
 public:
  ThresholdKernel(std::size_t d, std::vector<std::int32_t> entries) : d_(d), entries_(std::move(entries)) {
    if (d_ == 0 || entries_.size() != d_ * d_) {
      throw std::invalid_argument("ThresholdKernel: need d*d entries with d >= 1");
    }
  }

  std::size_t d() const { return d_; }
  const std::vector<std::int32_t>& entries() const { return entries_; }
  std::int32_t operator()(std::size_t r, std::size_t c) const { return entries_[r * d_ + c]; }

  void validate(const LevelSet& levels) const {
    for (auto v : entries_) {
      if (!levels.contains(v)) throw std::invalid_argument("threshold entry " + std::to_string(v) + " not in level set");
    }
  }

  RealPlane as_plane() const {
    std::vector<double> v(entries_.begin(), entries_.end());
    return RealPlane(d_, d_, std::move(v));
  }

  std::string to_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < entries_.size(); ++i) os << (i ? "," : "") << entries_[i];
    os << ']';
    return os.str();
  }

  auto operator<=>(const ThresholdKernel&) const = default;

 private:
  std::size_t d_;
  std::vector<std::int32_t> entries_;
};

// Enumerates Omega^(d x d) in lexicographic order of level indices (entry 0
// most significant). Refuses sets larger than kMaxCandidates.
class KernelEnumerator {
 public:
  static constexpr std::uint64_t kMaxCandidates = 10'000'000;

  KernelEnumerator(LevelSet levels, std::size_t d) : levels_(std::move(levels)), d_(d) {
    if (d_ == 0) throw std::invalid_argument("enumerate_kernels: d must be >= 1");
    // Exact cardinality, saturating well past the guard.
    long double total = 1;
    for (std::size_t i = 0; i < d_ * d_; ++i) total *= static_cast<long double>(levels_.n());
    if (total > static_cast<long double>(kMaxCandidates)) {
      std::ostringstream os;
      os << "enumerate_kernels: " << levels_.n() << "^" << d_ * d_ << " = " << std::setprecision(0) << std::fixed
         << total << " candidates exceeds the limit of " << kMaxCandidates;
      throw std::length_error(os.str());
    }
    count_ = static_cast<std::uint64_t>(total);
  }

  std::uint64_t size() const { return count_; }
  const LevelSet& levels() const { return levels_; }
  std::size_t d() const { return d_; }

  ThresholdKernel at(std::uint64_t index) const {
    std::vector<std::int32_t> e(d_ * d_);
    for (std::size_t i = e.size(); i-- > 0;) {
      e[i] = levels_[index % levels_.n()];
      index /= levels_.n();
    }
    return ThresholdKernel(d_, std::move(e));
  }

  std::uint64_t index_of(const ThresholdKernel& t) const {
    std::uint64_t idx = 0;
    for (auto v : t.entries()) idx = idx * levels_.n() + levels_.index_of(v);
    return idx;
  }

 private:
  LevelSet levels_;
  std::size_t d_;
  std::uint64_t count_ = 0;
};

inline KernelEnumerator enumerate_kernels(const LevelSet& levels, std::size_t d) { return KernelEnumerator(levels, d); }

// Anisotropic l1 total variation of a {0,1} plane: forward differences, no wrap.
inline std::int64_t tv_score(const IntPlane& plane) {
  for (auto v : plane.values()) {
    if (v != 0 && v != 1) throw std::invalid_argument("tv_score: entry " + std::to_string(v) + " is not in {0,1}");
  }
  std::int64_t tv = 0;
  for (std::size_t r = 0; r < plane.height(); ++r) {
    for (std::size_t c = 0; c < plane.width(); ++c) {
      if (c + 1 < plane.width()) tv += std::abs(plane(r, c + 1) - plane(r, c));
      if (r + 1 < plane.height()) tv += std::abs(plane(r + 1, c) - plane(r, c));
    }
  }
  return tv;
}

// Integer convolution outputs X_c for every (image, random kernel, channel)
// triple, plus per-level firing masks so candidates can be scored with word
// operations. A pixel fires for level v when Sign(X_c - v) = +1.
class ConvCache {
 public:
  ConvCache(LevelSet levels, std::vector<IntPlane> planes) : levels_(std::move(levels)), planes_(std::move(planes)) {
    if (planes_.empty()) throw std::invalid_argument("ConvCache: empty cache");
    fires_.resize(planes_.size() * levels_.n());
    for (std::size_t p = 0; p < planes_.size(); ++p) {
      const IntPlane& xc = planes_[p];
      for (std::size_t l = 0; l < levels_.n(); ++l) {
        BitPlane b(xc.height(), xc.width());
        for (std::size_t r = 0; r < xc.height(); ++r) {
          for (std::size_t c = 0; c < xc.width(); ++c) {
            if (sign_bit(xc(r, c) - levels_[l])) b.set(r, c, true);
          }
        }
        fires_[p * levels_.n() + l] = std::move(b);
      }
    }
  }

  const LevelSet& levels() const { return levels_; }
  const std::vector<IntPlane>& planes() const { return planes_; }
  std::size_t size() const { return planes_.size(); }
  const BitPlane& fires(std::size_t plane, std::size_t level_index) const {
    return fires_[plane * levels_.n() + level_index];
  }

 private:
  LevelSet levels_;
  std::vector<IntPlane> planes_;
  std::vector<BitPlane> fires_;
};

namespace detail {

inline BinaryKernel random_binary_kernel(std::size_t k, std::mt19937_64& rng) {
  IntPlane v(k, k);
  for (auto& x : v.values()) x = (rng() & 1u) ? 1 : -1;
  return BinaryKernel::from_values(v);
}

// TV of the binarized plane where pixel (r, c) takes the firing mask of the
// level at kernel position (r mod d, c mod d).
inline std::int64_t tv_of_tiled(const ConvCache& cache, std::size_t plane, const ThresholdKernel& t,
                                const std::vector<std::size_t>& level_idx) {
  using Word = BitPlane::Word;
  const IntPlane& xc = cache.planes()[plane];
  const std::size_t h = xc.height();
  const std::size_t w = xc.width();
  const std::size_t d = t.d();
  const std::size_t wpr = BitPlane::words_for(w);

  // Column-phase masks: bit c set iff c mod d == phase (built once per call).
  thread_local std::vector<Word> phase_masks;
  thread_local std::vector<Word> prev, cur;
  phase_masks.assign(d * wpr, 0);
  for (std::size_t c = 0; c < w; ++c) phase_masks[(c % d) * wpr + c / 64] |= Word{1} << (c % 64);
  prev.assign(wpr, 0);
  cur.assign(wpr, 0);

  std::int64_t tv = 0;
  for (std::size_t r = 0; r < h; ++r) {
    std::fill(cur.begin(), cur.end(), 0);
    for (std::size_t pc = 0; pc < d; ++pc) {
      const auto row = cache.fires(plane, level_idx[(r % d) * d + pc]).row_words(r);
      for (std::size_t wi = 0; wi < wpr; ++wi) cur[wi] |= row[wi] & phase_masks[pc * wpr + wi];
    }
    // Horizontal: bit c vs bit c+1 within the row.
    for (std::size_t wi = 0; wi < wpr; ++wi) {
      Word next = cur[wi] >> 1;
      if (wi + 1 < wpr) next |= cur[wi + 1] << 63;
      Word diff = cur[wi] ^ next;
      const std::size_t valid = std::min<std::size_t>(64, w - 1 - std::min(w - 1, wi * 64));
      if (valid < 64) diff &= (Word{1} << valid) - 1;
      tv += std::popcount(diff);
    }
    if (r > 0) {
      for (std::size_t wi = 0; wi < wpr; ++wi) tv += std::popcount(cur[wi] ^ prev[wi]);
    }
    std::swap(prev, cur);
  }
  return tv;
}

}  // namespace detail

// Expected TV over the cache of ReLU(DeSign(X_c; T)).
inline double score_candidate(const ThresholdKernel& t, const ConvCache& cache) {
  if (cache.size() == 0) throw std::invalid_argument("score_candidate: empty cache");
  std::vector<std::size_t> idx(t.entries().size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = cache.levels().index_of(t.entries()[i]);
  std::int64_t total = 0;
  for (std::size_t p = 0; p < cache.size(); ++p) total += detail::tv_of_tiled(cache, p, t, idx);
  return static_cast<double>(total) / static_cast<double>(cache.size());
}

// Builds X_c = X (*) K for n_kernels seeded random kernels per image, applied to
// every channel of the image.
inline ConvCache build_conv_cache(const std::vector<FeatureStack<BitPlane>>& corpus, std::size_t k,
                                  std::size_t n_kernels, std::uint64_t seed, std::size_t threads = 1) {
  if (corpus.empty()) throw std::invalid_argument("search: empty corpus");
  if (n_kernels == 0) throw std::invalid_argument("search: n_kernels must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<BinaryKernel> kernels;
  kernels.reserve(corpus.size() * n_kernels);
  for (std::size_t i = 0; i < corpus.size() * n_kernels; ++i) kernels.push_back(detail::random_binary_kernel(k, rng));

  std::vector<std::size_t> offsets(corpus.size() + 1, 0);
  for (std::size_t i = 0; i < corpus.size(); ++i) offsets[i + 1] = offsets[i] + n_kernels * corpus[i].channels();
  std::vector<IntPlane> planes(offsets.back());
  parallel_for(corpus.size(), threads, [&](std::size_t i) {
    std::size_t out = offsets[i];
    for (std::size_t j = 0; j < n_kernels; ++j) {
      for (const auto& ch : corpus[i].planes()) planes[out++] = conv_packed(ch, kernels[i * n_kernels + j]);
    }
  });
  return ConvCache(build_levels(k), std::move(planes));
}

struct ScoredKernel {
  ThresholdKernel kernel;
  double score;
  std::size_t rank;  // 1 = highest score
};

class TVScoreTable {
 public:
  explicit TVScoreTable(std::vector<ScoredKernel> rows) : rows_(std::move(rows)) {}

  const std::vector<ScoredKernel>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  const ScoredKernel& best() const { return rows_.front(); }

  void write_csv(std::ostream& os) const {
    os << "rank,score";
    if (!rows_.empty()) {
      const std::size_t d = rows_.front().kernel.d();
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) os << ",t" << r << c;
    }
    os << '\n';
    for (const auto& row : rows_) {
      std::ostringstream score;
      score << std::fixed << std::setprecision(6) << row.score;
      os << row.rank << ',' << score.str();
      for (auto v : row.kernel.entries()) os << ',' << v;
      os << '\n';
    }
  }

 private:
  std::vector<ScoredKernel> rows_;
};

// Scores every candidate against the cache. Sorted by score descending, ties
// in lexicographic candidate order.
inline TVScoreTable rank_candidates(const ConvCache& cache, std::size_t d, std::size_t threads = 1) {
  const KernelEnumerator all(cache.levels(), d);
  std::vector<double> scores(all.size());
  parallel_for(static_cast<std::size_t>(all.size()), threads,
               [&](std::size_t i) { scores[i] = score_candidate(all.at(i), cache); });
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<ScoredKernel> rows;
  rows.reserve(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rows.push_back({all.at(order[r]), scores[order[r]], r + 1});
  return TVScoreTable(std::move(rows));
}

// Brute-force threshold search over a binarized corpus.
inline TVScoreTable search(const std::vector<FeatureStack<BitPlane>>& corpus, std::size_t k, std::size_t d,
                           std::size_t n_kernels, std::uint64_t seed, std::size_t threads = 1) {
  // Fail on the cardinality guard before doing any convolution work.
  (void)KernelEnumerator(build_levels(k), d);
  const ConvCache cache = build_conv_cache(corpus, k, n_kernels, seed, threads);
  return rank_candidates(cache, d, threads);
}

// Kernel used when the search is skipped.
inline ThresholdKernel default_kernel() { return ThresholdKernel(2, {1, 1, 3, 3}); }

}  // namespace design
