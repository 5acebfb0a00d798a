#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "design/tensor.hpp"

namespace design {

// k x k kernel over {-1,+1}. Applied as cross-correlation (no flip).
class BinaryKernel {
 public:
  explicit BinaryKernel(BitPlane weights) : weights_(std::move(weights)) {
    if (weights_.height() == 0 || weights_.height() != weights_.width()) {
      throw std::invalid_argument("BinaryKernel: weights must be a non-empty square plane");
    }
    if (weights_.width() > BitPlane::kWordBits) {
      throw std::invalid_argument("BinaryKernel: k > 64 is not supported");
    }
  }
  static BinaryKernel from_values(const IntPlane& values) { return BinaryKernel(pack(values)); }

  std::size_t k() const { return weights_.width(); }
  const BitPlane& weights() const { return weights_; }
  BinaryKernel negated() const { return BinaryKernel(weights_.negated()); }

 private:
  BitPlane weights_;
};

namespace detail {
inline void check_conv_dims(const BitPlane& x, std::size_t k) {
  if (x.height() < k || x.width() < k) {
    throw std::invalid_argument("conv: input " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                                " is smaller than kernel " + std::to_string(k));
  }
}
}  // namespace detail

// Reference path: integer multiply-accumulate over unpacked values.
inline IntPlane conv_naive(const BitPlane& x, const BinaryKernel& kern) {
  const std::size_t k = kern.k();
  detail::check_conv_dims(x, k);
  const IntPlane xv = unpack(x);
  const IntPlane kv = unpack(kern.weights());
  IntPlane out(x.height() - k + 1, x.width() - k + 1);
  for (std::size_t i = 0; i < out.height(); ++i) {
    for (std::size_t j = 0; j < out.width(); ++j) {
      std::int32_t acc = 0;
      for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t c = 0; c < k; ++c) acc += xv(i + r, j + c) * kv(r, c);
      }
      out(i, j) = acc;
    }
  }
  return out;
}

// XNOR-popcount path: dot = 2 * matches - k^2, where matches counts equal bits
// of the k-bit row windows against the kernel rows.
inline IntPlane conv_packed(const BitPlane& x, const BinaryKernel& kern) {
  const std::size_t k = kern.k();
  detail::check_conv_dims(x, k);
  const BitPlane& kw = kern.weights();
  const BitPlane::Word mask = k == BitPlane::kWordBits ? ~BitPlane::Word{0} : ((BitPlane::Word{1} << k) - 1);
  std::vector<BitPlane::Word> krows(k);
  for (std::size_t r = 0; r < k; ++r) krows[r] = kw.row_words(r)[0];

  const std::int32_t k2 = static_cast<std::int32_t>(k * k);
  IntPlane out(x.height() - k + 1, x.width() - k + 1);
  for (std::size_t i = 0; i < out.height(); ++i) {
    for (std::size_t j = 0; j < out.width(); ++j) {
      std::int32_t matches = 0;
      for (std::size_t r = 0; r < k; ++r) {
        const BitPlane::Word win = x.window(i + r, j, k);
        matches += std::popcount(~(win ^ krows[r]) & mask);
      }
      out(i, j) = 2 * matches - k2;
    }
  }
  return out;
}

// { -k^2 + 2l : l = 0..k^2 }, ascending.
inline std::vector<std::int32_t> conv_range(std::size_t k) {
  if (k == 0) throw std::invalid_argument("conv_range: k must be >= 1");
  const auto k2 = static_cast<std::int32_t>(k * k);
  std::vector<std::int32_t> out;
  out.reserve(static_cast<std::size_t>(k2) + 1);
  for (std::int32_t l = 0; l <= k2; ++l) out.push_back(-k2 + 2 * l);
  return out;
}

}  // namespace design
