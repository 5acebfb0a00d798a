#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include "design/tensor.hpp"

namespace design {

// Scalar rules shared by the plane API below and the batched network layers,
// so both paths binarize and back-propagate identically.

// Sign(0) := +1.
template <typename T>
constexpr bool sign_bit(T x) {
  return !(x < T{0});
}

template <typename T>
constexpr T sign_value(T x) {
  return sign_bit(x) ? T{1} : T{-1};
}

// Derivative of Clip(x) = max(-1, min(1, x)), with the closed interval |x| <= 1.
template <typename T>
constexpr T clip_grad(T x) {
  return (x <= T{1} && x >= T{-1}) ? T{1} : T{0};
}

template <typename T>
constexpr T clip(T x) {
  return std::max(T{-1}, std::min(T{1}, x));
}

struct TileOffset {
  std::size_t row = 0;
  std::size_t col = 0;
};

// Periodic repetition of a d x d base across an h x w plane:
// out(i, j) = base((i + row) mod d, (j + col) mod d).
template <typename T>
Plane<T> tile(const Plane<T>& base, std::size_t h, std::size_t w, TileOffset offset = {}) {
  if (base.height() == 0 || base.width() == 0) throw std::invalid_argument("tile: empty base kernel");
  Plane<T> out(h, w);
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t bi = (i + offset.row) % base.height();
    for (std::size_t j = 0; j < w; ++j) out(i, j) = base(bi, (j + offset.col) % base.width());
  }
  return out;
}

// A threshold kernel together with its periodic expansion over a target plane.
class TiledThreshold {
 public:
  TiledThreshold(RealPlane base, std::size_t h, std::size_t w, TileOffset offset = {})
      : base_(std::move(base)), tiled_(tile(base_, h, w, offset)) {}

  const RealPlane& base() const { return base_; }
  const RealPlane& tiled() const { return tiled_; }

 private:
  RealPlane base_;
  RealPlane tiled_;
};

namespace detail {
inline void require_same_shape(const RealPlane& a, const RealPlane& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                std::to_string(b.width()));
  }
}
}  // namespace detail

inline RealPlane relu(const RealPlane& x) {
  RealPlane out(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = std::max(0.0, x.values()[i]);
  return out;
}

inline BitPlane sign_fwd(const RealPlane& x) {
  BitPlane out(x.height(), x.width());
  for (std::size_t r = 0; r < x.height(); ++r) {
    for (std::size_t c = 0; c < x.width(); ++c) {
      if (sign_bit(x(r, c))) out.set(r, c, true);
    }
  }
  return out;
}

inline RealPlane sign_bwd(const RealPlane& x, const RealPlane& upstream) {
  detail::require_same_shape(x, upstream, "sign_bwd");
  RealPlane out(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = upstream.values()[i] * clip_grad(x.values()[i]);
  return out;
}

inline RealPlane shifted(const RealPlane& xs, const TiledThreshold& t) {
  detail::require_same_shape(xs, t.tiled(), "design");
  RealPlane out(xs.height(), xs.width());
  for (std::size_t i = 0; i < xs.size(); ++i) out.values()[i] = xs.values()[i] - t.tiled().values()[i];
  return out;
}

// Sign of the input after subtracting the tiled threshold pattern.
inline BitPlane design_fwd(const RealPlane& xs, const TiledThreshold& t) { return sign_fwd(shifted(xs, t)); }

// Straight-through gradient of the shifted Sign. The threshold receives none.
inline RealPlane design_bwd(const RealPlane& xs, const TiledThreshold& t, const RealPlane& upstream) {
  return sign_bwd(shifted(xs, t), upstream);
}

// {-1,+1} -> {0,1}: ReLU applied to an unpacked binary plane.
inline IntPlane relu01(const BitPlane& b) {
  IntPlane out(b.height(), b.width());
  for (std::size_t r = 0; r < b.height(); ++r) {
    for (std::size_t c = 0; c < b.width(); ++c) out(r, c) = b.bit(r, c) ? 1 : 0;
  }
  return out;
}

}  // namespace design
