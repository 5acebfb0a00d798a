#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace design {

// Row-major dense 2D grid. Value-semantic: every operation in this library
// returns a new plane instead of mutating its argument.
template <typename T>
class Plane {
 public:
  using value_type = T;

  Plane() = default;
  Plane(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), values_(height * width, fill) {}
  Plane(std::size_t height, std::size_t width, std::vector<T> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != height_ * width_) {
      throw std::invalid_argument("Plane: values length " + std::to_string(values_.size()) +
                                  " != " + std::to_string(height_) + "x" + std::to_string(width_));
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  T operator()(std::size_t r, std::size_t c) const { return values_[r * width_ + c]; }
  T& operator()(std::size_t r, std::size_t c) { return values_[r * width_ + c]; }

  std::span<const T> values() const { return values_; }
  std::span<T> values() { return values_; }
  std::span<const T> row(std::size_t r) const { return {values_.data() + r * width_, width_}; }

  bool same_shape(const Plane& o) const { return height_ == o.height_ && width_ == o.width_; }
  bool operator==(const Plane&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> values_;
};

using RealPlane = Plane<double>;
using FloatPlane = Plane<float>;
using IntPlane = Plane<std::int32_t>;

// Bit-packed {-1,+1} plane. Bit 1 encodes +1, bit 0 encodes -1. Each row
// starts on a 64-bit word boundary; element c of a row lives in word c/64 at
// bit c%64. Padding bits past `width` are always zero.
class BitPlane {
 public:
  using Word = std::uint64_t;
  static constexpr std::size_t kWordBits = 64;

  BitPlane() = default;
  BitPlane(std::size_t height, std::size_t width)
      : height_(height), width_(width), words_per_row_(words_for(width)),
        words_(height * words_per_row_, 0) {}

  static constexpr std::size_t words_for(std::size_t width) {
    return (width + kWordBits - 1) / kWordBits;
  }

  // Builds from raw words, zeroing any padding bits.
  static BitPlane from_words(std::size_t height, std::size_t width, std::vector<Word> words) {
    BitPlane p(height, width);
    if (words.size() != p.words_.size()) {
      throw std::invalid_argument("BitPlane: word count mismatch");
    }
    p.words_ = std::move(words);
    p.clear_padding();
    return p;
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return height_ * width_; }
  std::size_t words_per_row() const { return words_per_row_; }

  bool bit(std::size_t r, std::size_t c) const {
    return (words_[r * words_per_row_ + c / kWordBits] >> (c % kWordBits)) & 1u;
  }
  int value(std::size_t r, std::size_t c) const { return bit(r, c) ? 1 : -1; }

  void set(std::size_t r, std::size_t c, bool on) {
    Word& w = words_[r * words_per_row_ + c / kWordBits];
    const Word mask = Word{1} << (c % kWordBits);
    w = on ? (w | mask) : (w & ~mask);
  }

  std::span<const Word> row_words(std::size_t r) const {
    return {words_.data() + r * words_per_row_, words_per_row_};
  }
  std::span<const Word> words() const { return words_; }

  // Bits [col, col + len) of row r, packed LSB-first. len <= 64.
  Word window(std::size_t r, std::size_t col, std::size_t len) const {
    const Word* w = words_.data() + r * words_per_row_;
    const std::size_t wi = col / kWordBits;
    const std::size_t sh = col % kWordBits;
    Word v = w[wi] >> sh;
    if (sh != 0 && wi + 1 < words_per_row_) v |= w[wi + 1] << (kWordBits - sh);
    return len == kWordBits ? v : (v & ((Word{1} << len) - 1));
  }

  bool padding_clear() const {
    const std::size_t tail = width_ % kWordBits;
    if (tail == 0) return true;
    const Word mask = ~((Word{1} << tail) - 1);
    for (std::size_t r = 0; r < height_; ++r) {
      if (words_[r * words_per_row_ + words_per_row_ - 1] & mask) return false;
    }
    return true;
  }

  std::size_t popcount() const {
    std::size_t n = 0;
    for (Word w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  BitPlane negated() const {
    BitPlane p = *this;
    for (Word& w : p.words_) w = ~w;
    p.clear_padding();
    return p;
  }

  bool operator==(const BitPlane&) const = default;

 private:
  void clear_padding() {
    const std::size_t tail = width_ % kWordBits;
    if (tail == 0) return;
    const Word keep = (Word{1} << tail) - 1;
    for (std::size_t r = 0; r < height_; ++r) words_[r * words_per_row_ + words_per_row_ - 1] &= keep;
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<Word> words_;
};

// Channel stack of same-sized planes.
template <typename P>
class FeatureStack {
 public:
  FeatureStack() = default;
  explicit FeatureStack(std::vector<P> planes) : planes_(std::move(planes)) {
    for (const auto& p : planes_) {
      if (p.height() != planes_.front().height() || p.width() != planes_.front().width()) {
        throw std::invalid_argument("FeatureStack: planes must share spatial dims");
      }
    }
  }

  std::size_t channels() const { return planes_.size(); }
  std::size_t height() const { return planes_.empty() ? 0 : planes_.front().height(); }
  std::size_t width() const { return planes_.empty() ? 0 : planes_.front().width(); }
  const P& operator[](std::size_t c) const { return planes_[c]; }
  const std::vector<P>& planes() const { return planes_; }

  bool operator==(const FeatureStack&) const = default;

 private:
  std::vector<P> planes_;
};

inline BitPlane pack(const IntPlane& plane) {
  BitPlane out(plane.height(), plane.width());
  for (std::size_t r = 0; r < plane.height(); ++r) {
    for (std::size_t c = 0; c < plane.width(); ++c) {
      const auto v = plane(r, c);
      if (v != 1 && v != -1) {
        throw std::invalid_argument("pack: entry " + std::to_string(v) + " at (" + std::to_string(r) +
                                    "," + std::to_string(c) + ") is not in {-1,+1}");
      }
      if (v == 1) out.set(r, c, true);
    }
  }
  return out;
}

inline IntPlane unpack(const BitPlane& bits) {
  IntPlane out(bits.height(), bits.width());
  for (std::size_t r = 0; r < bits.height(); ++r) {
    for (std::size_t c = 0; c < bits.width(); ++c) out(r, c) = bits.value(r, c);
  }
  return out;
}

template <typename To, typename From>
Plane<To> convert(const Plane<From>& p) {
  std::vector<To> v(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) v[i] = static_cast<To>(p.values()[i]);
  return Plane<To>(p.height(), p.width(), std::move(v));
}

inline RealPlane to_real(const IntPlane& p) { return convert<double>(p); }

// ---------------------------------------------------------------------------
// Binary container: "DSGN", u32 height, u32 width, u8 dtype, payload; all
// little-endian.

enum class DType : std::uint8_t { kBit = 0, kInt32 = 1, kFloat64 = 2, kFloat32 = 3 };

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw std::runtime_error("truncated stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, std::int32_t>) return DType::kInt32;
  else if constexpr (std::is_same_v<T, double>) return DType::kFloat64;
  else if constexpr (std::is_same_v<T, float>) return DType::kFloat32;
  else static_assert(sizeof(T) == 0, "unsupported plane dtype");
}

inline void write_header(std::ostream& os, std::size_t h, std::size_t w, DType t) {
  os.write("DSGN", 4);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(h));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t));
}

inline std::pair<std::size_t, std::size_t> read_header(std::istream& is, DType expected) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "DSGN", 4) != 0) throw std::runtime_error("bad plane magic");
  const auto h = read_le<std::uint32_t>(is);
  const auto w = read_le<std::uint32_t>(is);
  const auto t = read_le<std::uint8_t>(is);
  if (t != static_cast<std::uint8_t>(expected)) {
    throw std::runtime_error("plane dtype tag " + std::to_string(t) + " does not match requested type");
  }
  return {h, w};
}

}  // namespace detail

template <typename T>
void write_plane(std::ostream& os, const Plane<T>& p) {
  detail::write_header(os, p.height(), p.width(), detail::dtype_of<T>());
  for (T v : p.values()) detail::write_le<T>(os, v);
}

inline void write_plane(std::ostream& os, const BitPlane& p) {
  detail::write_header(os, p.height(), p.width(), DType::kBit);
  for (auto w : p.words()) detail::write_le<BitPlane::Word>(os, w);
}

template <typename T>
Plane<T> read_plane(std::istream& is) {
  const auto [h, w] = detail::read_header(is, detail::dtype_of<T>());
  std::vector<T> v(h * w);
  for (auto& x : v) x = detail::read_le<T>(is);
  return Plane<T>(h, w, std::move(v));
}

inline BitPlane read_bit_plane(std::istream& is) {
  const auto [h, w] = detail::read_header(is, DType::kBit);
  std::vector<BitPlane::Word> words(h * BitPlane::words_for(w));
  for (auto& x : words) x = detail::read_le<BitPlane::Word>(is);
  auto p = BitPlane::from_words(h, w, std::move(words));
  return p;
}

}  // namespace design
