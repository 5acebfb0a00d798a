#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "design/dataio.hpp"
#include "design/tensor.hpp"

namespace design {

// 8-bit grayscale raster.
struct Gray8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

inline void write_pgm(const std::filesystem::path& file, const Gray8& img) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + file.string());
}

namespace detail {
inline std::size_t read_pnm_int(std::istream& in) {
  int ch = in.get();
  for (;;) {
    while (ch != EOF && std::isspace(ch)) ch = in.get();
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
      continue;
    }
    break;
  }
  if (ch == EOF || !std::isdigit(ch)) throw std::runtime_error("malformed PNM header");
  std::size_t v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    ch = in.get();
  }
  return v;  // the single whitespace after the value has been consumed
}
}  // namespace detail

inline Gray8 read_pgm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  char magic[2];
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') throw std::runtime_error(file.string() + ": not a P5 PGM");
  Gray8 g;
  g.width = detail::read_pnm_int(in);
  g.height = detail::read_pnm_int(in);
  if (detail::read_pnm_int(in) != 255) throw std::runtime_error(file.string() + ": only maxval 255 is supported");
  g.pixels.resize(g.width * g.height);
  if (!in.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size())))
    throw std::runtime_error(file.string() + ": truncated pixel data");
  return g;
}

// Loads a binary PPM (P6) or PGM (P5) into a [0,1] image stack.
inline ImageStack read_pnm_image(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  char magic[2];
  in.read(magic, 2);
  if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw std::runtime_error(file.string() + ": expected a binary PPM (P6) or PGM (P5)");
  const std::size_t channels = magic[1] == '6' ? 3 : 1;
  const std::size_t w = detail::read_pnm_int(in);
  const std::size_t h = detail::read_pnm_int(in);
  if (detail::read_pnm_int(in) != 255) throw std::runtime_error(file.string() + ": only maxval 255 is supported");
  std::vector<unsigned char> buf(w * h * channels);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw std::runtime_error(file.string() + ": truncated pixel data");
  std::vector<FloatPlane> planes;
  for (std::size_t c = 0; c < channels; ++c) {
    std::vector<float> v(w * h);
    for (std::size_t i = 0; i < w * h; ++i) v[i] = static_cast<float>(buf[i * channels + c]) / 255.0f;
    planes.emplace_back(h, w, std::move(v));
  }
  return ImageStack(std::move(planes));
}

inline void write_ppm(const std::filesystem::path& file, const ImageStack& img) {
  if (img.channels() != 3) throw std::invalid_argument("write_ppm: need 3 channels");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t c = 0; c < img.width(); ++c)
      for (std::size_t ch = 0; ch < 3; ++ch)
        out.put(static_cast<char>(std::lround(std::clamp(img[ch](r, c), 0.0f, 1.0f) * 255.0f)));
}

// Linear min/max rescale to [0,255]; a constant plane maps to 0.
template <typename T>
Gray8 rescale_to_gray(const Plane<T>& p) {
  Gray8 g{p.height(), p.width(), std::vector<std::uint8_t>(p.size(), 0)};
  if (p.size() == 0) return g;
  const auto [lo, hi] = std::minmax_element(p.values().begin(), p.values().end());
  const double mn = static_cast<double>(*lo), mx = static_cast<double>(*hi);
  if (mx <= mn) return g;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double v = (static_cast<double>(p.values()[i]) - mn) / (mx - mn) * 255.0;
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  return g;
}

// +1 -> 255, -1 -> 0.
inline Gray8 binary_to_gray(const BitPlane& b) {
  Gray8 g{b.height(), b.width(), std::vector<std::uint8_t>(b.size(), 0)};
  for (std::size_t r = 0; r < b.height(); ++r)
    for (std::size_t c = 0; c < b.width(); ++c) g.pixels[r * b.width() + c] = b.bit(r, c) ? 255 : 0;
  return g;
}

// Grid of equally sized tiles: rows[i][j] placed at row i, column j, separated
// by `gap` pixels of value `fill`.
inline Gray8 compose_grid(const std::vector<std::vector<Gray8>>& rows, std::size_t gap = 2, std::uint8_t fill = 128) {
  if (rows.empty() || rows.front().empty()) throw std::invalid_argument("compose_grid: empty grid");
  const std::size_t th = rows.front().front().height, tw = rows.front().front().width;
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  Gray8 g;
  g.height = rows.size() * th + (rows.size() - 1) * gap;
  g.width = cols * tw + (cols - 1) * gap;
  g.pixels.assign(g.height * g.width, fill);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      const Gray8& t = rows[i][j];
      if (t.height != th || t.width != tw) throw std::invalid_argument("compose_grid: tile size mismatch");
      for (std::size_t r = 0; r < th; ++r)
        std::copy_n(t.pixels.begin() + static_cast<std::ptrdiff_t>(r * tw), tw,
                    g.pixels.begin() + static_cast<std::ptrdiff_t>((i * (th + gap) + r) * g.width + j * (tw + gap)));
    }
  }
  return g;
}

}  // namespace design
