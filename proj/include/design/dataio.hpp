#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "design/activation.hpp"
#include "design/tensor.hpp"

namespace design {

// Images are stored in single precision. A full CIFAR-10 split is 60k images,
// and pixels are 8-bit sources, so float is lossless.
using ImageStack = FeatureStack<FloatPlane>;

struct LabeledImage {
  std::uint32_t label = 0;
  ImageStack channels;
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct DataSplit {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;
  ChannelStats stats;  // from train only
  std::size_t num_classes = 0;
};

struct DatasetMeta {
  std::size_t num_classes = 10;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
};

inline ChannelStats compute_stats(const std::vector<LabeledImage>& images) {
  if (images.empty()) throw std::invalid_argument("compute_stats: no images");
  const std::size_t nc = images.front().channels.channels();
  ChannelStats s;
  s.mean.assign(nc, 0.0);
  s.stddev.assign(nc, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (const auto& img : images) {
      for (float v : img.channels[c].values()) {
        sum += v;
        sq += static_cast<double>(v) * v;
      }
      n += img.channels[c].size();
    }
    const double m = sum / static_cast<double>(n);
    s.mean[c] = m;
    s.stddev[c] = std::sqrt(std::max(0.0, sq / static_cast<double>(n) - m * m));
  }
  return s;
}

// Parses fixed-size records: one label byte then channels*height*width
// pixel bytes, channel-planar, row-major. Pixels scale to [0,1].
inline std::vector<LabeledImage> read_records(const std::filesystem::path& file, const DatasetMeta& meta,
                                              std::size_t expected_records = 0) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  const std::size_t pixels = meta.channels * meta.height * meta.width;
  const std::size_t record = 1 + pixels;
  if (bytes % record != 0) {
    throw std::runtime_error(file.string() + ": size " + std::to_string(bytes) + " is not a multiple of the " +
                             std::to_string(record) + "-byte record (truncated file?)");
  }
  const std::size_t count = bytes / record;
  if (expected_records != 0 && count != expected_records) {
    throw std::runtime_error(file.string() + ": expected " + std::to_string(expected_records) + " records, found " +
                             std::to_string(count));
  }
  std::vector<LabeledImage> out;
  out.reserve(count);
  std::vector<unsigned char> buf(record);
  for (std::size_t i = 0; i < count; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record))) {
      throw std::runtime_error(file.string() + ": truncated at record " + std::to_string(i));
    }
    LabeledImage img;
    img.label = buf[0];
    if (img.label >= meta.num_classes) {
      throw std::runtime_error(file.string() + ": record " + std::to_string(i) + " has label " +
                               std::to_string(img.label) + " >= " + std::to_string(meta.num_classes));
    }
    std::vector<FloatPlane> planes;
    planes.reserve(meta.channels);
    const std::size_t plane_px = meta.height * meta.width;
    for (std::size_t c = 0; c < meta.channels; ++c) {
      std::vector<float> v(plane_px);
      for (std::size_t p = 0; p < plane_px; ++p) v[p] = static_cast<float>(buf[1 + c * plane_px + p]) / 255.0f;
      planes.emplace_back(meta.height, meta.width, std::move(v));
    }
    img.channels = ImageStack(std::move(planes));
    out.push_back(std::move(img));
  }
  return out;
}

// Standard CIFAR-10 binary distribution: data_batch_{1..5}.bin + test_batch.bin.
// A directory with a metadata.json ({num_classes, height, width, channels})
// and train.bin/test.bin in the same record format is accepted as well.
inline DataSplit load_dataset_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  DataSplit split;
  if (fs::exists(dir / "metadata.json")) {
    std::ifstream mf(dir / "metadata.json");
    const auto j = nlohmann::json::parse(mf);
    DatasetMeta meta;
    meta.num_classes = j.at("num_classes").get<std::size_t>();
    meta.height = j.at("height").get<std::size_t>();
    meta.width = j.at("width").get<std::size_t>();
    meta.channels = j.at("channels").get<std::size_t>();
    split.train = read_records(dir / "train.bin", meta);
    split.test = read_records(dir / "test.bin", meta);
    split.num_classes = meta.num_classes;
  } else {
    const DatasetMeta meta;
    for (int b = 1; b <= 5; ++b) {
      auto part = read_records(dir / ("data_batch_" + std::to_string(b) + ".bin"), meta, 10000);
      std::move(part.begin(), part.end(), std::back_inserter(split.train));
    }
    split.test = read_records(dir / "test_batch.bin", meta, 10000);
    split.num_classes = 10;
  }
  split.stats = compute_stats(split.train);
  return split;
}

inline DataSplit load_cifar10(const std::filesystem::path& dir) {
  const auto base = std::filesystem::exists(dir / "cifar-10-batches-bin") ? dir / "cifar-10-batches-bin" : dir;
  return load_dataset_dir(base);
}

inline void write_records(const std::filesystem::path& file, const std::vector<LabeledImage>& images) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  for (const auto& img : images) {
    out.put(static_cast<char>(img.label));
    for (const auto& p : img.channels.planes()) {
      for (float v : p.values()) out.put(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
  }
}

inline RealPlane standardize(const FloatPlane& p, double mean, double stddev) {
  const double inv = stddev > 0 ? 1.0 / stddev : 1.0;
  RealPlane out(p.height(), p.width());
  for (std::size_t i = 0; i < p.size(); ++i) out.values()[i] = (static_cast<double>(p.values()[i]) - mean) * inv;
  return out;
}

// Per channel: standardize with train statistics, then Sign.
inline FeatureStack<BitPlane> binarize_for_search(const LabeledImage& img, const ChannelStats& stats) {
  std::vector<BitPlane> planes;
  planes.reserve(img.channels.channels());
  for (std::size_t c = 0; c < img.channels.channels(); ++c) {
    planes.push_back(sign_fwd(standardize(img.channels[c], stats.mean.at(c), stats.stddev.at(c))));
  }
  return FeatureStack<BitPlane>(std::move(planes));
}

namespace detail {
inline std::vector<std::size_t> balanced_indices(const std::vector<LabeledImage>& images, std::size_t classes,
                                                 std::size_t n_per_class, std::mt19937_64& rng, const char* what) {
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < images.size(); ++i) by_class.at(images[i].label).push_back(i);
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < n_per_class) {
      throw std::invalid_argument(std::string("subset: class ") + std::to_string(c) + " has " +
                                  std::to_string(idx.size()) + " " + what + " samples, need " +
                                  std::to_string(n_per_class));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_per_class));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}
}  // namespace detail

// Class-balanced seeded subset of the train split (n_per_class per class);
// the test split is subsampled the same way when n_test_per_class > 0, else
// kept whole. Statistics are recomputed from the new train split.
inline DataSplit subset(const DataSplit& split, std::size_t n_per_class, std::uint64_t seed,
                        std::size_t n_test_per_class = 0) {
  std::mt19937_64 rng(seed);
  DataSplit out;
  out.num_classes = split.num_classes;
  for (auto i : detail::balanced_indices(split.train, split.num_classes, n_per_class, rng, "train"))
    out.train.push_back(split.train[i]);
  if (n_test_per_class > 0) {
    for (auto i : detail::balanced_indices(split.test, split.num_classes, n_test_per_class, rng, "test"))
      out.test.push_back(split.test[i]);
  } else {
    out.test = split.test;
  }
  out.stats = compute_stats(out.train);
  return out;
}

// Seeded class-balanced sample of `total` train images; the first total % classes
// classes contribute one extra image.
inline std::vector<LabeledImage> balanced_sample(const std::vector<LabeledImage>& images, std::size_t classes,
                                                 std::size_t total, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < images.size(); ++i) by_class.at(images[i].label).push_back(i);
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t want = total / classes + (c < total % classes ? 1 : 0);
    auto& idx = by_class[c];
    if (idx.size() < want) throw std::invalid_argument("balanced_sample: not enough images in class " + std::to_string(c));
    std::shuffle(idx.begin(), idx.end(), rng);
    picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(picked.begin(), picked.end());
  std::vector<LabeledImage> out;
  for (auto i : picked) out.push_back(images[i]);
  return out;
}

struct SynthOptions {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  double noise = 0.15;
  std::size_t n_test = 0;  // 0 -> n / 4, rounded up to a multiple of classes
};

namespace detail {
inline std::vector<LabeledImage> stripe_images(std::size_t n, std::size_t classes, const SynthOptions& opt,
                                               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<LabeledImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LabeledImage img;
    img.label = static_cast<std::uint32_t>(i % classes);
    const double theta = M_PI * static_cast<double>(img.label) / static_cast<double>(classes);
    const double freq = 2.0 * M_PI / (5.0 + 3.0 * unit(rng));
    const double phase = 2.0 * M_PI * unit(rng);
    const double ux = std::cos(theta), uy = std::sin(theta);
    std::vector<FloatPlane> planes;
    for (std::size_t c = 0; c < opt.channels; ++c) {
      const double gain = 0.6 + 0.4 * unit(rng);
      std::vector<float> v(opt.height * opt.width);
      for (std::size_t r = 0; r < opt.height; ++r) {
        for (std::size_t q = 0; q < opt.width; ++q) {
          const double s = std::sin(freq * (ux * static_cast<double>(q) + uy * static_cast<double>(r)) + phase);
          const double px = 0.5 + 0.45 * gain * s + opt.noise * gauss(rng);
          v[r * opt.width + q] = static_cast<float>(std::clamp(px, 0.0, 1.0));
        }
      }
      planes.emplace_back(opt.height, opt.width, std::move(v));
    }
    img.channels = ImageStack(std::move(planes));
    out.push_back(std::move(img));
  }
  return out;
}
}  // namespace detail

// Oriented sinusoidal stripes with random frequency and phase plus Gaussian
// noise; class c has stripe angle pi * c / classes. Labels cycle, so balance
// is exact when classes divides n.
inline DataSplit synth_dataset(std::size_t n, std::size_t classes, std::uint64_t seed, const SynthOptions& opt = {}) {
  if (classes == 0 || n < classes) throw std::invalid_argument("synth_dataset: need n >= classes >= 1");
  std::mt19937_64 rng(seed);
  DataSplit split;
  split.num_classes = classes;
  split.train = detail::stripe_images(n, classes, opt, rng);
  std::size_t n_test = opt.n_test;
  if (n_test == 0) n_test = ((n / 4 + classes - 1) / classes) * classes;
  split.test = detail::stripe_images(n_test, classes, opt, rng);
  split.stats = compute_stats(split.train);
  return split;
}

// Horizontal flip plus 4-pixel padded random crop.
inline LabeledImage augment(const LabeledImage& img, std::mt19937_64& rng, std::size_t pad = 4) {
  const bool flip = rng() & 1u;
  const auto dy = static_cast<std::ptrdiff_t>(rng() % (2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
  const auto dx = static_cast<std::ptrdiff_t>(rng() % (2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
  std::vector<FloatPlane> planes;
  for (const auto& p : img.channels.planes()) {
    FloatPlane o(p.height(), p.width(), 0.0f);
    const auto h = static_cast<std::ptrdiff_t>(p.height());
    const auto w = static_cast<std::ptrdiff_t>(p.width());
    for (std::ptrdiff_t r = 0; r < h; ++r) {
      for (std::ptrdiff_t c = 0; c < w; ++c) {
        const std::ptrdiff_t sr = r + dy;
        std::ptrdiff_t sc = c + dx;
        if (flip) sc = w - 1 - sc;
        if (sr >= 0 && sr < h && sc >= 0 && sc < w)
          o(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) =
              p(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc));
      }
    }
    planes.push_back(std::move(o));
  }
  return {img.label, ImageStack(std::move(planes))};
}

}  // namespace design
