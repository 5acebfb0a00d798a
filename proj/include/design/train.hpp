#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "design/config.hpp"
#include "design/dataio.hpp"
#include "design/kernel_file.hpp"
#include "design/network.hpp"

namespace design {

// Standardized NCHW batch from images[idx[lo..hi)].
template <typename T>
Tensor<T> make_batch(const std::vector<LabeledImage>& images, const std::vector<std::size_t>& idx, std::size_t lo,
                     std::size_t hi, const ChannelStats& stats, std::vector<std::uint32_t>* labels = nullptr,
                     std::mt19937_64* augment_rng = nullptr) {
  if (hi <= lo) throw std::invalid_argument("make_batch: empty range");
  const ImageStack& first = images[idx[lo]].channels;
  const std::size_t c = first.channels(), h = first.height(), w = first.width();
  if (stats.mean.size() != c) throw std::invalid_argument("make_batch: stats channel count mismatch");
  Tensor<T> x(hi - lo, c, h, w);
  if (labels) labels->resize(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    LabeledImage aug;
    const LabeledImage* img = &images[idx[i]];
    if (augment_rng) {
      aug = augment(*img, *augment_rng);
      img = &aug;
    }
    if (img->channels.channels() != c || img->channels.height() != h || img->channels.width() != w)
      throw std::invalid_argument("make_batch: images differ in shape");
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double m = stats.mean[ch], s = stats.stddev[ch] > 0 ? stats.stddev[ch] : 1.0;
      const auto& src = img->channels[ch].values();
      T* dst = x.sample(i - lo) + ch * h * w;
      for (std::size_t q = 0; q < h * w; ++q) dst[q] = static_cast<T>((src[q] - m) / s);
    }
    if (labels) (*labels)[i - lo] = img->label;
  }
  return x;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_acc = 0;
  double test_acc = 0;
  double loss = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double best_test_acc = -1;
  std::size_t best_epoch = 0;

  double last_test_acc() const { return epochs.empty() ? 0.0 : epochs.back().test_acc; }

  void write_csv(std::ostream& os) const {
    os << "epoch,train_acc,test_acc,loss\n";
    char buf[128];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f\n", e.epoch, e.train_acc, e.test_acc, e.loss);
      os << buf;
    }
  }
};

// Top-1 accuracy in eval mode.
template <typename T>
double evaluate(Model<T>& model, const std::vector<LabeledImage>& images, const ChannelStats& stats,
                std::size_t batch = 256, std::vector<std::uint32_t>* predictions = nullptr) {
  if (images.empty()) throw std::invalid_argument("evaluate: no images");
  std::vector<std::size_t> idx(images.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t correct = 0;
  if (predictions) predictions->clear();
  for (std::size_t lo = 0; lo < images.size(); lo += batch) {
    const std::size_t hi = std::min(images.size(), lo + batch);
    std::vector<std::uint32_t> labels;
    const auto pred = argmax_rows(model.forward(make_batch<T>(images, idx, lo, hi, stats, &labels), false));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    if (predictions) predictions->insert(predictions->end(), pred.begin(), pred.end());
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

template <typename T>
class Optimizer {
 public:
  explicit Optimizer(const TrainOptions& opt) : opt_(opt) {}

  void step(std::vector<Param<T>>& params, double lr) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
    }
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1 - std::pow(b1, static_cast<double>(t_)), c2 = 1 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = params[pi];
      if (!p.trainable) continue;
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        double g = p.grad[i];
        if (p.decay) g += opt_.weight_decay * p.value[i];
        double x = p.value[i];
        if (opt_.optimizer == "adam") {
          m[i] = b1 * m[i] + (1 - b1) * g;
          v[i] = b2 * v[i] + (1 - b2) * g * g;
          x -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        } else {
          m[i] = opt_.momentum * m[i] + g;
          x -= lr * m[i];
        }
        if (p.latent_binary) x = std::clamp(x, -1.0, 1.0);
        if (p.positive) x = std::max(x, static_cast<double>(Model<T>::kGammaFloor));
        p.value[i] = static_cast<T>(x);
      }
    }
  }

 private:
  TrainOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

inline double scheduled_lr(const TrainOptions& opt, std::size_t step, std::size_t total) {
  if (opt.schedule == "constant" || total == 0) return opt.lr;
  return opt.lr * 0.5 * (1 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total)));
}

// Called after every epoch with the model state of that epoch.
template <typename T>
using EpochCallback = std::function<void(const EpochRecord&, bool is_best, Model<T>&)>;

template <typename T>
TrainReport train(Model<T>& model, const DataSplit& data, const TrainOptions& opt,
                  const EpochCallback<T>& on_epoch = {}) {
  if (data.train.empty()) throw std::invalid_argument("train: empty train split");
  std::mt19937_64 order_rng(model.config().seed ^ 0x5deece66dull);
  std::mt19937_64 aug_rng(model.config().seed ^ 0xa5a5a5a5ull);
  Optimizer<T> optim(opt);
  TrainReport report;
  const std::size_t n = data.train.size();
  const std::size_t per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
  const std::size_t total = per_epoch * opt.epochs;
  std::size_t step = 0;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), order_rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t lo = 0; lo < n; lo += opt.batch_size) {
      const std::size_t hi = std::min(n, lo + opt.batch_size);
      std::vector<std::uint32_t> labels;
      auto x = make_batch<T>(data.train, idx, lo, hi, data.stats, &labels, opt.augment ? &aug_rng : nullptr);
      auto logits = model.forward(x, true);
      Tensor<T> dlogits;
      const double loss = cross_entropy(logits, labels, &dlogits);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "training diverged: loss " << loss << " at epoch " << epoch << ", batch " << lo / opt.batch_size
           << ", lr " << scheduled_lr(opt, step, total);
        throw std::runtime_error(os.str());
      }
      const auto pred = argmax_rows(logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
      loss_sum += loss * static_cast<double>(hi - lo);
      model.backward(dlogits);
      optim.step(model.params(), scheduled_lr(opt, step, total));
      ++step;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(n);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    rec.test_acc = data.test.empty() ? 0.0 : evaluate(model, data.test, data.stats);
    const bool best = rec.test_acc > report.best_test_acc;
    if (best) {
      report.best_test_acc = rec.test_acc;
      report.best_epoch = epoch;
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec, best, model);
  }
  return report;
}

// Checkpoint container:
//   "DSCK" | u32 version | u64 config hash | u64 meta length | meta JSON |
//   u32 param count | per param: u32 name length, name, u64 count, f64 values.
// Integers are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  nlohmann::json config;
  std::optional<ThresholdFile> thresholds;
  ChannelStats stats;
  std::size_t num_classes = 0;
  std::size_t epoch = 0;
  double test_acc = 0;
  double best_test_acc = 0;
};

namespace detail {
template <typename U>
void put_le(std::ostream& os, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}
template <typename U>
U get_le(std::istream& is) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int ch = is.get();
    if (ch == EOF) throw std::runtime_error("checkpoint: truncated");
    v |= static_cast<std::uint64_t>(ch) << (8 * i);
  }
  return static_cast<U>(v);
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const CheckpointMeta& meta) {
  nlohmann::json j;
  j["config"] = meta.config;
  j["thresholds"] = meta.thresholds ? to_json(*meta.thresholds) : nlohmann::json(nullptr);
  j["stats"] = {{"mean", meta.stats.mean}, {"stddev", meta.stats.stddev}};
  j["num_classes"] = meta.num_classes;
  j["epoch"] = meta.epoch;
  j["test_acc"] = meta.test_acc;
  j["best_test_acc"] = meta.best_test_acc;
  const std::string blob = j.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write("DSCK", 4);
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint64_t>(os, hash_json(meta.config));
  detail::put_le<std::uint64_t>(os, blob.size());
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_le<std::uint64_t>(os, p.value.size());
    for (auto v : p.value) {
      const double d = static_cast<double>(v);
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      detail::put_le<std::uint64_t>(os, bits);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
struct LoadedCheckpoint {
  CheckpointMeta meta;
  ModelConfig config;
  Model<T> model;
};

inline CheckpointMeta read_checkpoint_meta(std::istream& is, std::uint64_t& hash) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "DSCK", 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  hash = detail::get_le<std::uint64_t>(is);
  const auto len = detail::get_le<std::uint64_t>(is);
  std::string blob(len, '\0');
  if (!is.read(blob.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("checkpoint: truncated");
  const auto j = nlohmann::json::parse(blob);
  CheckpointMeta m;
  m.config = j.at("config");
  if (!j.at("thresholds").is_null()) m.thresholds = threshold_file_from_json(j["thresholds"]);
  m.stats.mean = j.at("stats").at("mean").get<std::vector<double>>();
  m.stats.stddev = j.at("stats").at("stddev").get<std::vector<double>>();
  m.num_classes = j.at("num_classes").get<std::size_t>();
  m.epoch = j.at("epoch").get<std::size_t>();
  m.test_acc = j.at("test_acc").get<double>();
  m.best_test_acc = j.at("best_test_acc").get<double>();
  if (hash_json(m.config) != hash) throw std::runtime_error("checkpoint: config hash mismatch");
  return m;
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::uint64_t hash = 0;
  CheckpointMeta meta = read_checkpoint_meta(is, hash);
  ModelConfig cfg = config_from_json(meta.config, false);
  LoadedCheckpoint<T> out{meta, cfg, Model<T>(cfg, meta.thresholds)};
  const auto count = detail::get_le<std::uint32_t>(is);
  if (count != out.model.params().size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = detail::get_le<std::uint32_t>(is);
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw std::runtime_error("checkpoint: truncated");
    auto& p = out.model.param(name);
    const auto n = detail::get_le<std::uint64_t>(is);
    if (n != p.value.size()) throw std::runtime_error("checkpoint: size mismatch for " + name);
    for (auto& v : p.value) {
      const auto bits = detail::get_le<std::uint64_t>(is);
      double d;
      std::memcpy(&d, &bits, sizeof d);
      v = static_cast<T>(d);
    }
  }
  return out;
}

// Builds the data split described by a config.
inline DataSplit load_config_data(const ModelConfig& cfg) {
  const DataOptions& d = cfg.data;
  DataSplit split;
  if (d.source == "synth") {
    SynthOptions so;
    so.height = so.width = d.synth_size;
    so.channels = d.synth_channels;
    so.noise = d.synth_noise;
    split = synth_dataset(d.synth_n, d.synth_classes, cfg.seed, so);
  } else if (d.source == "cifar10") {
    split = load_cifar10(d.path);
  } else {
    split = load_dataset_dir(d.path);
  }
  if (d.n_per_class > 0) split = subset(split, d.n_per_class, cfg.seed, d.n_test_per_class);
  return split;
}

// Input shape and class count must agree with the data.
inline void check_config_against_data(const ModelConfig& cfg, const DataSplit& data) {
  const auto& img = data.train.front().channels;
  std::vector<std::string> errors;
  if (img.channels() != cfg.in_channels) errors.push_back("input.channels does not match the data");
  if (img.height() != cfg.in_height) errors.push_back("input.height does not match the data");
  if (img.width() != cfg.in_width) errors.push_back("input.width does not match the data");
  if (data.num_classes != cfg.num_classes) errors.push_back("num_classes does not match the data");
  if (!errors.empty()) {
    std::string msg = "config/data mismatch:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw std::invalid_argument(msg);
  }
}

}  // namespace design
