#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "design/activation.hpp"
#include "design/bitconv.hpp"
#include "design/config.hpp"
#include "design/kernel_file.hpp"
#include "design/parallel.hpp"
#include "design/tensor.hpp"
#include "design/threshold_scale.hpp"

namespace design {

// NCHW batch tensor.
template <typename T>
struct Tensor {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, T fill = T{0})
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

  std::size_t sample_size() const { return c * h * w; }
  std::size_t plane_size() const { return h * w; }
  T* sample(std::size_t i) { return data.data() + i * sample_size(); }
  const T* sample(std::size_t i) const { return data.data() + i * sample_size(); }
  T& at(std::size_t i, std::size_t ch, std::size_t r, std::size_t col) { return data[((i * c + ch) * h + r) * w + col]; }
  T at(std::size_t i, std::size_t ch, std::size_t r, std::size_t col) const {
    return data[((i * c + ch) * h + r) * w + col];
  }
};

// kBinary is the deployed network. kClipSurrogate replaces every Sign (weights
// and activations) with Clip, the function whose derivative the backward pass
// uses, so finite differences of the surrogate validate the gradients.
enum class ForwardMode { kBinary, kClipSurrogate };

template <typename T>
struct Param {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;
  bool latent_binary = false;  // clipped to [-1,1] after each update
  bool decay = false;          // subject to weight decay
  bool positive = false;       // clamped to a small positive floor (BN gamma)
};

// Per-channel threshold bases for a design layer, resolved from a threshold
// file. Channels take the file's kernels round-robin when the file mode
// matches the activation; otherwise kernels are generated from the file's
// first kernel.
inline std::vector<ScaledThresholdKernel> resolve_thresholds(const ThresholdFile& f, Activation act,
                                                             std::size_t channels) {
  const LevelSet levels = f.level_set();
  QuantizerLevels q;
  if (!f.boundaries.empty()) {
    q.boundaries = f.boundaries;
  } else {
    q = half_gaussian_kmeans(levels.n(), 100000, 0);
  }
  auto scaled = [&](const ThresholdKernel& t) { return scale_kernel(t, q, levels); };
  std::vector<ScaledThresholdKernel> out;
  out.reserve(channels);
  const std::string want = act == Activation::kDesign3DShift ? "3d-s" : act == Activation::kDesign3DComplement ? "3d-c" : "2d";
  if (want == "2d") {
    const ScaledThresholdKernel base = f.scaled_entries ? channel_kernel(f, 0) : scaled(f.entries[0]);
    out.assign(channels, base);
  } else if (f.mode == want && f.scaled_entries) {
    for (std::size_t c = 0; c < channels; ++c) out.push_back(channel_kernel(f, c));
  } else {
    for (const auto& t : make_3d(f.entries[0], channels, parse_mode_3d(want), levels)) out.push_back(scaled(t));
  }
  return out;
}

template <typename T>
class Model {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using CMatMap = Eigen::Map<const Mat>;
  static constexpr std::size_t kGradChunks = 4;
  static constexpr T kGammaFloor = T(1e-3);

  struct Block {
    LayerSpec spec;
    std::size_t cin = 0, in_h = 0, in_w = 0;
    std::size_t conv_h = 0, conv_w = 0, out_h = 0, out_w = 0;
    std::size_t pad_lo = 0, pad_hi = 0;
    std::size_t weight = 0, gamma = 0, beta = 0, run_mean = 0, run_var = 0;  // param indices
    std::size_t thr_d = 0;
    std::vector<std::vector<T>> thresholds;  // per channel d*d base, before gamma rescale
  };

  // Activations kept from the last forward pass for backward and inspection.
  struct BlockCache {
    Tensor<T> input;
    std::vector<T> wb;         // binarized (or clipped) weights
    Tensor<T> conv;            // conv output, pre-pool
    std::vector<std::uint32_t> pool_arg;
    Tensor<T> bn_in;           // post-pool
    Tensor<T> xhat;
    std::vector<T> inv_std;
    Tensor<T> bn_out;          // X_s
    Tensor<T> shifted;         // X_s - tiled threshold
    Tensor<T> out;
  };

  Model(ModelConfig cfg, const std::optional<ThresholdFile>& thresholds) : cfg_(std::move(cfg)) {
    std::mt19937_64 rng(cfg_.seed);
    std::size_t c = cfg_.in_channels, h = cfg_.in_height, w = cfg_.in_width;
    for (std::size_t li = 0; li < cfg_.layers.size(); ++li) {
      const LayerSpec& s = cfg_.layers[li];
      Block b;
      b.spec = s;
      b.cin = c;
      b.in_h = h;
      b.in_w = w;
      b.pad_lo = s.pad ? (s.k - 1) / 2 : 0;
      b.pad_hi = s.pad ? s.k / 2 : 0;
      if (h + b.pad_lo + b.pad_hi < s.k || w + b.pad_lo + b.pad_hi < s.k)
        throw std::invalid_argument("layer " + std::to_string(li) + ": input too small for kernel");
      b.conv_h = h + b.pad_lo + b.pad_hi - s.k + 1;
      b.conv_w = w + b.pad_lo + b.pad_hi - s.k + 1;
      b.out_h = s.pool ? b.conv_h / 2 : b.conv_h;
      b.out_w = s.pool ? b.conv_w / 2 : b.conv_w;
      if (b.out_h == 0 || b.out_w == 0) throw std::invalid_argument("layer " + std::to_string(li) + ": empty output");

      const std::string p = "block" + std::to_string(li) + ".";
      const std::size_t fan_in = c * s.k * s.k;
      std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      Param<T> wt{p + "weight", std::vector<T>(s.channels * fan_in), {}, true, s.binary, !s.binary, false};
      for (auto& v : wt.value) v = static_cast<T>(s.binary ? std::clamp(init(rng), -1.0, 1.0) : init(rng));
      b.weight = add(std::move(wt));
      b.gamma = add({p + "gamma", std::vector<T>(s.channels, T(1)), {}, learns_gamma(cfg_.bn_setting), false, false, true});
      b.beta = add({p + "beta", std::vector<T>(s.channels, T(0)), {}, learns_beta(cfg_.bn_setting), false, false, false});
      b.run_mean = add({p + "running_mean", std::vector<T>(s.channels, T(0)), {}, false, false, false, false});
      b.run_var = add({p + "running_var", std::vector<T>(s.channels, T(1)), {}, false, false, false, false});

      if (is_design(s.activation)) {
        if (!thresholds) throw std::invalid_argument("layer " + std::to_string(li) + ": design activation needs thresholds");
        for (const auto& k : resolve_thresholds(*thresholds, s.activation, s.channels)) {
          b.thr_d = k.d();
          b.thresholds.emplace_back(k.entries().begin(), k.entries().end());
        }
      }
      blocks_.push_back(std::move(b));
      c = s.channels;
      h = blocks_.back().out_h;
      w = blocks_.back().out_w;
    }
    features_ = c * h * w;
    std::normal_distribution<double> hinit(0.0, 1.0 / std::sqrt(static_cast<double>(features_)));
    Param<T> hw{"head.weight", std::vector<T>(cfg_.num_classes * features_), {}, true, false, true, false};
    for (auto& v : hw.value) v = static_cast<T>(hinit(rng));
    head_w_ = add(std::move(hw));
    head_b_ = add({"head.bias", std::vector<T>(cfg_.num_classes, T(0)), {}, true, false, false, false});
    caches_.resize(blocks_.size());
    if (threads_ == 0) threads_ = default_threads();
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const BlockCache& cache(std::size_t layer) const { return caches_.at(layer); }
  const Tensor<T>& features() const { return feat_; }
  std::size_t feature_size() const { return features_; }
  void set_threads(std::size_t t) { threads_ = std::max<std::size_t>(1, t); }

  Param<T>& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw std::out_of_range("no parameter " + name);
  }

  // Threshold applied to channel ch at output position (r, c) of block b.
  T threshold_at(const Block& b, std::size_t ch, std::size_t r, std::size_t c) const {
    if (b.thresholds.empty()) return T(0);
    T t = b.thresholds[ch][(r % b.thr_d) * b.thr_d + (c % b.thr_d)];
    if (learns_gamma(cfg_.bn_setting)) t *= params_[b.gamma].value[ch];
    return t;
  }

  // Runs blocks [0, stop) and returns the output of block stop-1 (the head
  // is skipped when stop < number of blocks).
  Tensor<T> forward_blocks(const Tensor<T>& x, bool training, ForwardMode mode, std::size_t stop) {
    Tensor<T> cur = x;
    for (std::size_t li = 0; li < std::min(stop, blocks_.size()); ++li) {
      block_forward(li, cur, training, mode);
      cur = caches_[li].out;
    }
    return cur;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training, ForwardMode mode = ForwardMode::kBinary) {
    if (x.c != cfg_.in_channels || x.h != cfg_.in_height || x.w != cfg_.in_width)
      throw std::invalid_argument("forward: input shape does not match the model config");
    feat_ = forward_blocks(x, training, mode, blocks_.size());
    const auto& W = params_[head_w_].value;
    const auto& bias = params_[head_b_].value;
    Tensor<T> logits(x.n, cfg_.num_classes, 1, 1);
    CMatMap F(feat_.data.data(), static_cast<Eigen::Index>(x.n), static_cast<Eigen::Index>(features_));
    CMatMap Wm(W.data(), static_cast<Eigen::Index>(cfg_.num_classes), static_cast<Eigen::Index>(features_));
    MatMap L(logits.data.data(), static_cast<Eigen::Index>(x.n), static_cast<Eigen::Index>(cfg_.num_classes));
    L.noalias() = F * Wm.transpose();
    for (std::size_t i = 0; i < x.n; ++i)
      for (std::size_t k = 0; k < cfg_.num_classes; ++k) L(i, k) += bias[k];
    last_training_ = training;
    return logits;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.assign(p.value.size(), T(0));
  }

  // Back-propagates dL/dlogits through the last training-mode forward pass.
  void backward(const Tensor<T>& dlogits) {
    if (!last_training_) throw std::logic_error("backward requires a training-mode forward pass");
    zero_grad();
    const std::size_t n = dlogits.n;
    CMatMap D(dlogits.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg_.num_classes));
    CMatMap F(feat_.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(features_));
    MatMap dW(params_[head_w_].grad.data(), static_cast<Eigen::Index>(cfg_.num_classes),
              static_cast<Eigen::Index>(features_));
    dW.noalias() = D.transpose() * F;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < cfg_.num_classes; ++k) params_[head_b_].grad[k] += D(i, k);
    CMatMap Wm(params_[head_w_].value.data(), static_cast<Eigen::Index>(cfg_.num_classes),
               static_cast<Eigen::Index>(features_));
    Tensor<T> grad(n, caches_.back().out.c, caches_.back().out.h, caches_.back().out.w);
    MatMap G(grad.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(features_));
    G.noalias() = D * Wm;
    for (std::size_t li = blocks_.size(); li-- > 0;) grad = block_backward(li, grad, li > 0);
  }

  // Binarized weights of a layer exactly as used by the binary forward pass.
  std::vector<T> binarized_weights(std::size_t layer) const {
    const Block& b = blocks_.at(layer);
    std::vector<T> wb = params_[b.weight].value;
    if (b.spec.binary)
      for (auto& v : wb) v = sign_value(v);
    return wb;
  }

 private:
  std::size_t add(Param<T> p) {
    p.grad.assign(p.value.size(), T(0));
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  void im2col(const Block& b, const T* x, T* cols, T pad_value) const {
    const std::size_t k = b.spec.k, hw = b.conv_h * b.conv_w;
    for (std::size_t ci = 0; ci < b.cin; ++ci) {
      for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t q = 0; q < k; ++q) {
          T* row = cols + ((ci * k + r) * k + q) * hw;
          for (std::size_t i = 0; i < b.conv_h; ++i) {
            const auto sr = static_cast<std::ptrdiff_t>(i + r) - static_cast<std::ptrdiff_t>(b.pad_lo);
            for (std::size_t j = 0; j < b.conv_w; ++j) {
              const auto sc = static_cast<std::ptrdiff_t>(j + q) - static_cast<std::ptrdiff_t>(b.pad_lo);
              const bool inside = sr >= 0 && sc >= 0 && sr < static_cast<std::ptrdiff_t>(b.in_h) &&
                                  sc < static_cast<std::ptrdiff_t>(b.in_w);
              row[i * b.conv_w + j] =
                  inside ? x[(ci * b.in_h + static_cast<std::size_t>(sr)) * b.in_w + static_cast<std::size_t>(sc)]
                         : pad_value;
            }
          }
        }
      }
    }
  }

  void col2im(const Block& b, const T* cols, T* dx) const {
    const std::size_t k = b.spec.k, hw = b.conv_h * b.conv_w;
    for (std::size_t ci = 0; ci < b.cin; ++ci) {
      for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t q = 0; q < k; ++q) {
          const T* row = cols + ((ci * k + r) * k + q) * hw;
          for (std::size_t i = 0; i < b.conv_h; ++i) {
            const auto sr = static_cast<std::ptrdiff_t>(i + r) - static_cast<std::ptrdiff_t>(b.pad_lo);
            if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(b.in_h)) continue;
            for (std::size_t j = 0; j < b.conv_w; ++j) {
              const auto sc = static_cast<std::ptrdiff_t>(j + q) - static_cast<std::ptrdiff_t>(b.pad_lo);
              if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(b.in_w)) continue;
              dx[(ci * b.in_h + static_cast<std::size_t>(sr)) * b.in_w + static_cast<std::size_t>(sc)] +=
                  row[i * b.conv_w + j];
            }
          }
        }
      }
    }
  }

  T pad_value(const Block& b) const { return b.spec.binary ? T(-1) : T(0); }

  void block_forward(std::size_t li, const Tensor<T>& x, bool training, ForwardMode mode) {
    const Block& b = blocks_[li];
    BlockCache& cc = caches_[li];
    const std::size_t n = x.n, cout = b.spec.channels, K = b.cin * b.spec.k * b.spec.k;
    const std::size_t hw = b.conv_h * b.conv_w;
    if (x.c != b.cin || x.h != b.in_h || x.w != b.in_w) throw std::invalid_argument("block input shape mismatch");
    cc.input = x;

    cc.wb = params_[b.weight].value;
    if (b.spec.binary) {
      for (auto& v : cc.wb) v = mode == ForwardMode::kBinary ? sign_value(v) : clip(v);
    }
    cc.conv = Tensor<T>(n, cout, b.conv_h, b.conv_w);
    const T pv = pad_value(b);
    parallel_for(n, threads_, [&](std::size_t i) {
      std::vector<T> cols(K * hw);
      im2col(b, x.sample(i), cols.data(), pv);
      CMatMap Wm(cc.wb.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(K));
      CMatMap Cm(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(hw));
      MatMap O(cc.conv.sample(i), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
      O.noalias() = Wm * Cm;
    });

    if (b.spec.pool) {
      cc.bn_in = Tensor<T>(n, cout, b.out_h, b.out_w);
      cc.pool_arg.assign(cc.bn_in.data.size(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < cout; ++ch) {
          for (std::size_t r = 0; r < b.out_h; ++r) {
            for (std::size_t c = 0; c < b.out_w; ++c) {
              std::size_t best = ((i * cout + ch) * b.conv_h + 2 * r) * b.conv_w + 2 * c;
              for (std::size_t dr = 0; dr < 2; ++dr)
                for (std::size_t dc = 0; dc < 2; ++dc) {
                  const std::size_t idx = ((i * cout + ch) * b.conv_h + 2 * r + dr) * b.conv_w + 2 * c + dc;
                  if (cc.conv.data[idx] > cc.conv.data[best]) best = idx;
                }
              const std::size_t o = ((i * cout + ch) * b.out_h + r) * b.out_w + c;
              cc.bn_in.data[o] = cc.conv.data[best];
              cc.pool_arg[o] = static_cast<std::uint32_t>(best);
            }
          }
        }
      }
    } else {
      cc.bn_in = cc.conv;
      cc.pool_arg.clear();
    }

    // Batch norm: X_s = (X_c - mu) / sqrt(var + eps) * gamma + beta.
    const std::size_t plane = b.out_h * b.out_w;
    auto& gamma = params_[b.gamma].value;
    auto& beta = params_[b.beta].value;
    auto& rmean = params_[b.run_mean].value;
    auto& rvar = params_[b.run_var].value;
    cc.xhat = Tensor<T>(n, cout, b.out_h, b.out_w);
    cc.bn_out = Tensor<T>(n, cout, b.out_h, b.out_w);
    cc.inv_std.assign(cout, T(0));
    const double eps = cfg_.bn_eps;
    for (std::size_t ch = 0; ch < cout; ++ch) {
      double mean, var;
      if (training) {
        double s = 0, sq = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const T* p = cc.bn_in.sample(i) + ch * plane;
          for (std::size_t q = 0; q < plane; ++q) s += p[q];
        }
        const double m = static_cast<double>(n * plane);
        mean = s / m;
        for (std::size_t i = 0; i < n; ++i) {
          const T* p = cc.bn_in.sample(i) + ch * plane;
          for (std::size_t q = 0; q < plane; ++q) sq += (p[q] - mean) * (p[q] - mean);
        }
        var = sq / m;
        const double mom = cfg_.bn_momentum;
        const double unbiased = m > 1 ? var * m / (m - 1) : var;
        rmean[ch] = static_cast<T>((1 - mom) * rmean[ch] + mom * mean);
        rvar[ch] = static_cast<T>((1 - mom) * rvar[ch] + mom * unbiased);
      } else {
        mean = rmean[ch];
        var = rvar[ch];
      }
      const double inv = 1.0 / std::sqrt(var + eps);
      cc.inv_std[ch] = static_cast<T>(inv);
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = cc.bn_in.sample(i) + ch * plane;
        T* xh = cc.xhat.sample(i) + ch * plane;
        T* y = cc.bn_out.sample(i) + ch * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          xh[q] = static_cast<T>((p[q] - mean) * inv);
          y[q] = xh[q] * gamma[ch] + beta[ch];
        }
      }
    }

    cc.shifted = cc.bn_out;
    cc.out = Tensor<T>(n, cout, b.out_h, b.out_w);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < cout; ++ch) {
        for (std::size_t r = 0; r < b.out_h; ++r) {
          for (std::size_t c = 0; c < b.out_w; ++c) {
            const std::size_t idx = ((i * cout + ch) * b.out_h + r) * b.out_w + c;
            if (b.spec.activation == Activation::kReLU) {
              cc.out.data[idx] = std::max(T(0), cc.bn_out.data[idx]);
              continue;
            }
            const T s = cc.bn_out.data[idx] - threshold_at(b, ch, r, c);
            cc.shifted.data[idx] = s;
            cc.out.data[idx] = mode == ForwardMode::kBinary ? sign_value(s) : clip(s);
          }
        }
      }
    }
  }

  Tensor<T> block_backward(std::size_t li, const Tensor<T>& dout, bool need_input_grad) {
    const Block& b = blocks_[li];
    const BlockCache& cc = caches_[li];
    const std::size_t n = dout.n, cout = b.spec.channels, plane = b.out_h * b.out_w;

    // Activation: straight-through Clip derivative; ReLU passes where positive.
    Tensor<T> dy(n, cout, b.out_h, b.out_w);
    for (std::size_t idx = 0; idx < dy.data.size(); ++idx) {
      if (b.spec.activation == Activation::kReLU) dy.data[idx] = cc.bn_out.data[idx] > 0 ? dout.data[idx] : T(0);
      else dy.data[idx] = dout.data[idx] * clip_grad(cc.shifted.data[idx]);
    }

    // Batch norm (training statistics).
    auto& gamma = params_[b.gamma];
    auto& beta = params_[b.beta];
    Tensor<T> dbn(n, cout, b.out_h, b.out_w);
    const double m = static_cast<double>(n * plane);
    for (std::size_t ch = 0; ch < cout; ++ch) {
      double sum_dy = 0, sum_dy_xhat = 0, sum_dy_thr = 0;
      const bool scaled_thr = !b.thresholds.empty() && learns_gamma(cfg_.bn_setting);
      for (std::size_t i = 0; i < n; ++i) {
        const T* g = dy.sample(i) + ch * plane;
        const T* xh = cc.xhat.sample(i) + ch * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          sum_dy += g[q];
          sum_dy_xhat += static_cast<double>(g[q]) * xh[q];
          if (scaled_thr) {
            const std::size_t r = q / b.out_w, c = q % b.out_w;
            sum_dy_thr += static_cast<double>(g[q]) * b.thresholds[ch][(r % b.thr_d) * b.thr_d + (c % b.thr_d)];
          }
        }
      }
      // thresholds scale with gamma, so they enter its gradient too
      if (gamma.trainable) gamma.grad[ch] = static_cast<T>(sum_dy_xhat - sum_dy_thr);
      if (beta.trainable) beta.grad[ch] = static_cast<T>(sum_dy);
      const double gm = gamma.value[ch], inv = cc.inv_std[ch];
      for (std::size_t i = 0; i < n; ++i) {
        const T* g = dy.sample(i) + ch * plane;
        const T* xh = cc.xhat.sample(i) + ch * plane;
        T* dx = dbn.sample(i) + ch * plane;
        for (std::size_t q = 0; q < plane; ++q)
          dx[q] = static_cast<T>(gm * inv / m * (m * g[q] - sum_dy - xh[q] * sum_dy_xhat));
      }
    }

    // Pool routes the gradient to the argmax.
    Tensor<T> dconv(n, cout, b.conv_h, b.conv_w);
    if (b.spec.pool) {
      for (std::size_t o = 0; o < dbn.data.size(); ++o) dconv.data[cc.pool_arg[o]] += dbn.data[o];
    } else {
      dconv.data = dbn.data;
    }

    // Convolution.
    const std::size_t K = b.cin * b.spec.k * b.spec.k, hw = b.conv_h * b.conv_w;
    Tensor<T> dx;
    if (need_input_grad) dx = Tensor<T>(n, b.cin, b.in_h, b.in_w);
    std::array<std::vector<T>, kGradChunks> dw_chunks;
    const T pv = pad_value(b);
    parallel_for(kGradChunks, threads_, [&](std::size_t chunk) {
      std::vector<T>& acc = dw_chunks[chunk];
      acc.assign(cout * K, T(0));
      std::vector<T> cols(K * hw), dcols;
      const std::size_t lo = chunk * n / kGradChunks, hi = (chunk + 1) * n / kGradChunks;
      MatMap A(acc.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(K));
      CMatMap Wm(cc.wb.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(K));
      for (std::size_t i = lo; i < hi; ++i) {
        im2col(b, cc.input.sample(i), cols.data(), pv);
        CMatMap Cm(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(hw));
        CMatMap G(dconv.sample(i), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
        A.noalias() += G * Cm.transpose();
        if (need_input_grad) {
          dcols.assign(K * hw, T(0));
          MatMap DC(dcols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(hw));
          DC.noalias() = Wm.transpose() * G;
          col2im(b, dcols.data(), dx.sample(i));
        }
      }
    });
    auto& wp = params_[b.weight];
    for (std::size_t chunk = 0; chunk < kGradChunks; ++chunk)
      for (std::size_t q = 0; q < wp.grad.size(); ++q) wp.grad[q] += dw_chunks[chunk][q];
    if (b.spec.binary) {
      for (std::size_t q = 0; q < wp.grad.size(); ++q) wp.grad[q] *= clip_grad(wp.value[q]);
    }
    return dx;
  }

  ModelConfig cfg_;
  std::vector<Block> blocks_;
  std::vector<Param<T>> params_;
  std::vector<BlockCache> caches_;
  Tensor<T> feat_;
  std::size_t features_ = 0;
  std::size_t head_w_ = 0, head_b_ = 0;
  std::size_t threads_ = 0;
  bool last_training_ = false;
};

// Mean softmax cross-entropy; fills dlogits with dL/dlogits.
template <typename T>
double cross_entropy(const Tensor<T>& logits, const std::vector<std::uint32_t>& labels, Tensor<T>* dlogits) {
  const std::size_t n = logits.n, k = logits.c;
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count mismatch");
  if (dlogits) *dlogits = Tensor<T>(n, k, 1, 1);
  double loss = 0;
  std::vector<double> p(k);
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.sample(i);
    const double mx = *std::max_element(z, z + k);
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += (p[j] = std::exp(static_cast<double>(z[j]) - mx));
    loss += -(static_cast<double>(z[labels[i]]) - mx - std::log(s));
    if (dlogits) {
      for (std::size_t j = 0; j < k; ++j)
        dlogits->sample(i)[j] = static_cast<T>((p[j] / s - (j == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  return loss / static_cast<double>(n);
}

template <typename T>
std::vector<std::uint32_t> argmax_rows(const Tensor<T>& logits) {
  std::vector<std::uint32_t> out(logits.n);
  for (std::size_t i = 0; i < logits.n; ++i) {
    const T* z = logits.sample(i);
    out[i] = static_cast<std::uint32_t>(std::max_element(z, z + logits.c) - z);
  }
  return out;
}

}  // namespace design
