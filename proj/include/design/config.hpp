#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace design {

enum class Activation { kSign, kDesign2D, kDesign3DShift, kDesign3DComplement, kReLU };

// Which batch-norm affine parameters are learned: shift beta / scale gamma.
enum class BNSetting { kFixed, kBetaOnly, kGammaOnly, kBetaGamma };

inline bool learns_beta(BNSetting s) { return s == BNSetting::kBetaOnly || s == BNSetting::kBetaGamma; }
inline bool learns_gamma(BNSetting s) { return s == BNSetting::kGammaOnly || s == BNSetting::kBetaGamma; }
inline bool is_design(Activation a) {
  return a == Activation::kDesign2D || a == Activation::kDesign3DShift || a == Activation::kDesign3DComplement;
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kSign: return "sign";
    case Activation::kDesign2D: return "design2d";
    case Activation::kDesign3DShift: return "design3d-s";
    case Activation::kDesign3DComplement: return "design3d-c";
    case Activation::kReLU: return "relu";
  }
  return "?";
}

inline std::optional<Activation> parse_activation(const std::string& s) {
  if (s == "sign") return Activation::kSign;
  if (s == "design2d" || s == "design") return Activation::kDesign2D;
  if (s == "design3d-s") return Activation::kDesign3DShift;
  if (s == "design3d-c") return Activation::kDesign3DComplement;
  if (s == "relu") return Activation::kReLU;
  return std::nullopt;
}

inline std::string to_string(BNSetting s) {
  switch (s) {
    case BNSetting::kFixed: return "0/1";
    case BNSetting::kBetaOnly: return "beta/1";
    case BNSetting::kGammaOnly: return "0/gamma";
    case BNSetting::kBetaGamma: return "beta/gamma";
  }
  return "?";
}

inline std::optional<BNSetting> parse_bn_setting(const std::string& s) {
  if (s == "0/1") return BNSetting::kFixed;
  if (s == "beta/1" || s == "β/1") return BNSetting::kBetaOnly;
  if (s == "0/gamma" || s == "0/γ") return BNSetting::kGammaOnly;
  if (s == "beta/gamma" || s == "β/γ") return BNSetting::kBetaGamma;
  return std::nullopt;
}

struct LayerSpec {
  std::size_t channels = 32;
  std::size_t k = 3;
  bool binary = true;   // false: real-valued weights (first layer)
  bool pool = false;    // 2x2 max-pool after the convolution
  bool pad = true;      // same-size output; binary layers pad with -1, real with 0
  Activation activation = Activation::kSign;
};

struct TrainOptions {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-3;
  double momentum = 0.9;           // sgd only
  double weight_decay = 0.0;       // real-valued layers only
  std::string schedule = "cosine";  // cosine | constant
  bool augment = false;
  std::size_t threads = 0;          // 0 -> DESIGN_THREADS or 1
};

struct DataOptions {
  std::string source = "synth";  // synth | cifar10 | dir
  std::string path;
  std::size_t n_per_class = 0;       // 0 -> full train split
  std::size_t n_test_per_class = 0;  // 0 -> full test split
  std::size_t synth_n = 512;
  std::size_t synth_classes = 2;
  std::size_t synth_size = 16;
  std::size_t synth_channels = 3;
  double synth_noise = 0.15;
};

struct ModelConfig {
  std::uint64_t seed = 0;
  std::size_t in_channels = 3;
  std::size_t in_height = 32;
  std::size_t in_width = 32;
  std::size_t num_classes = 10;
  BNSetting bn_setting = BNSetting::kBetaGamma;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  std::string threshold_file;  // empty: none
  std::vector<LayerSpec> layers;
  std::string head = "linear";
  TrainOptions train;
  DataOptions data;
};

// 32 -> 64 -> 128 -> 128 channels, 3x3 kernels, real-valued first conv, max-pool
// after each binary conv.
inline std::vector<LayerSpec> reference_layers(Activation act) {
  return {{32, 3, false, false, true, act},
          {64, 3, true, true, true, act},
          {128, 3, true, true, true, act},
          {128, 3, true, true, true, act}};
}

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["input"] = {{"channels", c.in_channels}, {"height", c.in_height}, {"width", c.in_width}};
  j["num_classes"] = c.num_classes;
  j["bn_setting"] = to_string(c.bn_setting);
  j["bn"] = {{"eps", c.bn_eps}, {"momentum", c.bn_momentum}};
  j["threshold_file"] = c.threshold_file.empty() ? nlohmann::json(nullptr) : nlohmann::json(c.threshold_file);
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : c.layers) {
    layers.push_back({{"channels", l.channels},
                      {"k", l.k},
                      {"binary", l.binary},
                      {"pool", l.pool},
                      {"pad", l.pad},
                      {"activation", to_string(l.activation)}});
  }
  j["head"] = {{"type", c.head}};
  j["train"] = {{"epochs", c.train.epochs},       {"batch_size", c.train.batch_size},
                {"optimizer", c.train.optimizer}, {"lr", c.train.lr},
                {"momentum", c.train.momentum},   {"weight_decay", c.train.weight_decay},
                {"schedule", c.train.schedule},   {"augment", c.train.augment},
                {"threads", c.train.threads}};
  j["data"] = {{"source", c.data.source},
               {"path", c.data.path},
               {"n_per_class", c.data.n_per_class},
               {"n_test_per_class", c.data.n_test_per_class},
               {"synth", {{"n", c.data.synth_n},
                          {"classes", c.data.synth_classes},
                          {"size", c.data.synth_size},
                          {"channels", c.data.synth_channels},
                          {"noise", c.data.synth_noise}}}};
  return j;
}

// Parses and validates a config document. Every problem found is collected
// and reported together.
inline ModelConfig config_from_json(const nlohmann::json& j, std::vector<std::string>& errors, bool check_files = true) {
  ModelConfig c;
  auto get = [&](const nlohmann::json& obj, const char* key, auto& out) {
    if (!obj.contains(key) || obj[key].is_null()) return;
    try {
      out = obj[key].get<std::remove_reference_t<decltype(out)>>();
    } catch (const std::exception& e) {
      errors.push_back(std::string("field '") + key + "': " + e.what());
    }
  };
  if (!j.is_object()) {
    errors.push_back("config must be a JSON object");
    return c;
  }
  get(j, "seed", c.seed);
  get(j, "num_classes", c.num_classes);
  if (j.contains("input")) {
    get(j["input"], "channels", c.in_channels);
    get(j["input"], "height", c.in_height);
    get(j["input"], "width", c.in_width);
  }
  if (j.contains("bn_setting")) {
    const auto s = j["bn_setting"].is_string() ? j["bn_setting"].get<std::string>() : std::string();
    if (auto v = parse_bn_setting(s)) c.bn_setting = *v;
    else errors.push_back("bn_setting '" + s + "' is not one of 0/1, beta/1, 0/gamma, beta/gamma");
  }
  if (j.contains("bn")) {
    get(j["bn"], "eps", c.bn_eps);
    get(j["bn"], "momentum", c.bn_momentum);
  }
  if (!(c.bn_eps > 0)) errors.push_back("bn.eps must be > 0");
  if (!(c.bn_momentum > 0 && c.bn_momentum < 1)) errors.push_back("bn.momentum must be in (0,1)");
  get(j, "threshold_file", c.threshold_file);

  std::optional<Activation> default_act;
  if (j.contains("activation")) {
    const auto s = j["activation"].is_string() ? j["activation"].get<std::string>() : std::string();
    default_act = parse_activation(s);
    if (!default_act) errors.push_back("activation '" + s + "' is unknown");
  }
  if (j.contains("layers")) {
    if (!j["layers"].is_array()) errors.push_back("layers must be an array");
    else {
      std::size_t i = 0;
      for (const auto& lj : j["layers"]) {
        LayerSpec l;
        l.activation = default_act.value_or(Activation::kSign);
        get(lj, "channels", l.channels);
        get(lj, "k", l.k);
        get(lj, "binary", l.binary);
        get(lj, "pool", l.pool);
        get(lj, "pad", l.pad);
        if (lj.contains("activation")) {
          const auto s = lj["activation"].is_string() ? lj["activation"].get<std::string>() : std::string();
          if (auto a = parse_activation(s)) l.activation = *a;
          else errors.push_back("layers[" + std::to_string(i) + "].activation '" + s + "' is unknown");
        }
        if (l.channels == 0) errors.push_back("layers[" + std::to_string(i) + "].channels must be >= 1");
        if (l.k == 0) errors.push_back("layers[" + std::to_string(i) + "].k must be >= 1");
        c.layers.push_back(l);
        ++i;
      }
    }
  } else {
    c.layers = reference_layers(default_act.value_or(Activation::kSign));
  }
  if (c.layers.empty()) errors.push_back("at least one layer is required");
  if (j.contains("head")) {
    if (j["head"].is_object()) get(j["head"], "type", c.head);
    else get(j, "head", c.head);
  }
  if (c.head != "linear") errors.push_back("head type '" + c.head + "' is unsupported (only linear)");

  if (j.contains("train")) {
    const auto& t = j["train"];
    get(t, "epochs", c.train.epochs);
    get(t, "batch_size", c.train.batch_size);
    get(t, "optimizer", c.train.optimizer);
    get(t, "lr", c.train.lr);
    get(t, "momentum", c.train.momentum);
    get(t, "weight_decay", c.train.weight_decay);
    get(t, "schedule", c.train.schedule);
    get(t, "augment", c.train.augment);
    get(t, "threads", c.train.threads);
  }
  if (c.train.batch_size == 0) errors.push_back("train.batch_size must be >= 1");
  if (c.train.optimizer != "adam" && c.train.optimizer != "sgd")
    errors.push_back("train.optimizer '" + c.train.optimizer + "' must be adam or sgd");
  if (c.train.schedule != "cosine" && c.train.schedule != "constant")
    errors.push_back("train.schedule '" + c.train.schedule + "' must be cosine or constant");
  if (!(c.train.lr > 0)) errors.push_back("train.lr must be > 0");

  if (j.contains("data")) {
    const auto& d = j["data"];
    get(d, "source", c.data.source);
    get(d, "path", c.data.path);
    get(d, "n_per_class", c.data.n_per_class);
    get(d, "n_test_per_class", c.data.n_test_per_class);
    if (d.contains("synth")) {
      const auto& s = d["synth"];
      get(s, "n", c.data.synth_n);
      get(s, "classes", c.data.synth_classes);
      get(s, "size", c.data.synth_size);
      get(s, "channels", c.data.synth_channels);
      get(s, "noise", c.data.synth_noise);
    }
  }
  if (c.data.source != "synth" && c.data.source != "cifar10" && c.data.source != "dir")
    errors.push_back("data.source '" + c.data.source + "' must be synth, cifar10 or dir");
  if (c.data.source != "synth" && c.data.path.empty()) errors.push_back("data.path is required for " + c.data.source);
  if (c.data.source == "synth" && c.data.synth_n < c.data.synth_classes)
    errors.push_back("data.synth.n must be >= data.synth.classes");

  bool needs_thresholds = false;
  for (const auto& l : c.layers) needs_thresholds = needs_thresholds || is_design(l.activation);
  if (needs_thresholds && c.threshold_file.empty())
    errors.push_back("design activations require threshold_file");
  if (check_files && !c.threshold_file.empty() && !std::filesystem::exists(c.threshold_file))
    errors.push_back("threshold_file '" + c.threshold_file + "' does not exist");
  return c;
}

inline ModelConfig config_from_json(const nlohmann::json& j, bool check_files = true) {
  std::vector<std::string> errors;
  ModelConfig c = config_from_json(j, errors, check_files);
  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid config:";
    for (const auto& e : errors) os << "\n  - " << e;
    throw std::invalid_argument(os.str());
  }
  return c;
}

// FNV-1a over the canonical JSON dump.
inline std::uint64_t hash_json(const nlohmann::json& j) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace design
