// design: kernel search, threshold scaling, training, evaluation and
// activation-map export.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "design/config.hpp"
#include "design/dataio.hpp"
#include "design/image_io.hpp"
#include "design/kernel_file.hpp"
#include "design/manifest.hpp"
#include "design/network.hpp"
#include "design/parallel.hpp"
#include "design/threshold_design.hpp"
#include "design/threshold_scale.hpp"
#include "design/train.hpp"

namespace fs = std::filesystem;
using namespace design;
using json = nlohmann::json;

namespace {

using Scalar = float;

std::size_t resolve_threads(std::size_t flag, std::size_t from_config = 0) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("DESIGN_THREADS"); env && *env) return default_threads();
  if (from_config > 0) return from_config;
  return 1;
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return json::parse(in);
}

// "synth" gives a 10-class 32x32 RGB stripe set; anything else is a dataset
// directory (CIFAR-10 batches or metadata.json + train.bin/test.bin).
DataSplit load_data_arg(const std::string& arg, std::uint64_t seed) {
  if (arg == "synth") return synth_dataset(1000, 10, seed);
  return load_dataset_dir(arg);
}

struct DesignArgs {
  std::string data;
  std::size_t k = 3, d = 2, kernels = 8, images = 512;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_design(const DesignArgs& a, std::size_t threads, const std::string& cmdline) {
  RunManifest m;
  m.command = cmdline;
  m.seed = a.seed;
  // Cardinality guard before any data is touched.
  const LevelSet levels = build_levels(a.k);
  (void)KernelEnumerator(levels, a.d);
  const DataSplit split = load_data_arg(a.data, a.seed);
  const auto sample = balanced_sample(split.train, split.num_classes, std::min(a.images, split.train.size()), a.seed);
  std::vector<FeatureStack<BitPlane>> corpus;
  corpus.reserve(sample.size());
  for (const auto& img : sample) corpus.push_back(binarize_for_search(img, split.stats));
  const TVScoreTable table = search(corpus, a.k, a.d, a.kernels, a.seed, threads);

  fs::create_directories(a.out);
  const fs::path csv = fs::path(a.out) / "scores.csv";
  const fs::path kernel = fs::path(a.out) / "kernel.json";
  {
    std::ofstream os(csv);
    if (!os) throw std::runtime_error("cannot write " + csv.string());
    table.write_csv(os);
    if (!os) throw std::runtime_error("write failed: " + csv.string());
  }
  write_threshold_file(kernel, unscaled_file(table.best().kernel, levels));
  m.config = {{"data", a.data}, {"k", a.k}, {"d", a.d}, {"kernels", a.kernels}, {"images", sample.size()}};
  m.config_hash = hex64(hash_json(m.config));
  m.artifacts = {{"scores", csv.string()}, {"kernel", kernel.string()}};
  m.extra = {{"rows", table.size()}, {"best", table.best().kernel.entries()}, {"best_score", table.best().score}};
  m.write(fs::path(a.out) / "manifest.json");
  std::cout << "ranked " << table.size() << " kernels; best " << table.best().kernel.to_string() << " score "
            << table.best().score << '\n';
  return 0;
}

struct ScaleArgs {
  std::string kernel;
  std::string mode = "2d";
  std::size_t channels = 1;
  std::uint64_t seed = 0;
  std::size_t samples = 100000;
  std::string out;
};

int cmd_scale(const ScaleArgs& a, const std::string& cmdline) {
  if (a.mode != "2d" && a.mode != "3d-s" && a.mode != "3d-c")
    throw std::invalid_argument("bad mode '" + a.mode + "' (expected 2d, 3d-s or 3d-c)");
  if (a.channels == 0) throw std::invalid_argument("--channels must be >= 1");
  const ThresholdFile in = read_threshold_file(a.kernel);
  const LevelSet levels = in.level_set();
  const QuantizerLevels q = half_gaussian_kmeans(levels.n(), a.samples, a.seed);
  const ThresholdFile out = scaled_file(in.entries.front(), levels, a.mode, a.channels, q);

  fs::create_directories(a.out);
  const fs::path file = fs::path(a.out) / "thresholds.json";
  write_threshold_file(file, out);
  RunManifest m;
  m.command = cmdline;
  m.seed = a.seed;
  m.config = {{"kernel", a.kernel}, {"mode", a.mode}, {"channels", a.channels}, {"samples", a.samples}};
  m.config_hash = hex64(hash_json(m.config));
  m.artifacts = {{"thresholds", file.string()}};
  m.extra = {{"boundaries", q.boundaries}, {"centers", q.centers}, {"kmeans_iterations", q.iterations}};
  m.write(fs::path(a.out) / "manifest.json");
  std::cout << "wrote " << out.entries.size() << " scaled kernel(s) to " << file.string() << '\n';
  return 0;
}

std::optional<ThresholdFile> load_thresholds(const ModelConfig& cfg) {
  if (cfg.threshold_file.empty()) return std::nullopt;
  return read_threshold_file(cfg.threshold_file);
}

int cmd_train(const std::string& config_path, const std::string& out_dir, std::size_t thread_flag,
              std::optional<std::size_t> epochs, std::optional<std::uint64_t> seed, const std::string& cmdline) {
  json j = read_json(config_path);
  // Relative threshold paths are taken relative to the config file.
  if (j.contains("threshold_file") && j["threshold_file"].is_string()) {
    fs::path t = j["threshold_file"].get<std::string>();
    if (t.is_relative() && !fs::exists(t)) {
      const fs::path alt = fs::path(config_path).parent_path() / t;
      if (fs::exists(alt)) j["threshold_file"] = alt.string();
    }
  }
  ModelConfig cfg = config_from_json(j);
  if (epochs) cfg.train.epochs = *epochs;
  if (seed) cfg.seed = *seed;
  if (cfg.train.epochs == 0) throw std::invalid_argument("train.epochs must be >= 1");
  const std::size_t threads = resolve_threads(thread_flag, cfg.train.threads);

  const DataSplit data = load_config_data(cfg);
  check_config_against_data(cfg, data);
  const auto thresholds = load_thresholds(cfg);
  Model<Scalar> model(cfg, thresholds);
  model.set_threads(threads);

  fs::create_directories(out_dir);
  const fs::path report_csv = fs::path(out_dir) / "report.csv";
  const fs::path last = fs::path(out_dir) / "checkpoint_last.bin";
  const fs::path best = fs::path(out_dir) / "checkpoint_best.bin";
  const fs::path cfg_out = fs::path(out_dir) / "config.json";
  const json cfg_json = to_json(cfg);
  {
    std::ofstream os(cfg_out);
    os << cfg_json.dump(2) << '\n';
  }

  CheckpointMeta meta;
  meta.config = cfg_json;
  meta.thresholds = thresholds;
  meta.stats = data.stats;
  meta.num_classes = data.num_classes;
  double best_acc = -1;
  auto on_epoch = [&](const EpochRecord& r, bool is_best, Model<Scalar>& m) {
    std::cout << "epoch " << r.epoch << " loss " << r.loss << " train_acc " << r.train_acc << " test_acc "
              << r.test_acc << '\n';
    meta.epoch = r.epoch;
    meta.test_acc = r.test_acc;
    if (is_best) best_acc = r.test_acc;
    meta.best_test_acc = best_acc;
    if (is_best) save_checkpoint(best, m, meta);
    save_checkpoint(last, m, meta);
  };
  const TrainReport report = train(model, data, cfg.train, EpochCallback<Scalar>(on_epoch));
  {
    std::ofstream os(report_csv);
    if (!os) throw std::runtime_error("cannot write " + report_csv.string());
    report.write_csv(os);
  }

  RunManifest m;
  m.command = cmdline;
  m.seed = cfg.seed;
  m.config = cfg_json;
  m.config_hash = hex64(hash_json(cfg_json));
  m.artifacts = {{"report", report_csv.string()},
                 {"checkpoint_last", last.string()},
                 {"checkpoint_best", best.string()},
                 {"config", cfg_out.string()}};
  m.extra = {{"best_test_acc", report.best_test_acc},
             {"best_epoch", report.best_epoch},
             {"last_test_acc", report.last_test_acc()},
             {"threads", threads}};
  m.write(fs::path(out_dir) / "manifest.json");
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_arg, const std::string& out_dir, std::size_t thread_flag,
             const std::string& cmdline) {
  auto loaded = load_checkpoint<Scalar>(ckpt);
  loaded.model.set_threads(resolve_threads(thread_flag, loaded.config.train.threads));
  DataSplit data;
  if (data_arg.empty()) {
    data = load_config_data(loaded.config);
  } else {
    data = load_data_arg(data_arg, loaded.config.seed);
  }
  if (data.test.empty()) throw std::runtime_error("no test images");
  const double acc = evaluate(loaded.model, data.test, loaded.meta.stats);
  std::cout << "accuracy " << acc << " (" << data.test.size() << " images)\n";

  fs::create_directories(out_dir);
  const fs::path summary = fs::path(out_dir) / "eval.json";
  {
    std::ofstream os(summary);
    if (!os) throw std::runtime_error("cannot write " + summary.string());
    os << json{{"checkpoint", ckpt},
               {"accuracy", acc},
               {"images", data.test.size()},
               {"recorded_test_acc", loaded.meta.test_acc},
               {"recorded_best_test_acc", loaded.meta.best_test_acc},
               {"epoch", loaded.meta.epoch}}
              .dump(2)
       << '\n';
  }
  RunManifest m;
  m.command = cmdline;
  m.seed = loaded.config.seed;
  m.config = loaded.meta.config;
  m.config_hash = hex64(hash_json(loaded.meta.config));
  m.artifacts = {{"eval", summary.string()}};
  m.extra = {{"accuracy", acc}};
  m.write(fs::path(out_dir) / "manifest.json");
  return 0;
}

template <typename T>
Plane<T> channel_plane(const Tensor<T>& t, std::size_t ch) {
  std::vector<T> v(t.sample(0) + ch * t.plane_size(), t.sample(0) + (ch + 1) * t.plane_size());
  return Plane<T>(t.h, t.w, std::move(v));
}

Gray8 sign_gray(const std::vector<bool>& bits, std::size_t h, std::size_t w) {
  Gray8 g{h, w, std::vector<std::uint8_t>(h * w)};
  for (std::size_t i = 0; i < h * w; ++i) g.pixels[i] = bits[i] ? 255 : 0;
  return g;
}

int cmd_dump(const std::string& ckpt, const std::string& image, std::size_t layer, const std::string& thr_file,
             std::size_t max_columns, const std::string& out_dir, const std::string& cmdline) {
  auto loaded = load_checkpoint<Scalar>(ckpt);
  if (layer >= loaded.config.layers.size())
    throw std::invalid_argument("--layer " + std::to_string(layer) + " out of range (model has " +
                                std::to_string(loaded.config.layers.size()) + " layers)");
  const ImageStack img = read_pnm_image(image);
  if (img.channels() != loaded.config.in_channels)
    throw std::invalid_argument("image has " + std::to_string(img.channels()) + " channels, model expects " +
                                std::to_string(loaded.config.in_channels));

  // The convolutional part is size-agnostic: rebuild the model at the image
  // size and copy every block parameter.
  ModelConfig cfg = loaded.config;
  cfg.in_height = img.height();
  cfg.in_width = img.width();
  Model<Scalar> model(cfg, loaded.meta.thresholds);
  for (auto& p : model.params()) {
    if (p.name.rfind("head.", 0) == 0) continue;
    p.value = loaded.model.param(p.name).value;
  }
  LabeledImage li{0, img};
  const std::vector<LabeledImage> one{li};
  const Tensor<Scalar> x = make_batch<Scalar>(one, {0}, 0, 1, loaded.meta.stats);
  model.forward_blocks(x, false, ForwardMode::kBinary, layer + 1);
  const auto& cache = model.cache(layer);
  const auto& block = model.blocks()[layer];

  ThresholdFile tf;
  if (!thr_file.empty()) tf = read_threshold_file(thr_file);
  else if (loaded.meta.thresholds) tf = *loaded.meta.thresholds;
  else tf = unscaled_file(default_kernel(), build_levels(3));
  const Activation act = is_design(block.spec.activation) ? block.spec.activation : Activation::kDesign2D;
  const auto kernels = resolve_thresholds(tf, act, block.spec.channels);
  const auto& gamma = model.param("block" + std::to_string(layer) + ".gamma").value;
  const bool scale_gamma = learns_gamma(cfg.bn_setting);

  fs::create_directories(out_dir);
  const std::size_t h = cache.bn_out.h, w = cache.bn_out.w, channels = cache.bn_out.c;
  std::vector<std::vector<Gray8>> rows(3);
  RunManifest m;
  std::size_t differing = 0;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const Plane<Scalar> xs = channel_plane(cache.bn_out, ch);
    const Gray8 conv = rescale_to_gray(channel_plane(cache.bn_in, ch));
    std::vector<bool> sign_bits(h * w), design_bits(h * w);
    const auto& k = kernels[ch];
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        double t = k.entries()[(r % k.d()) * k.d() + (c % k.d())];
        if (scale_gamma) t *= gamma[ch];
        sign_bits[r * w + c] = sign_bit(static_cast<double>(xs(r, c)));
        design_bits[r * w + c] = sign_bit(static_cast<double>(xs(r, c)) - t);
        differing += sign_bits[r * w + c] != design_bits[r * w + c];
      }
    }
    const Gray8 sg = sign_gray(sign_bits, h, w), dg = sign_gray(design_bits, h, w);
    const std::string stem = "layer" + std::to_string(layer) + "_c" + std::to_string(ch);
    write_pgm(fs::path(out_dir) / (stem + "_conv.pgm"), conv);
    write_pgm(fs::path(out_dir) / (stem + "_sign.pgm"), sg);
    write_pgm(fs::path(out_dir) / (stem + "_design.pgm"), dg);
    m.artifacts[stem + "_conv"] = (fs::path(out_dir) / (stem + "_conv.pgm")).string();
    m.artifacts[stem + "_sign"] = (fs::path(out_dir) / (stem + "_sign.pgm")).string();
    m.artifacts[stem + "_design"] = (fs::path(out_dir) / (stem + "_design.pgm")).string();
    if (ch < max_columns) {
      rows[0].push_back(conv);
      rows[1].push_back(sg);
      rows[2].push_back(dg);
    }
  }
  const fs::path trip = fs::path(out_dir) / "triptych.pgm";
  write_pgm(trip, compose_grid(rows));
  m.artifacts["triptych"] = trip.string();
  m.command = cmdline;
  m.seed = cfg.seed;
  m.config = loaded.meta.config;
  m.config_hash = hex64(hash_json(loaded.meta.config));
  const double frac = static_cast<double>(differing) / static_cast<double>(h * w * channels);
  m.extra = {{"layer", layer}, {"channels", channels}, {"height", h}, {"width", w}, {"sign_design_diff", frac}};
  m.write(fs::path(out_dir) / "manifest.json");
  std::cout << "layer " << layer << ": " << channels << " channels " << h << "x" << w
            << ", sign/design pixel difference " << frac << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dithered-sign binary network toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker threads (default: DESIGN_THREADS or 1)");

  DesignArgs da;
  auto* design = app.add_subcommand("design", "search threshold kernels by total variation");
  design->add_option("--data", da.data, "dataset directory, or 'synth'")->required();
  design->add_option("--k", da.k, "binary kernel size");
  design->add_option("--d", da.d, "threshold kernel size");
  design->add_option("--kernels", da.kernels, "random binary kernels per image");
  design->add_option("--images", da.images, "class-balanced corpus size");
  design->add_option("--seed", da.seed);
  design->add_option("--out", da.out, "output directory")->required();

  ScaleArgs sa;
  auto* scale = app.add_subcommand("scale", "map integer levels to half-Gaussian thresholds");
  scale->add_option("--kernel", sa.kernel, "kernel JSON")->required()->check(CLI::ExistingFile);
  scale->add_option("--mode", sa.mode, "2d, 3d-s or 3d-c");
  scale->add_option("--channels", sa.channels);
  scale->add_option("--seed", sa.seed);
  scale->add_option("--samples", sa.samples, "half-normal samples for K-means");
  scale->add_option("--out", sa.out, "output directory")->required();

  std::string config_path, train_out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> train_seed;
  auto* trn = app.add_subcommand("train", "train a binary network from a JSON config");
  trn->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  trn->add_option("--epochs", epochs, "override train.epochs");
  trn->add_option("--seed", train_seed, "override seed");
  trn->add_option("--out", train_out, "output directory")->required();

  std::string ckpt, eval_data, eval_out;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a test split");
  ev->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "dataset directory or 'synth' (default: the checkpoint's data config)");
  ev->add_option("--out", eval_out, "output directory")->required();

  std::string dump_ckpt, dump_image, dump_out, dump_thr;
  std::size_t dump_layer = 0, dump_cols = 8;
  auto* dump = app.add_subcommand("dump-activations", "export conv / Sign / DeSign maps of one layer as PGM");
  dump->add_option("--checkpoint", dump_ckpt)->required()->check(CLI::ExistingFile);
  dump->add_option("--image", dump_image, "binary PPM or PGM")->required()->check(CLI::ExistingFile);
  dump->add_option("--layer", dump_layer);
  dump->add_option("--thresholds", dump_thr, "threshold file when the layer has none");
  dump->add_option("--columns", dump_cols, "channels shown in the triptych");
  dump->add_option("--out", dump_out, "output directory")->required();

  for (auto* sub : {design, scale, trn, ev, dump})
    sub->add_option("--threads", threads, "worker threads (default: DESIGN_THREADS or 1)");

  CLI11_PARSE(app, argc, argv);
  const std::string cmdline = command_line(argc, argv);
  try {
    if (*design) return cmd_design(da, resolve_threads(threads), cmdline);
    if (*scale) return cmd_scale(sa, cmdline);
    if (*trn) return cmd_train(config_path, train_out, threads, epochs, train_seed, cmdline);
    if (*ev) return cmd_eval(ckpt, eval_data, eval_out, threads, cmdline);
    if (*dump) return cmd_dump(dump_ckpt, dump_image, dump_layer, dump_thr, dump_cols, dump_out, cmdline);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
