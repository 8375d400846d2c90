#include "sgumlp/cli.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "sgumlp/data.hpp"
#include "sgumlp/io.hpp"
#include "sgumlp/metrics.hpp"
#include "sgumlp/training.hpp"

namespace sgumlp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string str_printf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  char buf[256];
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

int classify(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return kExitUsage;
  if (dynamic_cast<const DivergenceError*>(&e) != nullptr) return kExitDivergence;
  if (dynamic_cast<const Error*>(&e) != nullptr) return kExitArtifact;
  return 1;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify(e);
  }
}

std::vector<std::size_t> parse_size_list(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(item, &pos);
      if (pos != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(std::size_t(v));
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": '" + item + "' is not a positive integer");
    }
  }
  if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (std::size_t v : parse_size_list(s, "seeds")) out.push_back(std::uint64_t(v));
  return out;
}

ModelConfig build_config(const ModelFlags& flags, std::size_t bands, std::size_t classes) {
  ModelConfig c;
  c.variant = parse_variant(flags.variant);
  c.patch_window = flags.window;
  c.bands = bands;
  c.dwc_kernels = parse_size_list(flags.dwc_kernels, "dwc kernels");
  c.token_segment = flags.token_segment;
  c.hidden_dim = flags.hidden_dim;
  c.mixer_ffn_dim = flags.ffn_dim;
  c.num_blocks = flags.num_blocks;
  c.num_classes = classes;
  c.sgu_in_token_mlp = !flags.no_token_sgu;
  c.ln_eps = flags.ln_eps;
  c.validate();
  return c;
}

TrainHyper build_hyper(const HyperFlags& flags) {
  TrainHyper h;
  h.optimizer = parse_optimizer(flags.optimizer);
  h.lr = flags.lr;
  h.beta1 = flags.beta1;
  h.beta2 = flags.beta2;
  h.eps = flags.adam_eps;
  h.momentum = flags.momentum;
  h.batch_size = flags.batch;
  h.epochs = flags.epochs;
  h.validate();
  return h;
}

json config_json(const ModelConfig& c) {
  return json{
      {"variant", variant_name(c.variant)},
      {"patch_window", c.patch_window},
      {"bands", c.bands},
      {"dwc_kernels", c.dwc_kernels},
      {"token_segment", c.token_segment},
      {"hidden_dim", c.hidden_dim},
      {"mixer_ffn_dim", c.mixer_ffn_dim},
      {"num_blocks", c.num_blocks},
      {"num_classes", c.num_classes},
      {"sgu_in_token_mlp", c.sgu_in_token_mlp},
      {"ln_eps", c.ln_eps},
  };
}

json hyper_json(const TrainHyper& h) {
  return json{
      {"optimizer", optimizer_name(h.optimizer)},
      {"lr", h.lr},
      {"beta1", h.beta1},
      {"beta2", h.beta2},
      {"adam_eps", h.eps},
      {"momentum", h.momentum},
      {"batch", h.batch_size},
      {"epochs", h.epochs},
  };
}

template <typename T>
T jget(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": key '" + key + "' has the wrong type");
  }
}

ModelConfig config_from_json(const json& j, const std::string& where) {
  ModelConfig c;
  c.variant = parse_variant(jget<std::string>(j, "variant", where));
  c.patch_window = jget<std::size_t>(j, "patch_window", where);
  c.bands = jget<std::size_t>(j, "bands", where);
  c.dwc_kernels = jget<std::vector<std::size_t>>(j, "dwc_kernels", where);
  c.token_segment = jget<std::size_t>(j, "token_segment", where);
  c.hidden_dim = jget<std::size_t>(j, "hidden_dim", where);
  c.mixer_ffn_dim = jget<std::size_t>(j, "mixer_ffn_dim", where);
  c.num_blocks = jget<std::size_t>(j, "num_blocks", where);
  c.num_classes = jget<std::size_t>(j, "num_classes", where);
  c.sgu_in_token_mlp = jget<bool>(j, "sgu_in_token_mlp", where);
  c.ln_eps = jget<double>(j, "ln_eps", where);
  c.validate();
  return c;
}

json norm_json(const NormStats& stats) {
  return json{{"mean", stats.mean}, {"std", stats.std_dev}};
}

NormStats norm_from_json(const json& j, const std::string& where) {
  NormStats stats;
  stats.mean = jget<std::vector<double>>(j, "mean", where);
  stats.std_dev = jget<std::vector<double>>(j, "std", where);
  if (stats.mean.size() != stats.std_dev.size()) {
    throw DataError(where + ": mean and std lengths differ");
  }
  return stats;
}

void write_manifest(const fs::path& path, json manifest,
                    const std::vector<fs::path>& artifacts, double wall_seconds) {
  json digests = json::object();
  for (const fs::path& a : artifacts) digests[a.filename().string()] = file_digest_hex(a);
  manifest["digests"] = digests;
  manifest["wall_clock_seconds"] = wall_seconds;
  write_file_text(path, manifest.dump(2) + "\n");
}

json load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("manifest not found: " + path.string());
  try {
    return json::parse(read_file_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---- split protocols ----

struct ResolvedSplit {
  SplitMasks masks;
  LabelRaster labels;  // ground truth backing both masks
  json manifest_entry;
};

LabelRaster merge_split_rasters(const Scene& scene, const fs::path& train_path,
                                const fs::path& test_path, SplitMasks& masks) {
  auto load = [&](const fs::path& header) {
    fs::path payload = header;
    payload.replace_extension(".bin");
    LabelRaster r = load_label_raster(header, payload);
    if (r.height != scene.labels.height || r.width != scene.labels.width) {
      throw DataError(header.string() + ": extents do not match the scene");
    }
    return r;
  };
  const LabelRaster train = load(train_path);
  const LabelRaster test = load(test_path);
  LabelRaster merged;
  merged.height = train.height;
  merged.width = train.width;
  merged.labels.resize(train.labels.size(), 0);
  masks.train.assign(train.labels.size(), 0);
  masks.test.assign(train.labels.size(), 0);
  for (std::size_t i = 0; i < train.labels.size(); ++i) {
    if (train.labels[i] != 0 && test.labels[i] != 0) {
      throw DataError("split rasters overlap at pixel " + std::to_string(i));
    }
    if (train.labels[i] != 0) {
      masks.train[i] = 1;
      merged.labels[i] = train.labels[i];
    } else if (test.labels[i] != 0) {
      masks.test[i] = 1;
      merged.labels[i] = test.labels[i];
    }
  }
  return merged;
}

ResolvedSplit resolve_split(const Scene& scene, const SplitFlags& flags,
                            std::uint64_t seed) {
  ResolvedSplit r;
  if (!flags.train_labels.empty() || !flags.test_labels.empty()) {
    if (flags.train_labels.empty() || flags.test_labels.empty()) {
      throw ConfigError("--train-labels and --test-labels must be given together");
    }
    r.labels = merge_split_rasters(scene, flags.train_labels, flags.test_labels, r.masks);
    r.manifest_entry = json{{"protocol", "rasters"},
                            {"train_labels", flags.train_labels},
                            {"test_labels", flags.test_labels}};
  } else {
    r.labels = scene.labels;
    r.masks = split_labels(scene.labels, flags.train_fraction, seed);
    r.manifest_entry = json{{"protocol", "stratified"},
                            {"train_fraction", flags.train_fraction},
                            {"seed", seed}};
  }
  return r;
}

ResolvedSplit resolve_split_from_manifest(const Scene& scene, const json& manifest,
                                          const std::string& where) {
  const json split = jget<json>(manifest, "split", where);
  const std::string protocol = jget<std::string>(split, "protocol", where);
  SplitFlags flags;
  std::uint64_t seed = 0;
  if (protocol == "rasters") {
    flags.train_labels = jget<std::string>(split, "train_labels", where);
    flags.test_labels = jget<std::string>(split, "test_labels", where);
  } else if (protocol == "stratified") {
    flags.train_fraction = jget<double>(split, "train_fraction", where);
    seed = jget<std::uint64_t>(split, "seed", where);
  } else {
    throw DataError(where + ": unknown split protocol '" + protocol + "'");
  }
  return resolve_split(scene, flags, seed);
}

std::size_t infer_classes(const LabelRaster& labels, std::size_t requested) {
  std::size_t max_label = 0;
  for (std::uint16_t l : labels.labels) max_label = std::max<std::size_t>(max_label, l);
  if (max_label == 0) throw DataError("label raster has no labeled pixels");
  if (requested == 0) return max_label;
  if (requested < max_label) {
    throw ConfigError("--classes " + std::to_string(requested) +
                      " is below the largest label " + std::to_string(max_label));
  }
  return requested;
}

Scene load_scene_checked(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--data is required");
  if (!fs::exists(fs::path(dir) / "modality_0.json")) {
    throw ConfigError("--data " + dir + ": no scene found (missing modality_0.json)");
  }
  return load_scene(dir);
}

std::string loss_csv(const std::vector<double>& curve, std::size_t batches_per_epoch) {
  std::string out = "epoch,batch,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out += str_printf("%zu,%zu,%.17g\n", i / batches_per_epoch, i % batches_per_epoch,
                      curve[i]);
  }
  return out;
}

// ---- classification map rendering ----

// Fixed palette: entry 0 is the (never emitted) background, entries 1..15
// cover every class count in scope.
constexpr std::uint8_t kPalette[16][3] = {
    {0, 0, 0},        // 0 background
    {230, 25, 75},    // 1 red
    {60, 180, 75},    // 2 green
    {255, 225, 25},   // 3 yellow
    {0, 130, 200},    // 4 blue
    {245, 130, 48},   // 5 orange
    {145, 30, 180},   // 6 purple
    {70, 240, 240},   // 7 cyan
    {240, 50, 230},   // 8 magenta
    {210, 245, 60},   // 9 lime
    {250, 190, 212},  // 10 pink
    {0, 128, 128},    // 11 teal
    {220, 190, 255},  // 12 lavender
    {170, 110, 40},   // 13 brown
    {255, 250, 200},  // 14 beige
    {128, 0, 0},      // 15 maroon
};

void write_ppm(const LabelRaster& map, const fs::path& path) {
  std::vector<std::uint8_t> bytes;
  const std::string header = "P6\n" + std::to_string(map.width) + " " +
                             std::to_string(map.height) + "\n255\n";
  bytes.insert(bytes.end(), header.begin(), header.end());
  for (std::uint16_t label : map.labels) {
    if (label >= 16) throw ConfigError("palette covers 15 classes, got label " +
                                       std::to_string(label));
    bytes.push_back(kPalette[label][0]);
    bytes.push_back(kPalette[label][1]);
    bytes.push_back(kPalette[label][2]);
  }
  write_file_bytes(path, bytes);
}

// ---- checkpoint + manifest loading shared by eval and predict ----

struct LoadedRun {
  ModelConfig config;
  ModelParams<float> params;
  NormStats stats;
  json manifest;
  std::string data_dir;
  std::vector<std::string> class_names;
};

LoadedRun load_run(const std::string& ckpt, const std::string& data_override) {
  if (ckpt.empty()) throw ConfigError("--ckpt is required");
  const fs::path ckpt_path(ckpt);
  if (!fs::exists(ckpt_path)) {
    throw DataError("checkpoint not found: " + ckpt_path.string());
  }
  const fs::path manifest_path = ckpt_path.parent_path() / "manifest.json";
  LoadedRun run;
  run.manifest = load_manifest(manifest_path);
  const std::string where = manifest_path.string();
  run.config = config_from_json(jget<json>(run.manifest, "config", where), where);
  run.params = load_checkpoint<float>(ckpt_path, run.config);
  run.stats = norm_from_json(jget<json>(run.manifest, "norm", where), where);
  run.class_names = jget<std::vector<std::string>>(run.manifest, "class_names", where);
  run.data_dir = data_override.empty()
                     ? jget<std::string>(jget<json>(run.manifest, "inputs", where), "data",
                                         where)
                     : data_override;
  if (run.stats.mean.size() != run.config.bands) {
    throw DataError(where + ": normalization covers " +
                    std::to_string(run.stats.mean.size()) + " bands, model expects " +
                    std::to_string(run.config.bands));
  }
  return run;
}

void check_scene_bands(const Scene& scene, const ModelConfig& config) {
  if (scene.stack.bands != config.bands) {
    throw DataError("scene has " + std::to_string(scene.stack.bands) +
                    " bands, checkpoint expects " + std::to_string(config.bands));
  }
}

// ---- ablation table ----

struct VariantStats {
  double oa = 0, aa = 0, kappa = 0;
  std::vector<double> f1;
};

std::string render_ablation_table(const std::vector<std::string>& class_names,
                                  const std::array<std::optional<VariantStats>, 4>& cols) {
  std::vector<std::string> row_labels;
  for (const std::string& name : class_names) row_labels.push_back(name + " F1 x100");
  row_labels.push_back("OA x100");
  row_labels.push_back("AA x100");
  row_labels.push_back("Kappa x100");

  std::size_t name_width = 24;
  for (const std::string& l : row_labels) name_width = std::max(name_width, l.size() + 8);
  constexpr std::size_t kColWidth = 12;

  std::string out = str_printf("%-*s", int(name_width), "Class");
  for (Variant v : {Variant::kMlp, Variant::kSguMlpNoDwc, Variant::kDwcMlp,
                    Variant::kSguMlp}) {
    out += str_printf("%*s", int(kColWidth), variant_table_label(v));
  }
  out += "\n" + std::string(name_width + 4 * kColWidth, '-') + "\n";

  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    out += str_printf("%-*s", int(name_width), row_labels[r].c_str());
    for (const auto& col : cols) {
      if (!col.has_value()) {
        out += str_printf("%*s", int(kColWidth), "--");
        continue;
      }
      double value = 0;
      if (r < class_names.size()) {
        value = col->f1[r];
      } else if (r == class_names.size()) {
        value = col->oa;
      } else if (r == class_names.size() + 1) {
        value = col->aa;
      } else {
        value = col->kappa;
      }
      out += str_printf("%*.2f", int(kColWidth), 100.0 * value);
    }
    out += "\n";
  }
  return out;
}

std::string sanitize_metric_key(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (c == ' ' || c == '\t' || c == '=' || c == '\n') c = '_';
  }
  return out;
}

std::string render_variant_report(const std::string& variant,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::vector<std::string>& class_names,
                                  const VariantStats& stats) {
  std::string out = "variant=" + variant + "\nseeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    out += (i ? "," : "") + std::to_string(seeds[i]);
  }
  out += "\n";
  out += str_printf("oa=%.17g\n", stats.oa);
  out += str_printf("aa=%.17g\n", stats.aa);
  out += str_printf("kappa=%.17g\n", stats.kappa);
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    out += str_printf("f1.%s=%.17g\n", sanitize_metric_key(class_names[i]).c_str(),
                      stats.f1[i]);
  }
  return out;
}

}  // namespace

// ---- commands ----

int run_train(const TrainFlags& flags, std::ostream& out) {
  return guarded([&]() {
    const auto t0 = std::chrono::steady_clock::now();
    const Scene scene = load_scene_checked(flags.data);
    const ResolvedSplit split = resolve_split(scene, flags.split, flags.seed);
    const std::size_t classes = infer_classes(split.labels, flags.classes);
    const ModelConfig config = build_config(flags.model, scene.stack.bands, classes);
    const TrainHyper hyper = build_hyper(flags.hyper);

    const NormStats stats = compute_norm_stats(scene.stack, split.masks.train);
    const BandStack normed = apply_norm(scene.stack, stats);
    const PatchDataset<float> train_ds = build_dataset<float>(
        normed, split.labels, split.masks.train, config.patch_window, stats);
    const PatchDataset<float> test_ds = build_dataset<float>(
        normed, split.labels, split.masks.test, config.patch_window, stats);
    out << "training " << variant_name(config.variant) << ": " << train_ds.samples.size()
        << " train / " << test_ds.samples.size() << " test samples, "
        << param_count(config) << " parameters\n";

    const TrainResult<float> result = train(train_ds, config, hyper, flags.seed);

    const fs::path out_dir(flags.out);
    fs::create_directories(out_dir);
    const fs::path ckpt_path = out_dir / "model.ckpt";
    save_checkpoint(result.params, config, ckpt_path);

    // Report from the reloaded checkpoint, so a later eval reproduces it
    // byte-for-byte from the same artifact.
    const ModelParams<float> reloaded = load_checkpoint<float>(ckpt_path, config);
    const ConfusionMatrix cm = evaluate(test_ds, reloaded, config);
    const std::vector<std::string> class_names = default_class_names(classes);
    const std::string report = render_report(cm, class_names);
    const fs::path report_path = out_dir / "report.txt";
    write_file_text(report_path, report);

    const std::size_t batches_per_epoch =
        (train_ds.samples.size() + hyper.batch_size - 1) / hyper.batch_size;
    const fs::path loss_path = out_dir / "loss.csv";
    write_file_text(loss_path, loss_csv(result.loss_curve, batches_per_epoch));

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                      t0).count();
    json manifest{
        {"command", "train"},
        {"config", config_json(config)},
        {"hyper", hyper_json(hyper)},
        {"seed", flags.seed},
        {"split", split.manifest_entry},
        {"norm", norm_json(stats)},
        {"class_names", class_names},
        {"inputs", {{"data", flags.data}}},
        {"outputs", {{"checkpoint", "model.ckpt"},
                     {"report", "report.txt"},
                     {"loss_curve", "loss.csv"}}},
    };
    write_manifest(out_dir / "manifest.json", std::move(manifest),
                   {ckpt_path, report_path, loss_path}, wall);
    out << report;
    return kExitOk;
  });
}

int run_eval(const EvalFlags& flags, std::ostream& out) {
  return guarded([&]() {
    if (flags.split != "test" && flags.split != "train" && flags.split != "all") {
      throw ConfigError("--split must be test, train, or all");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const LoadedRun run = load_run(flags.ckpt, flags.data);
    const Scene scene = load_scene_checked(run.data_dir);
    check_scene_bands(scene, run.config);
    const ResolvedSplit split =
        resolve_split_from_manifest(scene, run.manifest, "manifest");

    std::vector<std::uint8_t> mask(split.masks.train.size(), 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (flags.split == "train") {
        mask[i] = split.masks.train[i];
      } else if (flags.split == "test") {
        mask[i] = split.masks.test[i];
      } else {
        mask[i] = split.masks.train[i] | split.masks.test[i];
      }
    }
    const BandStack normed = apply_norm(scene.stack, run.stats);
    const PatchDataset<float> dataset = build_dataset<float>(
        normed, split.labels, mask, run.config.patch_window, run.stats);
    if (dataset.samples.empty()) throw DataError("selected split is empty");

    const ConfusionMatrix cm = evaluate(dataset, run.params, run.config);
    const std::string report = render_report(cm, run.class_names);
    out << report;
    if (!flags.out.empty()) {
      const fs::path report_path(flags.out);
      if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
      write_file_text(report_path, report);
      const double wall = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - t0).count();
      json manifest{
          {"command", "eval"},
          {"config", config_json(run.config)},
          {"split_selector", flags.split},
          {"split", run.manifest.at("split")},
          {"norm", norm_json(run.stats)},
          {"class_names", run.class_names},
          {"inputs", {{"data", run.data_dir}, {"checkpoint", flags.ckpt}}},
          {"outputs", {{"report", report_path.filename().string()}}},
      };
      write_manifest(fs::path(flags.out + ".manifest.json"), std::move(manifest),
                     {report_path}, wall);
    }
    return kExitOk;
  });
}

int run_predict(const PredictFlags& flags, std::ostream& out) {
  return guarded([&]() {
    const auto t0 = std::chrono::steady_clock::now();
    const LoadedRun run = load_run(flags.ckpt, flags.data);
    const Scene scene = load_scene_checked(run.data_dir);
    check_scene_bands(scene, run.config);
    if (run.config.num_classes > 15) {
      throw ConfigError("palette covers 15 classes, model has " +
                        std::to_string(run.config.num_classes));
    }
    const BandStack normed = apply_norm(scene.stack, run.stats);

    LabelRaster map;
    map.height = normed.height;
    map.width = normed.width;
    map.labels.resize(map.height * map.width);
    for (std::size_t r = 0; r < map.height; ++r) {
      for (std::size_t c = 0; c < map.width; ++c) {
        const Tensor<float> patch =
            extract_patch<float>(normed, r, c, run.config.patch_window);
        map.labels[r * map.width + c] =
            predict_label(model_forward(patch, run.params, run.config));
      }
    }

    const fs::path out_dir(flags.out);
    fs::create_directories(out_dir);
    write_label_raster(map, out_dir / "map.json", out_dir / "map.bin");
    write_ppm(map, out_dir / "map.ppm");
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                      t0).count();
    json manifest{
        {"command", "predict"},
        {"config", config_json(run.config)},
        {"norm", norm_json(run.stats)},
        {"class_names", run.class_names},
        {"inputs", {{"data", run.data_dir}, {"checkpoint", flags.ckpt}}},
        {"outputs", {{"map_header", "map.json"},
                     {"map_payload", "map.bin"},
                     {"map_image", "map.ppm"}}},
    };
    write_manifest(out_dir / "map.manifest.json", std::move(manifest),
                   {out_dir / "map.json", out_dir / "map.bin", out_dir / "map.ppm"}, wall);
    out << "predicted " << map.height << "x" << map.width << " map\n";
    return kExitOk;
  });
}

int run_synth(const SynthFlags& flags, std::ostream& out) {
  return guarded([&]() {
    const auto t0 = std::chrono::steady_clock::now();
    SynthConfig config;
    config.num_classes = flags.classes;
    config.height = flags.height;
    config.width = flags.width;
    config.modality_bands = parse_size_list(flags.bands, "bands");
    config.noise = flags.noise;
    config.seed = flags.seed;
    config.sites_per_class = flags.sites;
    const SynthScene scene = synth_scene(config);

    const fs::path out_dir(flags.out);
    write_scene(scene, out_dir);
    std::vector<fs::path> artifacts;
    for (std::size_t m = 0; m < scene.modalities.size(); ++m) {
      artifacts.push_back(out_dir / ("modality_" + std::to_string(m) + ".json"));
      artifacts.push_back(out_dir / ("modality_" + std::to_string(m) + ".bin"));
    }
    artifacts.push_back(out_dir / "labels.json");
    artifacts.push_back(out_dir / "labels.bin");
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                      t0).count();
    json manifest{
        {"command", "synth"},
        {"synth", {{"classes", config.num_classes},
                   {"height", config.height},
                   {"width", config.width},
                   {"bands", config.modality_bands},
                   {"noise", config.noise},
                   {"sites_per_class", config.sites_per_class}}},
        {"seed", config.seed},
        {"inputs", json::object()},
        {"outputs", {{"dir", flags.out}}},
    };
    write_manifest(out_dir / "manifest.json", std::move(manifest), artifacts, wall);
    out << "wrote " << scene.modalities.size() << " modalities, "
        << config.height << "x" << config.width << ", " << config.num_classes
        << " classes\n";
    return kExitOk;
  });
}

int run_ablate(const AblateFlags& flags, std::ostream& out) {
  return guarded([&]() {
    const auto t0 = std::chrono::steady_clock::now();
    const Scene scene = load_scene_checked(flags.data);
    const std::vector<std::uint64_t> seeds = parse_seed_list(flags.seeds);
    const TrainHyper hyper = build_hyper(flags.hyper);

    constexpr Variant kOrder[4] = {Variant::kMlp, Variant::kSguMlpNoDwc,
                                   Variant::kDwcMlp, Variant::kSguMlp};
    std::array<std::optional<VariantStats>, 4> cols;
    std::vector<std::string> class_names;
    int first_failure = kExitOk;

    const fs::path out_dir(flags.out);
    fs::create_directories(out_dir);
    std::vector<fs::path> artifacts;
    json statuses = json::object();

    for (std::size_t v = 0; v < 4; ++v) {
      ModelFlags model = flags.model;
      model.variant = variant_name(kOrder[v]);
      try {
        VariantStats sum;
        std::size_t classes = 0;
        for (std::uint64_t seed : seeds) {
          const ResolvedSplit split = resolve_split(scene, flags.split, seed);
          classes = infer_classes(split.labels, flags.classes);
          const ModelConfig config = build_config(model, scene.stack.bands, classes);
          const NormStats stats = compute_norm_stats(scene.stack, split.masks.train);
          const BandStack normed = apply_norm(scene.stack, stats);
          const PatchDataset<float> train_ds = build_dataset<float>(
              normed, split.labels, split.masks.train, config.patch_window, stats);
          const PatchDataset<float> test_ds = build_dataset<float>(
              normed, split.labels, split.masks.test, config.patch_window, stats);
          const TrainResult<float> result = train(train_ds, config, hyper, seed);
          const ConfusionMatrix cm = evaluate(test_ds, result.params, config);
          if (sum.f1.empty()) sum.f1.assign(classes, 0.0);
          sum.oa += overall_accuracy(cm);
          sum.aa += average_accuracy(cm);
          sum.kappa += kappa(cm);
          const std::vector<double> f1 = f1_per_class(cm);
          for (std::size_t i = 0; i < f1.size(); ++i) sum.f1[i] += f1[i];
          out << model.variant << " seed " << seed << ": oa "
              << str_printf("%.4f", overall_accuracy(cm)) << "\n";
        }
        const double n = double(seeds.size());
        sum.oa /= n;
        sum.aa /= n;
        sum.kappa /= n;
        for (double& f : sum.f1) f /= n;
        cols[v] = sum;
        if (class_names.empty()) class_names = default_class_names(classes);
        const fs::path report_path = out_dir / ("report_" + model.variant + ".txt");
        write_file_text(report_path,
                        render_variant_report(model.variant, seeds, class_names, sum));
        artifacts.push_back(report_path);
        statuses[model.variant] = "ok";
      } catch (const std::exception& e) {
        std::cerr << "error: " << model.variant << ": " << e.what() << "\n";
        statuses[model.variant] = std::string("failed: ") + e.what();
        if (first_failure == kExitOk) first_failure = classify(e);
      }
    }

    if (class_names.empty()) {
      // every variant failed before producing a table
      return first_failure;
    }
    const std::string table = render_ablation_table(class_names, cols);
    const fs::path table_path = out_dir / "ablation.txt";
    write_file_text(table_path, table);
    artifacts.push_back(table_path);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                      t0).count();
    json manifest{
        {"command", "ablate"},
        {"model", {{"window", flags.model.window},
                   {"token_segment", flags.model.token_segment},
                   {"hidden_dim", flags.model.hidden_dim},
                   {"ffn_dim", flags.model.ffn_dim},
                   {"num_blocks", flags.model.num_blocks},
                   {"dwc_kernels", flags.model.dwc_kernels},
                   {"sgu_in_token_mlp", !flags.model.no_token_sgu},
                   {"ln_eps", flags.model.ln_eps}}},
        {"hyper", hyper_json(hyper)},
        {"seeds", seeds},
        {"split", json{{"protocol", flags.split.train_labels.empty() ? "stratified"
                                                                     : "rasters"},
                       {"train_fraction", flags.split.train_fraction}}},
        {"class_names", class_names},
        {"status", statuses},
        {"inputs", {{"data", flags.data}}},
        {"outputs", {{"table", "ablation.txt"}}},
    };
    write_manifest(out_dir / "manifest.json", std::move(manifest), artifacts, wall);
    out << table;
    return first_failure;
  });
}

int run_gradcheck(const GradcheckFlags& flags, std::ostream& out) {
  return guarded([&]() {
    std::vector<Variant> variants;
    if (flags.variant.empty()) {
      variants = {Variant::kMlp, Variant::kSguMlpNoDwc, Variant::kDwcMlp,
                  Variant::kSguMlp};
    } else {
      variants = {parse_variant(flags.variant)};
    }
    bool all_pass = true;
    std::string worst_name;
    double worst_err = 0.0;
    for (Variant v : variants) {
      ModelFlags model = flags.model;
      model.variant = variant_name(v);
      const ModelConfig config = build_config(model, flags.bands, flags.classes);
      const auto t0 = std::chrono::steady_clock::now();
      const GradCheckReport report =
          grad_check(config, flags.seed, flags.tolerance, flags.samples);
      const double wall = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - t0).count();
      out << variant_name(v) << " (" << report.entries.size() << " tensors, "
          << str_printf("%.1f", wall) << "s):\n";
      for (const GradCheckEntry& e : report.entries) {
        out << str_printf("  %-36s %.3e\n", e.name.c_str(), e.rel_err);
      }
      out << str_printf("  max %.3e (%s) tolerance %.1e: %s\n", report.max_rel_err,
                        report.worst.c_str(), report.tolerance,
                        report.pass ? "pass" : "FAIL");
      if (!report.pass) {
        all_pass = false;
        if (report.max_rel_err > worst_err) {
          worst_err = report.max_rel_err;
          worst_name = variant_name(v) + std::string(": ") + report.worst;
        }
      }
    }
    if (!all_pass) {
      std::cerr << "error: gradient check failed, worst tensor " << worst_name
                << " rel err " << str_printf("%.3e", worst_err) << "\n";
      return kExitVerification;
    }
    return kExitOk;
  });
}

}  // namespace sgumlp::cli
