#include "sgumlp/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <json.hpp>

#include "sgumlp/io.hpp"
#include "sgumlp/rng.hpp"

namespace sgumlp {

namespace {

using nlohmann::json;

struct RasterHeader {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::string dtype;
  std::string layout;
};

RasterHeader parse_header(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file_text(path));
  } catch (const json::exception& e) {
    throw DataError("bad raster header " + path.string() + ": " + e.what());
  }
  RasterHeader h;
  try {
    h.height = j.at("height").get<std::size_t>();
    h.width = j.at("width").get<std::size_t>();
    h.bands = j.at("bands").get<std::size_t>();
    h.dtype = j.at("dtype").get<std::string>();
    h.layout = j.at("layout").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError("bad raster header " + path.string() + ": " + e.what());
  }
  if (h.height == 0 || h.width == 0 || h.bands == 0) {
    throw DataError("bad raster header " + path.string() + ": zero extent");
  }
  return h;
}

void write_header(const std::filesystem::path& path, std::size_t height, std::size_t width,
                  std::size_t bands, const char* dtype, const char* layout) {
  json j;
  j["height"] = height;
  j["width"] = width;
  j["bands"] = bands;
  j["dtype"] = dtype;
  j["layout"] = layout;
  write_file_text(path, j.dump(2) + "\n");
}

void check_payload_size(const std::filesystem::path& path, std::size_t actual,
                        std::size_t expected) {
  if (actual != expected) {
    throw IoError("corrupt raster payload " + path.string() + ": expected " +
                  std::to_string(expected) + " bytes, got " + std::to_string(actual));
  }
}

}  // namespace

BandStack load_band_stack(const std::filesystem::path& header_path,
                          const std::filesystem::path& data_path) {
  const RasterHeader h = parse_header(header_path);
  if (h.dtype != "f32le") {
    throw DataError("band stack " + header_path.string() + ": unsupported dtype '" +
                    h.dtype + "' (expected f32le)");
  }
  if (h.layout != "band-major") {
    throw DataError("band stack " + header_path.string() + ": unsupported layout '" +
                    h.layout + "' (expected band-major)");
  }
  const auto bytes = read_file_bytes(data_path);
  const std::size_t count = h.height * h.width * h.bands;
  check_payload_size(data_path, bytes.size(), 4 * count);
  BandStack stack;
  stack.height = h.height;
  stack.width = h.width;
  stack.bands = h.bands;
  stack.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = get_f32le(bytes.data() + 4 * i);
    if (!std::isfinite(v)) {
      throw DataError("band stack " + data_path.string() + ": non-finite value at index " +
                      std::to_string(i));
    }
    stack.values[i] = v;
  }
  return stack;
}

void write_band_stack(const BandStack& stack, const std::filesystem::path& header_path,
                      const std::filesystem::path& data_path) {
  if (stack.values.size() != stack.height * stack.width * stack.bands) {
    throw DataError("write_band_stack: value count does not match extents");
  }
  write_header(header_path, stack.height, stack.width, stack.bands, "f32le", "band-major");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(4 * stack.values.size());
  for (float v : stack.values) put_f32le(bytes, v);
  write_file_bytes(data_path, bytes);
}

LabelRaster load_label_raster(const std::filesystem::path& header_path,
                              const std::filesystem::path& data_path) {
  const RasterHeader h = parse_header(header_path);
  if (h.dtype != "u16le") {
    throw DataError("label raster " + header_path.string() + ": unsupported dtype '" +
                    h.dtype + "' (expected u16le)");
  }
  if (h.layout != "row-major") {
    throw DataError("label raster " + header_path.string() + ": unsupported layout '" +
                    h.layout + "' (expected row-major)");
  }
  if (h.bands != 1) {
    throw DataError("label raster " + header_path.string() + ": bands must be 1");
  }
  const auto bytes = read_file_bytes(data_path);
  const std::size_t count = h.height * h.width;
  check_payload_size(data_path, bytes.size(), 2 * count);
  LabelRaster raster;
  raster.height = h.height;
  raster.width = h.width;
  raster.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    raster.labels[i] = get_u16le(bytes.data() + 2 * i);
  }
  return raster;
}

void write_label_raster(const LabelRaster& raster, const std::filesystem::path& header_path,
                        const std::filesystem::path& data_path) {
  if (raster.labels.size() != raster.height * raster.width) {
    throw DataError("write_label_raster: label count does not match extents");
  }
  write_header(header_path, raster.height, raster.width, 1, "u16le", "row-major");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(2 * raster.labels.size());
  for (std::uint16_t v : raster.labels) put_u16le(bytes, v);
  write_file_bytes(data_path, bytes);
}

BandStack concat_modalities(const std::vector<BandStack>& stacks) {
  if (stacks.empty()) throw DataError("concat_modalities: no stacks given");
  BandStack out;
  out.height = stacks[0].height;
  out.width = stacks[0].width;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    if (stacks[i].height != out.height || stacks[i].width != out.width) {
      throw DataError("concat_modalities: stack " + std::to_string(i) + " extents " +
                      std::to_string(stacks[i].height) + "x" + std::to_string(stacks[i].width) +
                      " do not match " + std::to_string(out.height) + "x" +
                      std::to_string(out.width));
    }
    out.bands += stacks[i].bands;
  }
  out.values.reserve(out.height * out.width * out.bands);
  for (const BandStack& s : stacks) {
    out.values.insert(out.values.end(), s.values.begin(), s.values.end());
  }
  return out;
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (std::ptrdiff_t(n) - 1);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= std::ptrdiff_t(n)) m = period - m;
  return std::size_t(m);
}

SplitMasks split_labels(const LabelRaster& labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("split fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  std::uint16_t max_label = 0;
  for (std::uint16_t v : labels.labels) max_label = std::max(max_label, v);
  if (max_label == 0) throw DataError("split: raster has no labeled pixels");
  std::vector<std::vector<std::size_t>> per_class(max_label);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    if (labels.labels[i] > 0) per_class[labels.labels[i] - 1].push_back(i);
  }
  SplitMasks masks;
  masks.train.assign(labels.labels.size(), 0);
  masks.test.assign(labels.labels.size(), 0);
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto& idx = per_class[c];
    if (idx.size() < 2) {
      throw DataError("split: class " + std::to_string(c + 1) + " has " +
                      std::to_string(idx.size()) + " labeled pixel(s), need at least 2");
    }
    SplitMix64 rng(derive_seed(seed, 0x5117 + c));
    rng.shuffle(idx);
    const auto want = std::llround(fraction * double(idx.size()));
    const std::size_t n_train = std::size_t(
        std::clamp<long long>(want, 1, (long long)idx.size() - 1));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_train ? masks.train : masks.test)[idx[i]] = 1;
    }
  }
  return masks;
}

NormStats compute_norm_stats(const BandStack& stack, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != stack.pixel_count()) {
    throw DataError("norm stats: mask length does not match raster");
  }
  std::size_t n = 0;
  for (std::uint8_t m : mask) n += (m != 0);
  if (n < 2) throw DataError("norm stats: need at least 2 training pixels, got " +
                             std::to_string(n));
  NormStats stats;
  stats.mean.resize(stack.bands);
  stats.std_dev.resize(stack.bands);
  for (std::size_t b = 0; b < stack.bands; ++b) {
    double sum = 0.0;
    for (std::size_t p = 0; p < stack.pixel_count(); ++p) {
      if (mask[p]) sum += double(stack.values[b * stack.pixel_count() + p]);
    }
    const double mean = sum / double(n);
    double var = 0.0;
    for (std::size_t p = 0; p < stack.pixel_count(); ++p) {
      if (mask[p]) {
        const double d = double(stack.values[b * stack.pixel_count() + p]) - mean;
        var += d * d;
      }
    }
    var /= double(n);
    stats.mean[b] = mean;
    stats.std_dev[b] = std::max(std::sqrt(var), 1e-8);
  }
  return stats;
}

BandStack apply_norm(const BandStack& stack, const NormStats& stats) {
  if (stats.mean.size() != stack.bands || stats.std_dev.size() != stack.bands) {
    throw DataError("apply_norm: stats cover " + std::to_string(stats.mean.size()) +
                    " bands, stack has " + std::to_string(stack.bands));
  }
  BandStack out = stack;
  for (std::size_t b = 0; b < stack.bands; ++b) {
    const float mean = float(stats.mean[b]);
    const float inv = float(1.0 / stats.std_dev[b]);
    float* band = out.values.data() + b * stack.pixel_count();
    for (std::size_t p = 0; p < stack.pixel_count(); ++p) band[p] = (band[p] - mean) * inv;
  }
  return out;
}

SynthScene synth_scene(const SynthConfig& config) {
  if (config.num_classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (config.height < 32 || config.width < 32) {
    throw ConfigError("synth: extents must be at least 32x32");
  }
  if (config.modality_bands.empty()) throw ConfigError("synth: no modalities configured");
  if (config.noise < 0.0) throw ConfigError("synth: noise must be non-negative");
  if (config.sites_per_class < 1) throw ConfigError("synth: need at least 1 site per class");

  SynthScene scene;
  SplitMix64 rng(derive_seed(config.seed, 0x5CE4E));

  for (std::size_t c = 0; c < config.num_classes; ++c) {
    for (std::size_t s = 0; s < config.sites_per_class; ++s) {
      const double r = rng.uniform(0.0, double(config.height));
      const double col = rng.uniform(0.0, double(config.width));
      scene.sites.emplace_back(r, col);
      scene.site_class.push_back(std::uint16_t(c + 1));
    }
  }

  std::size_t total_bands = 0;
  for (std::size_t b : config.modality_bands) total_bands += b;

  // Class signatures separated by at least 1 in L2 so a noise level around
  // 0.1 leaves the Bayes-optimal error negligible.
  for (std::size_t c = 0; c < config.num_classes; ++c) {
    std::vector<double> sig(total_bands);
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw DataError("synth: could not separate class signatures");
      for (double& v : sig) v = rng.normal();
      bool ok = true;
      for (const auto& other : scene.signatures) {
        double d2 = 0.0;
        for (std::size_t b = 0; b < total_bands; ++b) {
          const double d = sig[b] - other[b];
          d2 += d * d;
        }
        if (d2 < 1.0) {
          ok = false;
          break;
        }
      }
      if (ok) break;
    }
    scene.signatures.push_back(std::move(sig));
  }

  scene.labels.height = config.height;
  scene.labels.width = config.width;
  scene.labels.labels.resize(config.height * config.width);
  for (std::size_t r = 0; r < config.height; ++r) {
    for (std::size_t c = 0; c < config.width; ++c) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_site = 0;
      for (std::size_t s = 0; s < scene.sites.size(); ++s) {
        const double dr = double(r) - scene.sites[s].first;
        const double dc = double(c) - scene.sites[s].second;
        const double d2 = dr * dr + dc * dc;
        if (d2 < best) {
          best = d2;
          best_site = s;
        }
      }
      scene.labels.at(r, c) = scene.site_class[best_site];
    }
  }

  std::size_t band_offset = 0;
  for (std::size_t m = 0; m < config.modality_bands.size(); ++m) {
    BandStack stack;
    stack.height = config.height;
    stack.width = config.width;
    stack.bands = config.modality_bands[m];
    stack.values.resize(stack.bands * stack.pixel_count());
    for (std::size_t b = 0; b < stack.bands; ++b) {
      for (std::size_t r = 0; r < config.height; ++r) {
        for (std::size_t c = 0; c < config.width; ++c) {
          const std::uint16_t label = scene.labels.at(r, c);
          const double sig = scene.signatures[label - 1][band_offset + b];
          stack.at(b, r, c) = float(sig + config.noise * rng.normal());
        }
      }
    }
    scene.modalities.push_back(std::move(stack));
    band_offset += config.modality_bands[m];
  }
  return scene;
}

Scene load_scene(const std::filesystem::path& dir) {
  std::vector<BandStack> modalities;
  for (std::size_t i = 0;; ++i) {
    const auto header = dir / ("modality_" + std::to_string(i) + ".json");
    if (!std::filesystem::exists(header)) break;
    const auto data = dir / ("modality_" + std::to_string(i) + ".bin");
    modalities.push_back(load_band_stack(header, data));
  }
  if (modalities.empty()) {
    throw DataError("scene " + dir.string() + ": no modality_<i>.json band stacks found");
  }
  Scene scene;
  for (const BandStack& m : modalities) scene.modality_bands.push_back(m.bands);
  scene.stack = concat_modalities(modalities);
  scene.labels = load_label_raster(dir / "labels.json", dir / "labels.bin");
  if (scene.labels.height != scene.stack.height || scene.labels.width != scene.stack.width) {
    throw DataError("scene " + dir.string() + ": label extents do not match band stacks");
  }
  return scene;
}

void write_scene(const SynthScene& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < scene.modalities.size(); ++i) {
    const std::string base = "modality_" + std::to_string(i);
    write_band_stack(scene.modalities[i], dir / (base + ".json"), dir / (base + ".bin"));
  }
  write_label_raster(scene.labels, dir / "labels.json", dir / "labels.bin");
}

}  // namespace sgumlp
