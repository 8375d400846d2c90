#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sgumlp/errors.hpp"
#include "sgumlp/tensor.hpp"

namespace sgumlp {

// Band-major raster: values[(band*height + row)*width + col].
struct BandStack {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<float> values;

  float at(std::size_t band, std::size_t row, std::size_t col) const {
    return values[(band * height + row) * width + col];
  }
  float& at(std::size_t band, std::size_t row, std::size_t col) {
    return values[(band * height + row) * width + col];
  }
  std::size_t pixel_count() const { return height * width; }
};

// Row-major labels: 0 = unlabeled, 1..C = classes.
struct LabelRaster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;

  std::uint16_t at(std::size_t row, std::size_t col) const {
    return labels[row * width + col];
  }
  std::uint16_t& at(std::size_t row, std::size_t col) {
    return labels[row * width + col];
  }
};

BandStack load_band_stack(const std::filesystem::path& header_path,
                          const std::filesystem::path& data_path);
void write_band_stack(const BandStack& stack, const std::filesystem::path& header_path,
                      const std::filesystem::path& data_path);
LabelRaster load_label_raster(const std::filesystem::path& header_path,
                              const std::filesystem::path& data_path);
void write_label_raster(const LabelRaster& raster, const std::filesystem::path& header_path,
                        const std::filesystem::path& data_path);

// Bands concatenated in argument order; extents must agree.
BandStack concat_modalities(const std::vector<BandStack>& stacks);

// Mirror an out-of-range index back into [0, n) without repeating the edge
// sample (…2 1 | 0 1 2 … n-1 | n-2 n-3…).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

// window x window x bands crop centered at (row, col), border filled by
// reflection. The center itself must be inside the raster.
template <typename T>
Tensor<T> extract_patch(const BandStack& stack, std::size_t row, std::size_t col,
                        std::size_t window) {
  if (window < 1 || window % 2 == 0) {
    throw ConfigError("extract_patch: window must be odd, got " + std::to_string(window));
  }
  if (row >= stack.height || col >= stack.width) {
    throw DataError("extract_patch: center (" + std::to_string(row) + ", " +
                    std::to_string(col) + ") outside raster " +
                    std::to_string(stack.height) + "x" + std::to_string(stack.width));
  }
  const std::ptrdiff_t r = std::ptrdiff_t(window) / 2;
  Tensor<T> patch({window, window, stack.bands});
  for (std::size_t i = 0; i < window; ++i) {
    const std::size_t src_r =
        reflect_index(std::ptrdiff_t(row) + std::ptrdiff_t(i) - r, stack.height);
    for (std::size_t j = 0; j < window; ++j) {
      const std::size_t src_c =
          reflect_index(std::ptrdiff_t(col) + std::ptrdiff_t(j) - r, stack.width);
      for (std::size_t b = 0; b < stack.bands; ++b) {
        patch.at3(i, j, b) = T(stack.at(b, src_r, src_c));
      }
    }
  }
  return patch;
}

// Per-pixel membership flags over the raster, row-major; disjoint, and both
// empty wherever the label is 0.
struct SplitMasks {
  std::vector<std::uint8_t> train;
  std::vector<std::uint8_t> test;
};

// Stratified per class, deterministic per seed. Every class keeps at least
// one pixel on each side.
SplitMasks split_labels(const LabelRaster& labels, double fraction, std::uint64_t seed);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std_dev;  // floored at 1e-8
};

// Per-band moments over the pixels flagged by mask (the training centers).
NormStats compute_norm_stats(const BandStack& stack, const std::vector<std::uint8_t>& mask);

// (v - mean)/std per band with the given (training) stats.
BandStack apply_norm(const BandStack& stack, const NormStats& stats);

template <typename T>
struct Sample {
  Tensor<T> patch;
  std::uint16_t label = 0;  // 1..C
  std::size_t row = 0;
  std::size_t col = 0;
};

template <typename T>
struct PatchDataset {
  std::vector<Sample<T>> samples;
  NormStats stats;
};

// Row-major scan of the mask; patches come from the already-normalized stack.
template <typename T>
PatchDataset<T> build_dataset(const BandStack& normalized, const LabelRaster& labels,
                              const std::vector<std::uint8_t>& mask, std::size_t window,
                              NormStats stats) {
  if (labels.height != normalized.height || labels.width != normalized.width) {
    throw DataError("build_dataset: label raster " + std::to_string(labels.height) + "x" +
                    std::to_string(labels.width) + " does not match stack " +
                    std::to_string(normalized.height) + "x" + std::to_string(normalized.width));
  }
  if (mask.size() != labels.labels.size()) {
    throw DataError("build_dataset: mask length does not match raster");
  }
  PatchDataset<T> dataset;
  dataset.stats = std::move(stats);
  for (std::size_t r = 0; r < labels.height; ++r) {
    for (std::size_t c = 0; c < labels.width; ++c) {
      if (!mask[r * labels.width + c]) continue;
      Sample<T> s;
      s.patch = extract_patch<T>(normalized, r, c, window);
      s.label = labels.at(r, c);
      s.row = r;
      s.col = c;
      dataset.samples.push_back(std::move(s));
    }
  }
  return dataset;
}

struct SynthConfig {
  std::size_t num_classes = 6;
  std::size_t height = 96;
  std::size_t width = 96;
  std::vector<std::size_t> modality_bands = {8, 4, 1};
  double noise = 0.1;
  std::uint64_t seed = 1;
  std::size_t sites_per_class = 3;
};

struct SynthScene {
  std::vector<BandStack> modalities;
  LabelRaster labels;
  // Oracle data for tests: per-class signature over all bands, and the
  // Voronoi sites that generated the label map.
  std::vector<std::vector<double>> signatures;
  std::vector<std::pair<double, double>> sites;
  std::vector<std::uint16_t> site_class;
};

// Voronoi-partitioned class regions over distinct Gaussian band signatures
// (pairwise separation >= 1) plus additive noise; deterministic per seed.
SynthScene synth_scene(const SynthConfig& config);

// On-disk scene: modality_<i>.json/.bin plus labels.json/.bin in one directory.
struct Scene {
  BandStack stack;  // all modalities concatenated
  LabelRaster labels;
  std::vector<std::size_t> modality_bands;
};

Scene load_scene(const std::filesystem::path& dir);
void write_scene(const SynthScene& scene, const std::filesystem::path& dir);

}  // namespace sgumlp
