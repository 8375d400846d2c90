#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>

#include "oracles.hpp"
#include "sgumlp/data.hpp"
#include "sgumlp/io.hpp"

using namespace sgumlp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("sgumlp_data_" + std::to_string(std::uintptr_t(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

BandStack random_stack(std::size_t h, std::size_t w, std::size_t b, SplitMix64& rng) {
  BandStack s;
  s.height = h;
  s.width = w;
  s.bands = b;
  s.values.resize(h * w * b);
  for (float& v : s.values) v = float(rng.normal());
  return s;
}

// Independent mirror: walk the index back into range one bounce at a time.
std::size_t mirror_oracle(long i, std::size_t n) {
  long m = i;
  while (m < 0 || m >= long(n)) {
    if (m < 0) m = -m;
    if (m >= long(n)) m = 2 * (long(n) - 1) - m;
  }
  return std::size_t(m);
}

}  // namespace

TEST_CASE("band stack write then load round-trips bit-exactly") {
  TempDir tmp;
  SplitMix64 rng(60);
  for (int iter = 0; iter < 5; ++iter) {
    BandStack s = random_stack(3 + rng.below(6), 3 + rng.below(6), 1 + rng.below(4), rng);
    write_band_stack(s, tmp.path / "s.json", tmp.path / "s.bin");
    BandStack loaded = load_band_stack(tmp.path / "s.json", tmp.path / "s.bin");
    CHECK(loaded.height == s.height);
    CHECK(loaded.width == s.width);
    CHECK(loaded.bands == s.bands);
    REQUIRE(loaded.values.size() == s.values.size());
    for (std::size_t i = 0; i < s.values.size(); ++i) CHECK(loaded.values[i] == s.values[i]);
  }
}

TEST_CASE("band stack decodes a known little-endian payload") {
  TempDir tmp;
  write_file_text(tmp.path / "t.json",
                  "{\"height\":2,\"width\":2,\"bands\":1,"
                  "\"dtype\":\"f32le\",\"layout\":\"band-major\"}");
  std::vector<std::uint8_t> bytes;
  for (float v : {1.0f, 2.0f, 3.0f, 4.0f}) put_f32le(bytes, v);
  write_file_bytes(tmp.path / "t.bin", bytes);
  BandStack s = load_band_stack(tmp.path / "t.json", tmp.path / "t.bin");
  CHECK(s.at(0, 0, 0) == 1.0f);
  CHECK(s.at(0, 0, 1) == 2.0f);
  CHECK(s.at(0, 1, 0) == 3.0f);
  CHECK(s.at(0, 1, 1) == 4.0f);
}

TEST_CASE("band stack loader rejects corrupt inputs") {
  TempDir tmp;
  write_file_text(tmp.path / "t.json",
                  "{\"height\":2,\"width\":2,\"bands\":1,"
                  "\"dtype\":\"f32le\",\"layout\":\"band-major\"}");
  std::vector<std::uint8_t> bytes;
  for (float v : {1.0f, 2.0f}) put_f32le(bytes, v);  // 8 of 16 expected bytes
  write_file_bytes(tmp.path / "t.bin", bytes);
  try {
    load_band_stack(tmp.path / "t.json", tmp.path / "t.bin");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("16") != std::string::npos);
    CHECK(msg.find("8") != std::string::npos);
  }

  write_file_text(tmp.path / "bad.json",
                  "{\"height\":2,\"width\":2,\"bands\":1,"
                  "\"dtype\":\"f64le\",\"layout\":\"band-major\"}");
  CHECK_THROWS_AS(load_band_stack(tmp.path / "bad.json", tmp.path / "t.bin"), DataError);
  write_file_text(tmp.path / "nojson.json", "not json at all");
  CHECK_THROWS_AS(load_band_stack(tmp.path / "nojson.json", tmp.path / "t.bin"), DataError);
  CHECK_THROWS_AS(load_band_stack(tmp.path / "missing.json", tmp.path / "t.bin"), IoError);
}

TEST_CASE("label raster round-trips and validates") {
  TempDir tmp;
  LabelRaster r;
  r.height = 3;
  r.width = 4;
  r.labels = {0, 1, 2, 3, 0, 1, 2, 3, 0, 0, 65535, 7};
  write_label_raster(r, tmp.path / "l.json", tmp.path / "l.bin");
  LabelRaster loaded = load_label_raster(tmp.path / "l.json", tmp.path / "l.bin");
  CHECK(loaded.height == 3);
  CHECK(loaded.width == 4);
  CHECK(loaded.labels == r.labels);
}

TEST_CASE("modality concatenation preserves band order") {
  SplitMix64 rng(61);
  BandStack a = random_stack(4, 5, 2, rng);
  BandStack b = random_stack(4, 5, 3, rng);
  BandStack merged = concat_modalities({a, b});
  CHECK(merged.bands == 5);
  for (std::size_t band = 0; band < 5; ++band) {
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 5; ++c) {
        const float expected = band < 2 ? a.at(band, r, c) : b.at(band - 2, r, c);
        CHECK(merged.at(band, r, c) == expected);
      }
    }
  }
  BandStack identity = concat_modalities({a});
  CHECK(identity.values == a.values);
  BandStack wrong = random_stack(5, 5, 1, rng);
  CHECK_THROWS_AS(concat_modalities({a, wrong}), DataError);
}

TEST_CASE("interior patches equal direct slices") {
  SplitMix64 rng(62);
  BandStack s = random_stack(12, 13, 3, rng);
  auto patch = extract_patch<double>(s, 6, 7, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t b = 0; b < 3; ++b) {
        CHECK(patch.at3(i, j, b) == double(s.at(b, 6 + i - 2, 7 + j - 2)));
      }
}

TEST_CASE("border patches mirror without repeating the edge") {
  SplitMix64 rng(63);
  BandStack s = random_stack(7, 6, 2, rng);
  for (std::size_t center_r : {std::size_t(0), std::size_t(6)}) {
    for (std::size_t center_c : {std::size_t(0), std::size_t(5)}) {
      auto patch = extract_patch<double>(s, center_r, center_c, 9);
      for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 9; ++j)
          for (std::size_t b = 0; b < 2; ++b) {
            const std::size_t rr = mirror_oracle(long(center_r) + long(i) - 4, 7);
            const std::size_t cc = mirror_oracle(long(center_c) + long(j) - 4, 6);
            CHECK(patch.at3(i, j, b) == double(s.at(b, rr, cc)));
          }
    }
  }
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-4, 5) == 4);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(0, 1) == 0);
  CHECK(reflect_index(-3, 1) == 0);
}

TEST_CASE("single-pixel window and bounds checking") {
  SplitMix64 rng(64);
  BandStack s = random_stack(5, 5, 4, rng);
  auto patch = extract_patch<double>(s, 2, 3, 1);
  CHECK(patch.shape() == std::vector<std::size_t>{1, 1, 4});
  for (std::size_t b = 0; b < 4; ++b) CHECK(patch.at3(0, 0, b) == double(s.at(b, 2, 3)));
  CHECK_THROWS_AS(extract_patch<double>(s, 5, 0, 3), DataError);
  CHECK_THROWS_AS(extract_patch<double>(s, 0, 0, 4), ConfigError);
}

TEST_CASE("stratified split honours fractions and determinism") {
  LabelRaster r;
  r.height = 4;
  r.width = 5;
  r.labels = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2};
  SplitMasks m = split_labels(r, 0.5, 7);
  std::size_t train1 = 0, train2 = 0, test1 = 0, test2 = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    if (m.train[i]) (r.labels[i] == 1 ? train1 : train2) += 1;
    if (m.test[i]) (r.labels[i] == 1 ? test1 : test2) += 1;
  }
  CHECK(train1 == 5);
  CHECK(train2 == 5);
  CHECK(test1 == 5);
  CHECK(test2 == 5);

  SplitMasks m2 = split_labels(r, 0.5, 7);
  CHECK(m.train == m2.train);
  CHECK(m.test == m2.test);
  SplitMasks m3 = split_labels(r, 0.5, 8);
  CHECK(m.train != m3.train);
}

TEST_CASE("split masks partition the labeled set") {
  SplitMix64 rng(65);
  LabelRaster r;
  r.height = 20;
  r.width = 20;
  r.labels.resize(400);
  for (auto& v : r.labels) v = std::uint16_t(rng.below(4));  // 0..3, 0 = unlabeled
  SplitMasks m = split_labels(r, 0.3, 9);
  for (std::size_t i = 0; i < 400; ++i) {
    CHECK((m.train[i] & m.test[i]) == 0);
    if (r.labels[i] == 0) {
      CHECK(m.train[i] == 0);
      CHECK(m.test[i] == 0);
    } else {
      CHECK((m.train[i] | m.test[i]) == 1);
    }
  }
  // per-class train share within one pixel of the requested fraction
  for (std::uint16_t cls = 1; cls <= 3; ++cls) {
    long total = 0, train = 0;
    for (std::size_t i = 0; i < 400; ++i) {
      if (r.labels[i] == cls) {
        ++total;
        train += m.train[i];
      }
    }
    CHECK(std::abs(train - std::lround(0.3 * double(total))) <= 1);
  }
}

TEST_CASE("split rejects unsplittable classes") {
  LabelRaster r;
  r.height = 2;
  r.width = 2;
  r.labels = {1, 1, 2, 0};
  try {
    split_labels(r, 0.5, 1);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("class 2") != std::string::npos);
  }
  CHECK_THROWS_AS(split_labels(r, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_labels(r, 1.0, 1), ConfigError);
}

TEST_CASE("normalization uses training statistics only") {
  SplitMix64 rng(66);
  BandStack s = random_stack(10, 10, 3, rng);
  for (std::size_t p = 0; p < 100; ++p) s.values[2 * 100 + p] = 42.0f;  // constant band

  std::vector<std::uint8_t> mask(100, 0);
  for (std::size_t p = 0; p < 50; ++p) mask[p] = 1;
  NormStats stats = compute_norm_stats(s, mask);
  BandStack normed = apply_norm(s, stats);

  // constant band flattens to zero through the std floor
  for (std::size_t p = 0; p < 100; ++p) CHECK(normed.values[2 * 100 + p] == 0.0f);

  // training pixels standardize to mean 0, population std 1
  for (std::size_t b = 0; b < 2; ++b) {
    double mean = 0.0, var = 0.0;
    for (std::size_t p = 0; p < 50; ++p) mean += double(normed.values[b * 100 + p]);
    mean /= 50.0;
    for (std::size_t p = 0; p < 50; ++p) {
      const double d = double(normed.values[b * 100 + p]) - mean;
      var += d * d;
    }
    var /= 50.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }

  // a shifted test region keeps its shift (train stats applied, not its own)
  BandStack shifted = s;
  for (std::size_t p = 50; p < 100; ++p) shifted.values[p] += 100.0f;
  BandStack normed_shifted = apply_norm(shifted, stats);
  double test_mean = 0.0;
  for (std::size_t p = 50; p < 100; ++p) test_mean += double(normed_shifted.values[p]);
  test_mean /= 50.0;
  CHECK(std::abs(test_mean) > 10.0);

  CHECK_THROWS_AS(compute_norm_stats(s, std::vector<std::uint8_t>(100, 0)), DataError);
}

TEST_CASE("synthetic scenes are deterministic and label-consistent") {
  SynthConfig config;
  config.seed = 5;
  SynthScene a = synth_scene(config);
  SynthScene b = synth_scene(config);
  CHECK(a.labels.labels == b.labels.labels);
  REQUIRE(a.modalities.size() == 3);
  for (std::size_t m = 0; m < 3; ++m) CHECK(a.modalities[m].values == b.modalities[m].values);

  // labels match the generating Voronoi partition exactly
  for (std::size_t r = 0; r < config.height; r += 7) {
    for (std::size_t c = 0; c < config.width; c += 7) {
      double best = 1e300;
      std::size_t best_site = 0;
      for (std::size_t s = 0; s < a.sites.size(); ++s) {
        const double dr = double(r) - a.sites[s].first;
        const double dc = double(c) - a.sites[s].second;
        if (dr * dr + dc * dc < best) {
          best = dr * dr + dc * dc;
          best_site = s;
        }
      }
      CHECK(a.labels.at(r, c) == a.site_class[best_site]);
    }
  }

  // class signatures are separated by at least 1
  for (std::size_t i = 0; i < a.signatures.size(); ++i) {
    for (std::size_t j = i + 1; j < a.signatures.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < a.signatures[i].size(); ++k) {
        const double d = a.signatures[i][k] - a.signatures[j][k];
        d2 += d * d;
      }
      CHECK(d2 >= 1.0);
    }
  }
}

TEST_CASE("noise-free synthetic pixels carry their class signature exactly") {
  SynthConfig config;
  config.noise = 0.0;
  config.seed = 6;
  SynthScene scene = synth_scene(config);
  BandStack all = concat_modalities(scene.modalities);
  for (std::size_t r = 0; r < config.height; r += 11) {
    for (std::size_t c = 0; c < config.width; c += 11) {
      const std::uint16_t label = scene.labels.at(r, c);
      for (std::size_t b = 0; b < all.bands; ++b) {
        CHECK(all.at(b, r, c) == float(scene.signatures[label - 1][b]));
      }
    }
  }
}

TEST_CASE("nearest-signature classifier nearly saturates at noise 0.1") {
  SynthConfig config;
  config.noise = 0.1;
  config.seed = 7;
  SynthScene scene = synth_scene(config);
  BandStack all = concat_modalities(scene.modalities);
  std::size_t correct = 0, total = 0;
  for (std::size_t r = 0; r < config.height; ++r) {
    for (std::size_t c = 0; c < config.width; ++c) {
      double best = 1e300;
      std::size_t best_class = 0;
      for (std::size_t cls = 0; cls < scene.signatures.size(); ++cls) {
        double d2 = 0.0;
        for (std::size_t b = 0; b < all.bands; ++b) {
          const double d = double(all.at(b, r, c)) - scene.signatures[cls][b];
          d2 += d * d;
        }
        if (d2 < best) {
          best = d2;
          best_class = cls + 1;
        }
      }
      correct += (best_class == scene.labels.at(r, c));
      ++total;
    }
  }
  CHECK(double(correct) / double(total) >= 0.99);
}

TEST_CASE("patch dataset collects masked pixels in scan order") {
  SynthConfig config;
  config.height = 32;
  config.width = 32;
  config.seed = 8;
  SynthScene scene = synth_scene(config);
  BandStack all = concat_modalities(scene.modalities);
  SplitMasks masks = split_labels(scene.labels, 0.4, 3);
  NormStats stats = compute_norm_stats(all, masks.train);
  BandStack normed = apply_norm(all, stats);
  PatchDataset<float> dataset = build_dataset<float>(normed, scene.labels, masks.train, 5,
                                                     stats);
  std::size_t expected = 0;
  for (std::uint8_t m : masks.train) expected += m;
  CHECK(dataset.samples.size() == expected);
  for (const auto& s : dataset.samples) {
    CHECK(s.label >= 1);
    CHECK(s.label <= config.num_classes);
    CHECK(s.label == scene.labels.at(s.row, s.col));
    CHECK(s.patch.shape() == std::vector<std::size_t>{5, 5, all.bands});
  }
  // first sample is the first masked pixel in row-major order
  std::size_t first = 0;
  while (!masks.train[first]) ++first;
  CHECK(dataset.samples[0].row == first / 32);
  CHECK(dataset.samples[0].col == first % 32);
}

TEST_CASE("scene directory round-trip") {
  TempDir tmp;
  SynthConfig config;
  config.height = 32;
  config.width = 32;
  config.seed = 9;
  SynthScene scene = synth_scene(config);
  write_scene(scene, tmp.path / "scene");
  Scene loaded = load_scene(tmp.path / "scene");
  CHECK(loaded.modality_bands == std::vector<std::size_t>{8, 4, 1});
  CHECK(loaded.labels.labels == scene.labels.labels);
  BandStack all = concat_modalities(scene.modalities);
  CHECK(loaded.stack.values == all.values);
  CHECK_THROWS_AS(load_scene(tmp.path / "nothing"), DataError);
}
