#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

namespace sgumlp::cli {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitArtifact = 4;
inline constexpr int kExitVerification = 5;

struct ModelFlags {
  std::string variant = "sgu-mlp";
  std::size_t window = 9;
  std::size_t token_segment = 4;
  std::size_t hidden_dim = 256;
  std::size_t ffn_dim = 256;
  std::size_t num_blocks = 4;
  std::string dwc_kernels = "1,3,5";
  bool no_token_sgu = false;
  double ln_eps = 1e-5;
};

struct HyperFlags {
  std::string optimizer = "adam";
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double momentum = 0.9;
  std::size_t batch = 64;
  std::size_t epochs = 100;
};

struct SplitFlags {
  double train_fraction = 0.3;
  // Optional fixed-raster protocol: two disjoint label rasters instead of a
  // seeded stratified split. Paths name the raster headers.
  std::string train_labels;
  std::string test_labels;
};

struct TrainFlags {
  std::string data;
  std::string out = ".";
  std::uint64_t seed = 1;
  std::size_t classes = 0;  // 0 = infer from the label raster
  ModelFlags model;
  HyperFlags hyper;
  SplitFlags split;
};

struct EvalFlags {
  std::string ckpt;
  std::string data;  // empty = the path recorded in the manifest
  std::string split = "test";
  std::string out;  // optional report file
};

struct PredictFlags {
  std::string ckpt;
  std::string data;  // empty = the path recorded in the manifest
  std::string out = ".";
};

struct AblateFlags {
  std::string data;
  std::string out = ".";
  std::string seeds = "1,2,3";
  std::size_t classes = 0;
  ModelFlags model;  // variant field ignored: all four are run
  HyperFlags hyper;
  SplitFlags split;
};

struct SynthFlags {
  std::string out = ".";
  std::size_t classes = 6;
  std::size_t height = 96;
  std::size_t width = 96;
  std::size_t sites = 3;
  std::string bands = "8,4,1";
  double noise = 0.1;
  std::uint64_t seed = 1;
};

struct GradcheckFlags {
  std::string variant;  // empty = all four
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  std::size_t samples = 3;
  std::size_t bands = 3;
  std::size_t classes = 4;
  ModelFlags model;  // defaults overridden to the toy geometry in main
};

// Each command prints its human-readable output on `out`, errors on stderr,
// and returns one of the exit codes above instead of throwing.
int run_train(const TrainFlags& flags, std::ostream& out);
int run_eval(const EvalFlags& flags, std::ostream& out);
int run_predict(const PredictFlags& flags, std::ostream& out);
int run_ablate(const AblateFlags& flags, std::ostream& out);
int run_synth(const SynthFlags& flags, std::ostream& out);
int run_gradcheck(const GradcheckFlags& flags, std::ostream& out);

}  // namespace sgumlp::cli
