#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "sgumlp/data.hpp"
#include "sgumlp/errors.hpp"
#include "sgumlp/io.hpp"
#include "sgumlp/layers.hpp"
#include "sgumlp/metrics.hpp"
#include "sgumlp/rng.hpp"
#include "sgumlp/tensor.hpp"

namespace sgumlp {

enum class OptimizerKind { kAdam, kSgdMomentum };

inline const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd-momentum";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd-momentum") return OptimizerKind::kSgdMomentum;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam, sgd-momentum)");
}

struct TrainHyper {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;

  void validate() const {
    if (lr < 0) throw ConfigError("learning rate must be non-negative");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
      throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (eps <= 0) throw ConfigError("adam eps must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  }
};

// Moment tensors mirror the canonical parameter order; second moments stay
// empty for SGD.
template <typename T>
struct OptimState {
  TrainHyper hyper;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m1;
  std::vector<Tensor<T>> m2;
};

template <typename T>
OptimState<T> make_optim_state(const ModelConfig& config, const TrainHyper& hyper) {
  hyper.validate();
  OptimState<T> state;
  state.hyper = hyper;
  for (const ParamSpec& spec : parameter_shapes(config)) {
    state.m1.emplace_back(spec.shape);
    if (hyper.optimizer == OptimizerKind::kAdam) state.m2.emplace_back(spec.shape);
  }
  return state;
}

// One update from the gradients currently held in params; deterministic.
template <typename T>
void optimizer_step(ModelParams<T>& params, const ModelConfig& config,
                    OptimState<T>& state) {
  const TrainHyper& h = state.hyper;
  state.step += 1;
  std::size_t i = 0;
  if (h.optimizer == OptimizerKind::kAdam) {
    const T b1 = T(h.beta1), b2 = T(h.beta2);
    const T corr1 = T(1) - std::pow(b1, T(state.step));
    const T corr2 = T(1) - std::pow(b2, T(state.step));
    for_each_param(params, config, [&](const std::string& name, Dual<T>& p) {
      Tensor<T>& m = state.m1[i];
      Tensor<T>& v = state.m2[i];
      if (!m.same_shape(p.value)) {
        throw DimensionError("optimizer state does not match parameter " + name);
      }
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const T g = p.grad[j];
        m[j] = b1 * m[j] + (T(1) - b1) * g;
        v[j] = b2 * v[j] + (T(1) - b2) * g * g;
        const T mhat = m[j] / corr1;
        const T vhat = v[j] / corr2;
        p.value[j] -= T(h.lr) * mhat / (std::sqrt(vhat) + T(h.eps));
      }
      ++i;
    });
  } else {
    for_each_param(params, config, [&](const std::string& name, Dual<T>& p) {
      Tensor<T>& vel = state.m1[i];
      if (!vel.same_shape(p.value)) {
        throw DimensionError("optimizer state does not match parameter " + name);
      }
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        vel[j] = T(h.momentum) * vel[j] + p.grad[j];
        p.value[j] -= T(h.lr) * vel[j];
      }
      ++i;
    });
  }
}

// Mean negative log-likelihood with a probability floor; labels are 0-based.
template <typename T>
double cross_entropy(const Tensor<T>& probs, const std::vector<std::size_t>& labels) {
  detail::require_rank(probs, 2, "cross_entropy");
  if (labels.size() != probs.extent(0)) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(probs.extent(0)) + " rows");
  }
  const std::size_t c = probs.extent(1);
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= c) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) +
                      " outside [0, " + std::to_string(c) + ")");
    }
    sum += -std::log(std::max(double(probs.at2(i, labels[i])), 1e-12));
  }
  return sum / double(labels.size());
}

// ---- checkpoint format ----
// "SGUW" | u32 version=1 | u32 tensor count | per tensor:
// u16 name length | name | u8 rank | u64 extents | f32le payload.

inline constexpr char kCheckpointMagic[4] = {'S', 'G', 'U', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams<T>& params,
                                               const ModelConfig& config) {
  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), kCheckpointMagic, kCheckpointMagic + 4);
  put_u32le(bytes, kCheckpointVersion);
  std::uint32_t count = 0;
  for_each_param(params, config,
                 [&count](const std::string&, const Dual<T>&) { ++count; });
  put_u32le(bytes, count);
  for_each_param(params, config, [&bytes](const std::string& name, const Dual<T>& p) {
    if (name.size() > 0xFFFF) throw CheckpointError("tensor name too long: " + name);
    put_u16le(bytes, std::uint16_t(name.size()));
    bytes.insert(bytes.end(), name.begin(), name.end());
    bytes.push_back(std::uint8_t(p.value.rank()));
    for (std::size_t e : p.value.shape()) put_u64le(bytes, std::uint64_t(e));
    for (std::size_t i = 0; i < p.value.size(); ++i) put_f32le(bytes, float(p.value[i]));
  });
  return bytes;
}

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const ModelConfig& config,
                     const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(params, config));
}

namespace detail {

struct ByteCursor {
  const std::uint8_t* p;
  std::size_t remaining;
  std::string origin;

  void need(std::size_t n, const char* what) const {
    if (remaining < n) {
      throw CheckpointError(origin + ": truncated while reading " + std::string(what));
    }
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* q = p;
    p += n;
    remaining -= n;
    return q;
  }
};

}  // namespace detail

// Full shape audit against the config: every tensor must appear with its
// canonical name, rank, and extents, in canonical order.
template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  detail::ByteCursor cur{bytes.data(), bytes.size(), path.string()};
  const std::uint8_t* magic = cur.take(4, "magic");
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw CheckpointError(path.string() + ": bad magic (not a checkpoint)");
  }
  const std::uint32_t version = get_u32le(cur.take(4, "version"));
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32le(cur.take(4, "tensor count"));
  const std::vector<ParamSpec> specs = parameter_shapes(config);
  if (count != specs.size()) {
    throw CheckpointError(path.string() + ": holds " + std::to_string(count) +
                          " tensors, config expects " + std::to_string(specs.size()));
  }
  ModelParams<T> params = make_params<T>(config);
  std::size_t i = 0;
  for_each_param(params, config, [&](const std::string& expected_name, Dual<T>& p) {
    const ParamSpec& spec = specs[i++];
    const std::uint16_t name_len = get_u16le(cur.take(2, "name length"));
    const std::uint8_t* name_bytes = cur.take(name_len, "name");
    const std::string name(name_bytes, name_bytes + name_len);
    if (name != expected_name) {
      throw CheckpointError(path.string() + ": tensor " + std::to_string(i - 1) + " is '" +
                            name + "', expected '" + expected_name + "'");
    }
    const std::uint8_t rank = *cur.take(1, "rank");
    if (rank != spec.shape.size()) {
      throw CheckpointError(path.string() + ": " + name + " has rank " +
                            std::to_string(int(rank)) + ", expected " +
                            std::to_string(spec.shape.size()));
    }
    std::vector<std::size_t> shape(rank);
    for (std::size_t d = 0; d < rank; ++d) {
      shape[d] = std::size_t(get_u64le(cur.take(8, "extent")));
    }
    if (shape != spec.shape) {
      throw CheckpointError(path.string() + ": " + name + " has extents " +
                            shape_string(shape) + ", expected " + shape_string(spec.shape));
    }
    const std::uint8_t* payload = cur.take(4 * p.value.size(), "payload");
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      p.value[j] = T(get_f32le(payload + 4 * j));
    }
  });
  if (cur.remaining != 0) {
    throw CheckpointError(path.string() + ": " + std::to_string(cur.remaining) +
                          " trailing bytes after last tensor");
  }
  return params;
}

// ---- training loop ----

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<double> loss_curve;  // one entry per batch, epoch-major
};

template <typename T>
std::uint16_t predict_label(const Tensor<T>& probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return std::uint16_t(best + 1);
}

template <typename T>
ConfusionMatrix evaluate(const PatchDataset<T>& dataset, const ModelParams<T>& params,
                         const ModelConfig& config) {
  ConfusionMatrix cm(config.num_classes);
  for (const Sample<T>& s : dataset.samples) {
    cm.accumulate(s.label, predict_label(model_forward(s.patch, params, config)));
  }
  return cm;
}

// Seeded shuffling per epoch, mini-batch gradient averaging, one optimizer
// step per batch. Every random draw derives from the seed, so the result is
// bit-reproducible.
template <typename T>
TrainResult<T> train(const PatchDataset<T>& dataset, const ModelConfig& config,
                     const TrainHyper& hyper, std::uint64_t seed) {
  config.validate();
  hyper.validate();
  if (dataset.samples.empty()) throw DataError("train: empty dataset");
  for (const Sample<T>& s : dataset.samples) {
    if (s.label < 1 || s.label > config.num_classes) {
      throw DataError("train: label " + std::to_string(s.label) + " outside [1, " +
                      std::to_string(config.num_classes) + "]");
    }
  }
  TrainResult<T> result{init_params<T>(config, seed), {}};
  OptimState<T> state = make_optim_state<T>(config, hyper);
  std::vector<std::size_t> order(dataset.samples.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  ForwardCache<T> cache;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    SplitMix64 shuffle_rng(derive_seed(seed, 0xE70C + epoch));
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t batch_n = std::min(hyper.batch_size, order.size() - start);
      zero_grads(result.params, config);
      double batch_loss = 0.0;
      try {
        for (std::size_t b = 0; b < batch_n; ++b) {
          const Sample<T>& s = dataset.samples[order[start + b]];
          const Tensor<T> probs = model_forward_cached(s.patch, result.params, config, cache);
          const std::size_t label0 = s.label - 1;
          batch_loss += -std::log(std::max(double(probs[label0]), 1e-12));
          Tensor<T> d_logits = probs;
          d_logits[label0] -= T(1);
          for (std::size_t j = 0; j < d_logits.size(); ++j) d_logits[j] /= T(batch_n);
          model_backward(s.patch, result.params, config, cache, d_logits);
        }
        batch_loss /= double(batch_n);
        if (!std::isfinite(batch_loss)) throw NumericError("non-finite batch loss");
        optimizer_step(result.params, config, state);
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(start / hyper.batch_size) +
                              " (loss " + std::to_string(batch_loss) + "): " + e.what());
      }
      result.loss_curve.push_back(batch_loss);
    }
  }
  return result;
}

// ---- gradient check ----

// ||a - n||_2 / max(||a||_2, ||n||_2, tiny)
template <typename T>
double relative_error(const Tensor<T>& a, const Tensor<T>& n) {
  detail::require_same_shape(a, n, "relative_error");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(n[i]);
    diff += d * d;
    na += double(a[i]) * double(a[i]);
    nn += double(n[i]) * double(n[i]);
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

struct GradCheckEntry {
  std::string name;
  double rel_err;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  std::string worst;
  double tolerance = 1e-4;
  bool pass = false;
};

namespace detail {

template <typename T>
double dataset_loss(const std::vector<Sample<T>>& samples, const ModelParams<T>& params,
                    const ModelConfig& config) {
  double loss = 0.0;
  for (const Sample<T>& s : samples) {
    const Tensor<T> probs = model_forward(s.patch, params, config);
    loss += -std::log(std::max(double(probs[s.label - 1]), 1e-12));
  }
  return loss / double(samples.size());
}

}  // namespace detail

// Central finite differences against the analytic backward on a small random
// batch, double precision, per parameter tensor.
inline GradCheckReport grad_check(const ModelConfig& config, std::uint64_t seed,
                                  double tolerance = 1e-4, std::size_t num_samples = 3) {
  using T = double;
  config.validate();
  ModelParams<T> params = init_params<T>(config, seed);
  SplitMix64 rng(derive_seed(seed, 0x6C4D));
  std::vector<Sample<T>> samples(num_samples);
  for (Sample<T>& s : samples) {
    s.patch = Tensor<T>({config.patch_window, config.patch_window, config.bands});
    for (std::size_t i = 0; i < s.patch.size(); ++i) s.patch[i] = rng.normal();
    s.label = std::uint16_t(1 + rng.below(config.num_classes));
  }

  zero_grads(params, config);
  ForwardCache<T> cache;
  for (const Sample<T>& s : samples) {
    const Tensor<T> probs = model_forward_cached(s.patch, params, config, cache);
    Tensor<T> d_logits = probs;
    d_logits[s.label - 1] -= 1.0;
    for (std::size_t j = 0; j < d_logits.size(); ++j) d_logits[j] /= double(num_samples);
    model_backward(s.patch, params, config, cache, d_logits);
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  for_each_param(params, config, [&](const std::string& name, Dual<T>& p) {
    Tensor<T> numeric(p.value.shape());
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T saved = p.value[j];
      const T h = 1e-5 * std::max(1.0, std::abs(saved));
      p.value[j] = saved + h;
      const double up = detail::dataset_loss(samples, params, config);
      p.value[j] = saved - h;
      const double down = detail::dataset_loss(samples, params, config);
      p.value[j] = saved;
      numeric[j] = (up - down) / (2 * h);
    }
    const double rel = relative_error(p.grad, numeric);
    report.entries.push_back(GradCheckEntry{name, rel});
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst = name;
    }
  });
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace sgumlp
