#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sgumlp/errors.hpp"
#include "sgumlp/rng.hpp"
#include "sgumlp/tensor.hpp"

namespace sgumlp {

// Ablation variants; CLI spelling in variant_name, report-column spelling in
// variant_table_label.
enum class Variant { kMlp, kSguMlpNoDwc, kDwcMlp, kSguMlp };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kMlp: return "mlp";
    case Variant::kSguMlpNoDwc: return "sgu-mlp-nodwc";
    case Variant::kDwcMlp: return "dwc-mlp";
    case Variant::kSguMlp: return "sgu-mlp";
  }
  return "?";
}

inline const char* variant_table_label(Variant v) {
  switch (v) {
    case Variant::kMlp: return "MLP";
    case Variant::kSguMlpNoDwc: return "SGU + MLP";
    case Variant::kDwcMlp: return "DWC + MLP";
    case Variant::kSguMlp: return "SGUMLP";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "mlp") return Variant::kMlp;
  if (s == "sgu-mlp-nodwc") return Variant::kSguMlpNoDwc;
  if (s == "dwc-mlp") return Variant::kDwcMlp;
  if (s == "sgu-mlp") return Variant::kSguMlp;
  throw ConfigError("unknown variant '" + s +
                    "' (expected mlp, sgu-mlp-nodwc, dwc-mlp, sgu-mlp)");
}

inline bool variant_uses_dwc(Variant v) {
  return v == Variant::kDwcMlp || v == Variant::kSguMlp;
}

inline bool variant_uses_sgu(Variant v) {
  return v == Variant::kSguMlpNoDwc || v == Variant::kSguMlp;
}

struct ModelConfig {
  std::size_t patch_window = 9;
  std::size_t bands = 0;
  std::vector<std::size_t> dwc_kernels = {1, 3, 5};
  std::size_t token_segment = 4;
  std::size_t hidden_dim = 256;
  std::size_t mixer_ffn_dim = 256;
  std::size_t num_blocks = 4;
  std::size_t num_classes = 0;
  Variant variant = Variant::kSguMlp;
  // With SGU enabled, gates sit in both MLPs by default; clearing this keeps
  // the gate in the channel-mixing MLP only.
  bool sgu_in_token_mlp = true;
  double ln_eps = 1e-5;

  std::size_t flat_len() const { return patch_window * patch_window * bands; }
  std::size_t token_count() const {
    return (flat_len() + token_segment - 1) / token_segment;
  }
  bool uses_dwc() const { return variant_uses_dwc(variant); }
  bool uses_sgu() const { return variant_uses_sgu(variant); }
  bool sgu_in_token() const { return uses_sgu() && sgu_in_token_mlp; }
  bool sgu_in_channel() const { return uses_sgu(); }

  void validate() const {
    if (patch_window < 1 || patch_window % 2 == 0) {
      throw ConfigError("patch_window must be odd and >= 1, got " +
                        std::to_string(patch_window));
    }
    if (bands < 1) throw ConfigError("bands must be >= 1");
    if (token_segment < 1) throw ConfigError("token_segment must be >= 1");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (mixer_ffn_dim < 1) throw ConfigError("mixer_ffn_dim must be >= 1");
    if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (ln_eps <= 0) throw ConfigError("ln_eps must be positive");
    if (uses_sgu() && mixer_ffn_dim % 2 != 0) {
      throw ConfigError("mixer_ffn_dim must be even with a gated variant, got " +
                        std::to_string(mixer_ffn_dim));
    }
    if (uses_dwc()) {
      if (dwc_kernels.empty()) throw ConfigError("dwc_kernels must not be empty");
      for (std::size_t k : dwc_kernels) {
        if (k < 1 || k % 2 == 0) {
          throw ConfigError("dwc kernel extents must be odd, got " + std::to_string(k));
        }
      }
    }
    if (token_count() < 2) {
      throw ConfigError("token count must be >= 2, got " + std::to_string(token_count()));
    }
  }
};

template <typename T>
struct SguParams {
  Dual<T> w_spatial;  // square over the rows of the matrix being gated
  Dual<T> b_spatial;  // one entry per row, broadcast across channels
};

template <typename T>
struct GatedMlpParams {
  Dual<T> ln_gain;
  Dual<T> ln_bias;
  Dual<T> w_in;
  std::optional<SguParams<T>> sgu;
  Dual<T> w_out;
};

template <typename T>
struct MixerBlockParams {
  GatedMlpParams<T> token_mlp;
  GatedMlpParams<T> channel_mlp;
};

template <typename T>
struct DwcBranchParams {
  Dual<T> kernels;  // [k x k x bands]
  Dual<T> bias;     // [bands]
};

template <typename T>
struct ModelParams {
  std::vector<DwcBranchParams<T>> dwc;  // one branch per configured kernel extent
  Dual<T> embed_w;                      // [token_segment x hidden_dim]
  Dual<T> embed_b;                      // [hidden_dim]
  std::vector<MixerBlockParams<T>> blocks;
  Dual<T> head_w;  // [hidden_dim x num_classes]
  Dual<T> head_b;  // [num_classes]
};

namespace detail {

// Canonical traversal; every consumer of "all parameters in order" (optimizer,
// checkpoint, init, audit, gradient check) goes through this one walk.
template <typename Params, typename Fn>
void walk_gated_mlp(const std::string& prefix, Params& p, Fn&& fn) {
  fn(prefix + ".ln_gain", p.ln_gain);
  fn(prefix + ".ln_bias", p.ln_bias);
  fn(prefix + ".w_in", p.w_in);
  if (p.sgu) {
    fn(prefix + ".sgu.weight", p.sgu->w_spatial);
    fn(prefix + ".sgu.bias", p.sgu->b_spatial);
  }
  fn(prefix + ".w_out", p.w_out);
}

}  // namespace detail

template <typename T, typename Fn>
void for_each_param(ModelParams<T>& params, const ModelConfig& config, Fn&& fn) {
  for (std::size_t i = 0; i < params.dwc.size(); ++i) {
    const std::string prefix = "dwc.k" + std::to_string(config.dwc_kernels[i]);
    fn(prefix + ".weight", params.dwc[i].kernels);
    fn(prefix + ".bias", params.dwc[i].bias);
  }
  fn("embed.weight", params.embed_w);
  fn("embed.bias", params.embed_b);
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    const std::string prefix = "blocks." + std::to_string(i);
    detail::walk_gated_mlp(prefix + ".token_mlp", params.blocks[i].token_mlp, fn);
    detail::walk_gated_mlp(prefix + ".channel_mlp", params.blocks[i].channel_mlp, fn);
  }
  fn("head.weight", params.head_w);
  fn("head.bias", params.head_b);
}

template <typename T, typename Fn>
void for_each_param(const ModelParams<T>& params, const ModelConfig& config, Fn&& fn) {
  for_each_param(const_cast<ModelParams<T>&>(params), config,
                 [&fn](const std::string& name, Dual<T>& p) {
                   fn(name, static_cast<const Dual<T>&>(p));
                 });
}

namespace detail {

// rows: row count of the matrix this MLP gates (token MLP operates on the
// transposed token matrix, so its rows are channels); feat: its feature axis.
template <typename T>
GatedMlpParams<T> make_gated_mlp(std::size_t rows, std::size_t feat, std::size_t ffn,
                                 bool use_sgu) {
  GatedMlpParams<T> p;
  p.ln_gain = Dual<T>(Tensor<T>({feat}));
  p.ln_bias = Dual<T>(Tensor<T>({feat}));
  p.w_in = Dual<T>(Tensor<T>({feat, ffn}));
  std::size_t out_in = ffn;
  if (use_sgu) {
    p.sgu = SguParams<T>{Dual<T>(Tensor<T>({rows, rows})), Dual<T>(Tensor<T>({rows}))};
    out_in = ffn / 2;
  }
  p.w_out = Dual<T>(Tensor<T>({out_in, feat}));
  return p;
}

}  // namespace detail

template <typename T>
ModelParams<T> make_params(const ModelConfig& config) {
  config.validate();
  const std::size_t e = config.token_count();
  const std::size_t c = config.hidden_dim;
  ModelParams<T> params;
  if (config.uses_dwc()) {
    for (std::size_t k : config.dwc_kernels) {
      params.dwc.push_back(DwcBranchParams<T>{Dual<T>(Tensor<T>({k, k, config.bands})),
                                              Dual<T>(Tensor<T>({config.bands}))});
    }
  }
  params.embed_w = Dual<T>(Tensor<T>({config.token_segment, c}));
  params.embed_b = Dual<T>(Tensor<T>({c}));
  for (std::size_t i = 0; i < config.num_blocks; ++i) {
    MixerBlockParams<T> block;
    block.token_mlp =
        detail::make_gated_mlp<T>(c, e, config.mixer_ffn_dim, config.sgu_in_token());
    block.channel_mlp =
        detail::make_gated_mlp<T>(e, c, config.mixer_ffn_dim, config.sgu_in_channel());
    params.blocks.push_back(std::move(block));
  }
  params.head_w = Dual<T>(Tensor<T>({c, config.num_classes}));
  params.head_b = Dual<T>(Tensor<T>({config.num_classes}));
  return params;
}

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
};

inline std::vector<ParamSpec> parameter_shapes(const ModelConfig& config) {
  auto params = make_params<float>(config);
  std::vector<ParamSpec> specs;
  for_each_param(params, config, [&specs](const std::string& name, const Dual<float>& p) {
    specs.push_back(ParamSpec{name, p.value.shape()});
  });
  return specs;
}

inline std::size_t param_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& spec : parameter_shapes(config)) {
    std::size_t s = 1;
    for (std::size_t e : spec.shape) s *= e;
    n += s;
  }
  return n;
}

template <typename T>
void zero_grads(ModelParams<T>& params, const ModelConfig& config) {
  for_each_param(params, config,
                 [](const std::string&, Dual<T>& p) { p.zero_grad(); });
}

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

// Deterministic per seed: one stream, tensors filled in canonical order.
// Dense weights are Glorot-uniform; gates start near identity (w ~ U(+-1e-3),
// b = 1) so an initial gated model behaves like its ungated counterpart.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<T> params = make_params<T>(config);
  SplitMix64 rng(derive_seed(seed, 0x1A7E5));
  for_each_param(params, config, [&rng](const std::string& name, Dual<T>& p) {
    Tensor<T>& t = p.value;
    if (detail::ends_with(name, ".ln_gain")) {
      t.fill(T(1));
    } else if (detail::ends_with(name, ".sgu.weight")) {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(rng.uniform(-1e-3, 1e-3));
    } else if (detail::ends_with(name, ".sgu.bias")) {
      t.fill(T(1));
    } else if (t.rank() >= 2) {
      double fan_in, fan_out;
      if (t.rank() == 2) {
        fan_in = double(t.extent(0));
        fan_out = double(t.extent(1));
      } else {
        fan_in = fan_out = double(t.extent(0) * t.extent(1));  // per-channel kernel taps
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(rng.uniform(-limit, limit));
    }
    // remaining rank-1 tensors are biases, already zero
  });
  return params;
}

// ---- forward/backward ----

// Sum of parallel channel-preserving depthwise branches; output shape equals
// the input shape.
template <typename T>
Tensor<T> dwc_block_forward(const Tensor<T>& x, const std::vector<DwcBranchParams<T>>& dwc) {
  if (dwc.empty()) throw ConfigError("dwc block: no branches configured");
  Tensor<T> out = depthwise_conv2d(x, dwc[0].kernels.value, dwc[0].bias.value);
  for (std::size_t i = 1; i < dwc.size(); ++i) {
    out = add(out, depthwise_conv2d(x, dwc[i].kernels.value, dwc[i].bias.value));
  }
  return out;
}

// Accumulates branch gradients; returns d/dx (sum over branches).
template <typename T>
Tensor<T> dwc_block_backward(const Tensor<T>& x, std::vector<DwcBranchParams<T>>& dwc,
                             const Tensor<T>& g) {
  Tensor<T> dx(x.shape());
  for (auto& branch : dwc) {
    DepthwiseGrads<T> grads = depthwise_conv2d_backward(x, branch.kernels.value, g);
    branch.kernels.accumulate(grads.dkernels);
    branch.bias.accumulate(grads.dbias);
    add_in_place(dx, grads.dx);
  }
  return dx;
}

// Segments the flattened feature vector into rows of length token_segment,
// zero-padding the tail; row e is segment e.
template <typename T>
Tensor<T> segment_rows(const Tensor<T>& x_flat, std::size_t token_segment) {
  detail::require_rank(x_flat, 1, "tokenize");
  const std::size_t l = x_flat.size();
  const std::size_t e = (l + token_segment - 1) / token_segment;
  Tensor<T> segments({e, token_segment});
  for (std::size_t i = 0; i < l; ++i) {
    segments[i] = x_flat[i];  // both row-major with the same layout; tail stays zero
  }
  return segments;
}

template <typename T>
Tensor<T> tokenize(const Tensor<T>& x_flat, const Tensor<T>& embed_w,
                   const Tensor<T>& embed_b, std::size_t token_segment) {
  return add_row_bias(matmul(segment_rows(x_flat, token_segment), embed_w), embed_b);
}

// g[r, c] = sum_t w[r, t] * d2[t, c] + b[r]
template <typename T>
Tensor<T> sgu_gate(const Tensor<T>& d2, const SguParams<T>& p) {
  const Tensor<T>& w = p.w_spatial.value;
  const Tensor<T>& b = p.b_spatial.value;
  if (w.rank() != 2 || w.extent(0) != w.extent(1) || w.extent(0) != d2.extent(0)) {
    throw DimensionError("sgu: spatial projection " + shape_string(w.shape()) +
                         " must be square with extent " + std::to_string(d2.extent(0)));
  }
  if (b.rank() != 1 || b.extent(0) != d2.extent(0)) {
    throw DimensionError("sgu: bias " + shape_string(b.shape()) + " must have extent " +
                         std::to_string(d2.extent(0)));
  }
  Tensor<T> g = matmul(w, d2);
  const std::size_t rows = g.extent(0), cols = g.extent(1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) g.at2(r, c) += b[r];
  return g;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_cols(const Tensor<T>& m) {
  detail::require_rank(m, 2, "channel split");
  const std::size_t rows = m.extent(0), f = m.extent(1);
  if (f % 2 != 0) {
    throw ConfigError("channel split: feature extent must be even, got " + std::to_string(f));
  }
  const std::size_t h = f / 2;
  Tensor<T> a({rows, h}), b({rows, h});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < h; ++c) {
      a.at2(r, c) = m.at2(r, c);
      b.at2(r, c) = m.at2(r, c + h);
    }
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "channel concat");
  detail::require_same_shape(a, b, "channel concat");
  const std::size_t rows = a.extent(0), h = a.extent(1);
  Tensor<T> out({rows, 2 * h});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < h; ++c) {
      out.at2(r, c) = a.at2(r, c);
      out.at2(r, c + h) = b.at2(r, c);
    }
  }
  return out;
}

// Halves the channel axis: out = D1 (*) (w.D2 + b), per-row bias.
template <typename T>
Tensor<T> sgu_forward(const Tensor<T>& d, const SguParams<T>& p) {
  auto [d1, d2] = split_cols(d);
  return mul(d1, sgu_gate(d2, p));
}

template <typename T>
struct GatedMlpCache {
  Tensor<T> input;      // v
  Tensor<T> normed;     // LN(v)
  Tensor<T> hidden;     // normed . w_in
  Tensor<T> gate;       // w.D2 + b, empty when the gate is absent
  Tensor<T> gated;      // hidden after gating (== hidden when absent)
  Tensor<T> activated;  // gelu(gated)
};

// h = LN(v); h = h.w_in; gate; gelu; v + h.w_out
template <typename T>
Tensor<T> gated_mlp_forward(const Tensor<T>& v, const GatedMlpParams<T>& p, bool use_sgu,
                            T eps, GatedMlpCache<T>* cache) {
  if (use_sgu && !p.sgu) throw ConfigError("gated mlp: gate requested but absent from params");
  Tensor<T> normed = layer_norm(v, p.ln_gain.value, p.ln_bias.value, eps);
  Tensor<T> hidden = matmul(normed, p.w_in.value);
  Tensor<T> gate;
  Tensor<T> gated;
  if (use_sgu) {
    auto [d1, d2] = split_cols(hidden);
    gate = sgu_gate(d2, *p.sgu);
    gated = mul(d1, gate);
  } else {
    gated = hidden;
  }
  Tensor<T> activated = gelu(gated);
  Tensor<T> out = add(v, matmul(activated, p.w_out.value));
  if (cache) {
    cache->input = v;
    cache->normed = std::move(normed);
    cache->hidden = std::move(hidden);
    cache->gate = std::move(gate);
    cache->gated = std::move(gated);
    cache->activated = std::move(activated);
  }
  return out;
}

template <typename T>
Tensor<T> gated_mlp_forward(const Tensor<T>& v, const GatedMlpParams<T>& p, bool use_sgu,
                            T eps) {
  return gated_mlp_forward(v, p, use_sgu, eps, static_cast<GatedMlpCache<T>*>(nullptr));
}

// Accumulates parameter gradients into p, returns d/dv.
template <typename T>
Tensor<T> gated_mlp_backward(GatedMlpParams<T>& p, bool use_sgu, T eps,
                             const GatedMlpCache<T>& cache, const Tensor<T>& g) {
  // out = v + activated . w_out
  Tensor<T> d_activated = detail::matmul_nt(g, p.w_out.value, "gated mlp backward");
  p.w_out.accumulate(detail::matmul_tn(cache.activated, g, "gated mlp backward"));
  Tensor<T> d_gated = gelu_backward(cache.gated, d_activated);
  Tensor<T> d_hidden;
  if (use_sgu) {
    auto [d1, d2] = split_cols(cache.hidden);
    SguParams<T>& sgu = *p.sgu;
    Tensor<T> d_d1 = mul(d_gated, cache.gate);
    Tensor<T> d_gate = mul(d_gated, d1);
    sgu.w_spatial.accumulate(detail::matmul_nt(d_gate, d2, "sgu backward"));
    sgu.b_spatial.accumulate(sum_cols(d_gate));
    Tensor<T> d_d2 = detail::matmul_tn(sgu.w_spatial.value, d_gate, "sgu backward");
    d_hidden = concat_cols(d_d1, d_d2);
  } else {
    d_hidden = std::move(d_gated);
  }
  Tensor<T> d_normed = detail::matmul_nt(d_hidden, p.w_in.value, "gated mlp backward");
  p.w_in.accumulate(detail::matmul_tn(cache.normed, d_hidden, "gated mlp backward"));
  LayerNormGrads<T> ln = layer_norm_backward(cache.input, p.ln_gain.value, eps, d_normed);
  p.ln_gain.accumulate(ln.dgain);
  p.ln_bias.accumulate(ln.dbias);
  return add(g, ln.dx);  // residual path
}

template <typename T>
struct MixerBlockCache {
  GatedMlpCache<T> token;
  GatedMlpCache<T> channel;
};

// Token mixing runs the MLP on the transposed token matrix (across the token
// axis); channel mixing runs it directly (across the channel axis).
template <typename T>
Tensor<T> mixer_block_forward(const Tensor<T>& m, const MixerBlockParams<T>& p,
                              const ModelConfig& config, MixerBlockCache<T>* cache) {
  const T eps = T(config.ln_eps);
  Tensor<T> u = transpose(gated_mlp_forward(transpose(m), p.token_mlp,
                                            config.sgu_in_token(), eps,
                                            cache ? &cache->token : nullptr));
  return gated_mlp_forward(u, p.channel_mlp, config.sgu_in_channel(), eps,
                           cache ? &cache->channel : nullptr);
}

template <typename T>
Tensor<T> mixer_block_forward(const Tensor<T>& m, const MixerBlockParams<T>& p,
                              const ModelConfig& config) {
  return mixer_block_forward(m, p, config, static_cast<MixerBlockCache<T>*>(nullptr));
}

template <typename T>
Tensor<T> mixer_block_backward(MixerBlockParams<T>& p, const ModelConfig& config,
                               const MixerBlockCache<T>& cache, const Tensor<T>& g) {
  const T eps = T(config.ln_eps);
  Tensor<T> du = gated_mlp_backward(p.channel_mlp, config.sgu_in_channel(), eps,
                                    cache.channel, g);
  Tensor<T> dt = gated_mlp_backward(p.token_mlp, config.sgu_in_token(), eps, cache.token,
                                    transpose(du));
  return transpose(dt);
}

// Mean over the token axis, affine head, softmax.
template <typename T>
Tensor<T> head_forward(const Tensor<T>& tokens, const Tensor<T>& head_w,
                       const Tensor<T>& head_b, Tensor<T>* pooled_out = nullptr) {
  detail::require_rank(tokens, 2, "head");
  const std::size_t e = tokens.extent(0), c = tokens.extent(1);
  Tensor<T> pooled({std::size_t(1), c});
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t j = 0; j < c; ++j) pooled.at2(0, j) += tokens.at2(i, j);
  for (std::size_t j = 0; j < c; ++j) pooled.at2(0, j) /= T(e);
  Tensor<T> logits = add_row_bias(matmul(pooled, head_w), head_b);
  if (pooled_out) *pooled_out = pooled;
  Tensor<T> probs2 = softmax(logits);
  return Tensor<T>({probs2.extent(1)}, probs2.vec());
}

template <typename T>
struct ForwardCache {
  Tensor<T> features;   // DWC output, or the raw patch for no-DWC variants
  Tensor<T> segments;   // [E x token_segment]
  std::vector<MixerBlockCache<T>> blocks;
  Tensor<T> pooled;     // [1 x hidden_dim]
  Tensor<T> probs;      // [num_classes]
};

template <typename T>
Tensor<T> model_forward_cached(const Tensor<T>& patch, const ModelParams<T>& params,
                               const ModelConfig& config, ForwardCache<T>& cache) {
  detail::require_rank(patch, 3, "model forward");
  if (patch.extent(0) != config.patch_window || patch.extent(1) != config.patch_window ||
      patch.extent(2) != config.bands) {
    throw DimensionError("model forward: patch " + shape_string(patch.shape()) +
                         " does not match configured " +
                         std::to_string(config.patch_window) + "x" +
                         std::to_string(config.patch_window) + "x" +
                         std::to_string(config.bands));
  }
  if (params.blocks.size() != config.num_blocks) {
    throw DimensionError("model forward: params carry " +
                         std::to_string(params.blocks.size()) + " blocks, config expects " +
                         std::to_string(config.num_blocks));
  }
  cache.features = config.uses_dwc() ? dwc_block_forward(patch, params.dwc) : patch;
  Tensor<T> flat({cache.features.size()}, cache.features.vec());
  cache.segments = segment_rows(flat, config.token_segment);
  Tensor<T> tokens =
      add_row_bias(matmul(cache.segments, params.embed_w.value), params.embed_b.value);
  cache.blocks.resize(config.num_blocks);
  for (std::size_t i = 0; i < config.num_blocks; ++i) {
    tokens = mixer_block_forward(tokens, params.blocks[i], config, &cache.blocks[i]);
  }
  cache.probs = head_forward(tokens, params.head_w.value, params.head_b.value, &cache.pooled);
  return cache.probs;
}

template <typename T>
Tensor<T> model_forward(const Tensor<T>& patch, const ModelParams<T>& params,
                        const ModelConfig& config) {
  ForwardCache<T> cache;
  return model_forward_cached(patch, params, config, cache);
}

// Backpropagates from d(loss)/d(logits); accumulates into params. The fused
// softmax + cross-entropy cotangent for one sample is (probs - onehot)/batch.
template <typename T>
void model_backward(const Tensor<T>& patch, ModelParams<T>& params,
                    const ModelConfig& config, const ForwardCache<T>& cache,
                    const Tensor<T>& d_logits) {
  if (d_logits.rank() != 1 || d_logits.extent(0) != config.num_classes) {
    throw DimensionError("model backward: cotangent " + shape_string(d_logits.shape()) +
                         " must have extent " + std::to_string(config.num_classes));
  }
  const std::size_t e = config.token_count();
  const std::size_t c = config.hidden_dim;
  Tensor<T> dl({std::size_t(1), config.num_classes}, d_logits.vec());
  params.head_w.accumulate(detail::matmul_tn(cache.pooled, dl, "head backward"));
  params.head_b.accumulate(Tensor<T>({config.num_classes}, d_logits.vec()));
  Tensor<T> d_pooled = detail::matmul_nt(dl, params.head_w.value, "head backward");
  Tensor<T> d_tokens({e, c});
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t j = 0; j < c; ++j) d_tokens.at2(i, j) = d_pooled.at2(0, j) / T(e);
  for (std::size_t i = config.num_blocks; i-- > 0;) {
    d_tokens = mixer_block_backward(params.blocks[i], config, cache.blocks[i], d_tokens);
  }
  Tensor<T> d_segments =
      detail::matmul_nt(d_tokens, params.embed_w.value, "tokenize backward");
  params.embed_w.accumulate(detail::matmul_tn(cache.segments, d_tokens, "tokenize backward"));
  params.embed_b.accumulate(sum_rows(d_tokens));
  if (config.uses_dwc()) {
    Tensor<T> d_features(cache.features.shape());
    for (std::size_t i = 0; i < d_features.size(); ++i) d_features[i] = d_segments[i];
    dwc_block_backward(patch, params.dwc, d_features);
  }
}

}  // namespace sgumlp
