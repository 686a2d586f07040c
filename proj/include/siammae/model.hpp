#pragma once

#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "siammae/errors.hpp"
#include "siammae/vit.hpp"

namespace siammae {

// ---- masking -----------------------------------------------------------------

enum class MaskScheme { random, grid };

struct MaskSpec {
  MaskScheme scheme = MaskScheme::random;
  double ratio_f1 = 0.0;
  double ratio_f2 = 0.95;
  bool symmetric = false;

  static MaskSpec asymmetric(double r2) { return {MaskScheme::random, 0.0, r2, false}; }
  static MaskSpec symmetric_random(double r) { return {MaskScheme::random, r, r, true}; }
  static MaskSpec grid_pattern() { return {MaskScheme::grid, 0.0, 0.0, true}; }

  void validate() const {
    if (ratio_f1 < 0 || ratio_f1 > 1 || ratio_f2 < 0 || ratio_f2 > 1)
      throw UsageError("mask ratios must lie in [0,1]");
  }
};

enum class FrameRole { f1, f2 };

struct MaskPattern {
  std::vector<int> kept;    // sorted
  std::vector<int> masked;  // sorted
};

inline int kept_count(double ratio, int n_patches) {
  return std::max(1, static_cast<int>(std::lround((1.0 - ratio) * n_patches)));
}

inline MaskPattern sample_mask(int n_patches, const MaskSpec& spec, FrameRole role, Rng& rng) {
  spec.validate();
  MaskPattern out;
  if (spec.scheme == MaskScheme::grid) {
    // Checkerboard keep over the patch grid; row width = ceil(sqrt(n)) covers
    // the square grids this scheme is defined for.
    const int w = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_patches))));
    for (int i = 0; i < n_patches; ++i)
      ((i / w + i % w) % 2 == 0 ? out.kept : out.masked).push_back(i);
    return out;
  }
  const double ratio = role == FrameRole::f1 ? spec.ratio_f1 : spec.ratio_f2;
  const int n_keep = kept_count(ratio, n_patches);
  std::vector<int> perm(static_cast<size_t>(n_patches));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  out.kept.assign(perm.begin(), perm.begin() + n_keep);
  out.masked.assign(perm.begin() + n_keep, perm.end());
  std::sort(out.kept.begin(), out.kept.end());
  std::sort(out.masked.begin(), out.masked.end());
  return out;
}

// ---- architecture space ---------------------------------------------------------

enum class EncoderArch { joint, siamese };
enum class DecoderArch { joint, cross, cross_self };

struct ArchVariant {
  EncoderArch encoder = EncoderArch::siamese;
  DecoderArch decoder = DecoderArch::cross_self;
};

inline std::string to_string(EncoderArch a) {
  return a == EncoderArch::joint ? "joint" : "siamese";
}
inline std::string to_string(DecoderArch a) {
  switch (a) {
    case DecoderArch::joint: return "joint";
    case DecoderArch::cross: return "cross";
    default: return "cross_self";
  }
}
inline EncoderArch encoder_arch_from_string(const std::string& s) {
  if (s == "joint") return EncoderArch::joint;
  if (s == "siamese") return EncoderArch::siamese;
  throw UsageError("unknown encoder arch: " + s);
}
inline DecoderArch decoder_arch_from_string(const std::string& s) {
  if (s == "joint") return DecoderArch::joint;
  if (s == "cross") return DecoderArch::cross;
  if (s == "cross_self") return DecoderArch::cross_self;
  throw UsageError("unknown decoder arch: " + s);
}

struct ModelConfig {
  PatchifyConfig patch{64, 8, 3};
  BlockConfig encoder{64, 4, 4, 4};
  BlockConfig decoder{32, 4, 4, 2};
  ArchVariant arch;

  void validate() const {
    patch.validate();
    encoder.validate();
    decoder.validate();
  }
};

inline std::string to_string(MaskScheme s) {
  return s == MaskScheme::grid ? "grid" : "random";
}
inline MaskScheme mask_scheme_from_string(const std::string& s) {
  if (s == "random") return MaskScheme::random;
  if (s == "grid") return MaskScheme::grid;
  throw UsageError("unknown mask scheme: " + s);
}

inline void to_json(nlohmann::json& j, const MaskSpec& m) {
  j = {{"scheme", to_string(m.scheme)},
       {"ratio_f1", m.ratio_f1},
       {"ratio_f2", m.ratio_f2},
       {"symmetric", m.symmetric}};
}
inline void from_json(const nlohmann::json& j, MaskSpec& m) {
  m.scheme = mask_scheme_from_string(j.value("scheme", to_string(m.scheme)));
  m.ratio_f1 = j.value("ratio_f1", m.ratio_f1);
  m.ratio_f2 = j.value("ratio_f2", m.ratio_f2);
  m.symmetric = j.value("symmetric", m.symmetric);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"image_size", c.patch.image_size},
       {"patch_size", c.patch.patch_size},
       {"channels", c.patch.channels},
       {"encoder", {{"dim", c.encoder.dim},
                    {"heads", c.encoder.heads},
                    {"mlp_ratio", c.encoder.mlp_ratio},
                    {"depth", c.encoder.depth}}},
       {"decoder", {{"dim", c.decoder.dim},
                    {"heads", c.decoder.heads},
                    {"mlp_ratio", c.decoder.mlp_ratio},
                    {"depth", c.decoder.depth}}},
       {"encoder_arch", to_string(c.arch.encoder)},
       {"decoder_arch", to_string(c.arch.decoder)}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.patch.image_size = j.value("image_size", c.patch.image_size);
  c.patch.patch_size = j.value("patch_size", c.patch.patch_size);
  c.patch.channels = j.value("channels", c.patch.channels);
  auto block = [](const nlohmann::json& b, BlockConfig& out) {
    out.dim = b.value("dim", out.dim);
    out.heads = b.value("heads", out.heads);
    out.mlp_ratio = b.value("mlp_ratio", out.mlp_ratio);
    out.depth = b.value("depth", out.depth);
  };
  if (j.contains("encoder")) block(j.at("encoder"), c.encoder);
  if (j.contains("decoder")) block(j.at("decoder"), c.decoder);
  c.arch.encoder = encoder_arch_from_string(j.value("encoder_arch", to_string(c.arch.encoder)));
  c.arch.decoder = decoder_arch_from_string(j.value("decoder_arch", to_string(c.arch.decoder)));
}

// Decoder block used by the cross_self variant: cross-attention over the past
// frame, self-attention over the future frame, then one MLP — all pre-norm
// residual sublayers.
template <typename S>
struct CrossSelfBlock {
  LayerNorm<S> ln_cross, ln_self, ln_mlp;
  MultiHeadAttention<S> cross_attn, self_attn;
  Mlp<S> mlp;

  CrossSelfBlock() = default;
  CrossSelfBlock(int dim, int heads, int mlp_ratio, Rng& rng)
      : ln_cross(dim), ln_self(dim), ln_mlp(dim), cross_attn(dim, heads, rng),
        self_attn(dim, heads, rng), mlp(dim, mlp_ratio * dim, rng) {}

  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& context) const {
    auto h = add(x, cross_attn.forward(ln_cross.forward(x), ln_cross.forward(context)));
    auto hn = ln_self.forward(h);
    h = add(h, self_attn.forward(hn, hn));
    return add(h, mlp.forward(ln_mlp.forward(h)));
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    ln_cross.collect(out, prefix + ".ln_cross");
    ln_self.collect(out, prefix + ".ln_self");
    ln_mlp.collect(out, prefix + ".ln_mlp");
    cross_attn.collect(out, prefix + ".cross");
    self_attn.collect(out, prefix + ".self");
    mlp.collect(out, prefix + ".mlp");
  }
};

// ---- full model ------------------------------------------------------------------

template <typename S>
struct SiamMaeModel {
  ModelConfig cfg;
  VitEncoder<S> encoder;
  Linear<S> dec_proj;    // encoder dim -> decoder dim
  Tensor<S> mask_token;  // single learned [1, dec dim] vector for every masked slot
  Tensor<S> dec_pos;     // fixed sin-cos table at decoder width
  std::vector<TransformerBlock<S>> dec_blocks;    // joint / cross variants
  std::vector<CrossSelfBlock<S>> dec_cs_blocks;   // cross_self variant
  LayerNorm<S> dec_ln;
  Linear<S> pixel_head;  // decoder dim -> patch pixel vector

  SiamMaeModel() = default;
  SiamMaeModel(const ModelConfig& c, Rng& rng) : cfg(c) {
    cfg.validate();
    encoder = VitEncoder<S>(c.patch, c.encoder, rng);
    dec_proj = Linear<S>(c.encoder.dim, c.decoder.dim, rng);
    mask_token = Tensor<S>::randn({1, c.decoder.dim}, rng, 0.02);
    mask_token.set_requires_grad();
    dec_pos = sincos_pos_embed_2d<S>(c.patch.grid(), c.patch.grid(), c.decoder.dim);
    if (c.arch.decoder == DecoderArch::cross_self) {
      for (int i = 0; i < c.decoder.depth; ++i)
        dec_cs_blocks.emplace_back(c.decoder.dim, c.decoder.heads, c.decoder.mlp_ratio, rng);
    } else {
      for (int i = 0; i < c.decoder.depth; ++i)
        dec_blocks.emplace_back(c.decoder.dim, c.decoder.heads, c.decoder.mlp_ratio, rng);
    }
    dec_ln = LayerNorm<S>(c.decoder.dim);
    pixel_head = Linear<S>(c.decoder.dim, c.patch.patch_dim(), rng);
  }

  void collect(ParamList<S>& out) const {
    encoder.collect(out, "encoder");
    dec_proj.collect(out, "dec_proj");
    out.push_back({"mask_token", mask_token, false});
    for (size_t i = 0; i < dec_blocks.size(); ++i)
      dec_blocks[i].collect(out, "dec_block" + std::to_string(i));
    for (size_t i = 0; i < dec_cs_blocks.size(); ++i)
      dec_cs_blocks[i].collect(out, "dec_block" + std::to_string(i));
    dec_ln.collect(out, "dec_ln");
    pixel_head.collect(out, "pixel_head");
  }

  ParamList<S> params() const {
    ParamList<S> out;
    collect(out);
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : params()) n += p.tensor.numel();
    return n;
  }

  // ---- encode ------------------------------------------------------------------

  struct Latents {
    Tensor<S> f1, f2;  // patch latents in kept order, CLS dropped
  };

  Latents encode(const Tensor<S>& patches_f1, const std::vector<int>& kept_f1,
                 const Tensor<S>& patches_f2, const std::vector<int>& kept_f2,
                 AttnWeights<S>* last_attn = nullptr) const {
    if (kept_f1.empty() || kept_f2.empty())
      throw ShapeError("encoder requires nonempty visible sets for both frames");
    auto drop_cls = [](const Tensor<S>& x) {
      std::vector<int> rest(static_cast<size_t>(x.dim(0)) - 1);
      std::iota(rest.begin(), rest.end(), 1);
      return gather_rows(x, rest);
    };
    if (cfg.arch.encoder == EncoderArch::siamese) {
      auto l1 = encoder.forward(patches_f1, kept_f1);
      auto l2 = encoder.forward(patches_f2, kept_f2, last_attn);
      return {drop_cls(l1), drop_cls(l2)};
    }
    // joint: one pass over CLS + both frames' visible tokens
    auto tokens = concat_rows<S>({encoder.cls_with_pos(), encoder.embed(patches_f1, kept_f1),
                                  encoder.embed(patches_f2, kept_f2)});
    auto out = encoder.run(tokens, last_attn);
    const int k1 = static_cast<int>(kept_f1.size());
    const int k2 = static_cast<int>(kept_f2.size());
    std::vector<int> idx1(static_cast<size_t>(k1)), idx2(static_cast<size_t>(k2));
    std::iota(idx1.begin(), idx1.end(), 1);
    std::iota(idx2.begin(), idx2.end(), 1 + k1);
    return {gather_rows(out, idx1), gather_rows(out, idx2)};
  }

  // ---- decode ------------------------------------------------------------------

  // Projects latents to decoder width, reinstates [MASK] tokens at masked
  // positions, and adds the decoder positional table to every token.
  Tensor<S> build_decoder_tokens(const Tensor<S>& latent, const MaskPattern& mask) const {
    const int n = cfg.patch.n_patches();
    auto visible = scatter_rows(n, mask.kept, dec_proj.forward(latent));
    Tensor<S> full = visible;
    if (!mask.masked.empty()) {
      const std::vector<int> zeros(mask.masked.size(), 0);
      auto masks = scatter_rows(n, mask.masked, gather_rows(mask_token, zeros));
      full = add(visible, masks);
    }
    return add(full, dec_pos);
  }

  // Runs the decoder stack of the configured variant over f2 tokens with f1
  // context (ignored by the joint variant, which must concatenate upstream).
  Tensor<S> run_decoder(const Tensor<S>& f2_tokens, const Tensor<S>& f1_context) const {
    Tensor<S> x = f2_tokens;
    if (cfg.arch.decoder == DecoderArch::cross_self) {
      for (const auto& b : dec_cs_blocks) x = b.forward(x, f1_context);
    } else if (cfg.arch.decoder == DecoderArch::cross) {
      for (const auto& b : dec_blocks) x = b.forward(x, f1_context);
    } else {
      throw ShapeError("run_decoder: joint variant decodes concatenated frames");
    }
    return dec_ln.forward(x);
  }

  struct Decoded {
    Tensor<S> pred_f2;                  // [|masked_f2|, patch_dim]
    std::optional<Tensor<S>> pred_f1;   // joint decoder with masked f1 only
  };

  Decoded decode(const Latents& latents, const MaskPattern& mask_f1,
                 const MaskPattern& mask_f2) const {
    if (mask_f2.masked.empty()) throw ShapeError("decode: f2 has no masked positions to predict");
    auto f2_tokens = build_decoder_tokens(latents.f2, mask_f2);
    if (cfg.arch.decoder == DecoderArch::joint) {
      const int n = cfg.patch.n_patches();
      auto f1_tokens = build_decoder_tokens(latents.f1, mask_f1);
      auto x = concat_rows<S>({f1_tokens, f2_tokens});
      for (const auto& b : dec_blocks) x = b.forward(x);
      x = dec_ln.forward(x);
      std::vector<int> f2_rows = mask_f2.masked;
      for (auto& r : f2_rows) r += n;
      Decoded out{pixel_head.forward(gather_rows(x, f2_rows)), std::nullopt};
      if (!mask_f1.masked.empty())
        out.pred_f1 = pixel_head.forward(gather_rows(x, mask_f1.masked));
      return out;
    }
    // cross / cross_self: context is f1 at decoder width with positions added
    auto ctx = add(dec_proj.forward(latents.f1), gather_rows(dec_pos, mask_f1.kept));
    auto x = run_decoder(f2_tokens, ctx);
    return {pixel_head.forward(gather_rows(x, mask_f2.masked)), std::nullopt};
  }

  // ---- loss --------------------------------------------------------------------

  // Per-patch normalization of raw target rows (zero mean, unit variance).
  static std::vector<S> normalize_target_rows(const Tensor<S>& target_patches,
                                              const std::vector<int>& rows, double eps = 1e-6) {
    const int pd = target_patches.dim(1);
    std::vector<S> out(rows.size() * static_cast<size_t>(pd));
    for (size_t r = 0; r < rows.size(); ++r) {
      const S* src = target_patches.value().data() + static_cast<int64_t>(rows[r]) * pd;
      S mu = 0;
      for (int j = 0; j < pd; ++j) mu += src[j];
      mu /= static_cast<S>(pd);
      S var = 0;
      for (int j = 0; j < pd; ++j) var += (src[j] - mu) * (src[j] - mu);
      var /= static_cast<S>(pd);
      const S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
      for (int j = 0; j < pd; ++j) out[r * static_cast<size_t>(pd) + j] = (src[j] - mu) * inv;
    }
    return out;
  }

  Tensor<S> reconstruction_loss(const Tensor<S>& predicted, const Tensor<S>& target_patches,
                                const MaskPattern& mask) const {
    if (mask.masked.empty()) throw ShapeError("reconstruction loss needs a nonempty masked set");
    const int pd = cfg.patch.patch_dim();
    if (predicted.ndim() != 2 || predicted.dim(0) != static_cast<int>(mask.masked.size()) ||
        predicted.dim(1) != pd)
      throw ShapeError("prediction shape " + shape_str(predicted.shape()) +
                       " does not match masked set");
    auto targets = Tensor<S>::from_data({static_cast<int>(mask.masked.size()), pd},
                                        normalize_target_rows(target_patches, mask.masked));
    auto d = sub(predicted, targets);
    return mean(mul(d, d));
  }

  // ---- training forward ----------------------------------------------------------

  struct Diagnostics {
    int kept_f1 = 0, kept_f2 = 0;
    double attn_entropy = 0.0;  // mean entropy of the final encoder attention
  };

  struct ForwardOut {
    Tensor<S> loss;
    Diagnostics diag;
  };

  ForwardOut forward_with_masks(const Image& f1, const Image& f2, const MaskPattern& mask_f1,
                                const MaskPattern& mask_f2) const {
    auto p1 = patchify<S>(f1, cfg.patch);
    auto p2 = patchify<S>(f2, cfg.patch);
    AttnWeights<S> attn;
    auto latents = encode(p1, mask_f1.kept, p2, mask_f2.kept, &attn);
    auto decoded = decode(latents, mask_f1, mask_f2);
    auto loss = reconstruction_loss(decoded.pred_f2, p2, mask_f2);
    if (decoded.pred_f1) {
      // pool the two frame losses weighted by masked-patch counts
      const double m1 = static_cast<double>(mask_f1.masked.size());
      const double m2 = static_cast<double>(mask_f2.masked.size());
      auto loss_f1 = reconstruction_loss(*decoded.pred_f1, p1, mask_f1);
      loss = add(scale(loss, static_cast<S>(m2 / (m1 + m2))),
                 scale(loss_f1, static_cast<S>(m1 / (m1 + m2))));
    }
    ForwardOut out{loss, {}};
    out.diag.kept_f1 = static_cast<int>(mask_f1.kept.size());
    out.diag.kept_f2 = static_cast<int>(mask_f2.kept.size());
    double ent = 0.0;
    for (int h = 0; h < attn.heads; ++h)
      for (int i = 0; i < attn.n_query; ++i) {
        const S* row = attn.w.data() + (static_cast<size_t>(h) * attn.n_query + i) * attn.n_key;
        for (int j = 0; j < attn.n_key; ++j)
          if (row[j] > 0) ent -= static_cast<double>(row[j]) * std::log(static_cast<double>(row[j]));
      }
    out.diag.attn_entropy = attn.heads ? ent / (attn.heads * attn.n_query) : 0.0;
    return out;
  }

  ForwardOut forward_train(const Image& f1, const Image& f2, const MaskSpec& spec,
                           Rng& rng) const {
    const int n = cfg.patch.n_patches();
    auto mask_f1 = sample_mask(n, spec, FrameRole::f1, rng);
    auto mask_f2 = sample_mask(n, spec, FrameRole::f2, rng);
    return forward_with_masks(f1, f2, mask_f1, mask_f2);
  }

  // ---- visualization ---------------------------------------------------------------

  // Final-layer CLS attention per head, reshaped to the patch grid and
  // min-max scaled to [0,1]. `raw` optionally receives the full weights.
  std::vector<Image> cls_attention_maps(const Image& frame, AttnWeights<S>* raw = nullptr) const {
    auto patches = patchify<S>(frame, cfg.patch);
    std::vector<int> all(static_cast<size_t>(cfg.patch.n_patches()));
    std::iota(all.begin(), all.end(), 0);
    AttnWeights<S> attn;
    NoGradGuard ng;
    encoder.forward(patches, all, &attn);
    if (raw) *raw = attn;
    const int g = cfg.patch.grid();
    std::vector<Image> maps;
    for (int h = 0; h < attn.heads; ++h) {
      // CLS query is row 0; patch keys start at column 1.
      const S* row = attn.w.data() + static_cast<size_t>(h) * attn.n_query * attn.n_key;
      S lo = row[1], hi = row[1];
      for (int j = 1; j < attn.n_key; ++j) {
        lo = std::min(lo, row[j]);
        hi = std::max(hi, row[j]);
      }
      const S span = hi > lo ? hi - lo : S(1);
      Image m(1, g, g);
      for (int j = 1; j < attn.n_key; ++j) {
        const int p = j - 1;
        m.at(0, p / g, p % g) = static_cast<float>((row[j] - lo) / span);
      }
      maps.push_back(std::move(m));
    }
    return maps;
  }
};

}  // namespace siammae
