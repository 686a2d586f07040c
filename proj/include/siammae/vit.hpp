#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "siammae/image.hpp"
#include "siammae/rng.hpp"
#include "siammae/tensor.hpp"

namespace siammae {

struct PatchifyConfig {
  int image_size = 64;
  int patch_size = 8;
  int channels = 3;

  int grid() const { return image_size / patch_size; }
  int n_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  void validate() const {
    if (image_size % patch_size != 0)
      throw ShapeError("image size " + std::to_string(image_size) +
                       " not divisible by patch size " + std::to_string(patch_size));
  }
};

struct BlockConfig {
  int dim = 384;
  int heads = 6;
  int mlp_ratio = 4;
  int depth = 12;

  void validate() const {
    if (dim % heads != 0)
      throw ShapeError("dim " + std::to_string(dim) + " not divisible by heads " +
                       std::to_string(heads));
  }
};

// ---- patchify ------------------------------------------------------------
//
// Row-major patch ordering; within a patch the flattening order is
// (row-in-patch, col-in-patch, channel).

template <typename S>
Tensor<S> patchify(const Image& frame, const PatchifyConfig& cfg) {
  cfg.validate();
  if (frame.height != cfg.image_size || frame.width != cfg.image_size ||
      frame.channels != cfg.channels)
    throw ShapeError("frame " + std::to_string(frame.channels) + "x" +
                     std::to_string(frame.height) + "x" + std::to_string(frame.width) +
                     " does not match patchify config");
  const int g = cfg.grid(), N = cfg.patch_size, C = cfg.channels;
  std::vector<S> out(static_cast<size_t>(cfg.n_patches()) * cfg.patch_dim());
  size_t o = 0;
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx)
      for (int py = 0; py < N; ++py)
        for (int px = 0; px < N; ++px)
          for (int c = 0; c < C; ++c)
            out[o++] = static_cast<S>(frame.at(c, gy * N + py, gx * N + px));
  return Tensor<S>::from_data({cfg.n_patches(), cfg.patch_dim()}, std::move(out));
}

template <typename S>
Image unpatchify(const Tensor<S>& patches, const PatchifyConfig& cfg) {
  if (patches.ndim() != 2 || patches.dim(0) != cfg.n_patches() ||
      patches.dim(1) != cfg.patch_dim())
    throw ShapeError("patch tensor " + shape_str(patches.shape()) +
                     " does not match patchify config");
  const int g = cfg.grid(), N = cfg.patch_size, C = cfg.channels;
  Image frame(C, cfg.image_size, cfg.image_size);
  size_t o = 0;
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx)
      for (int py = 0; py < N; ++py)
        for (int px = 0; px < N; ++px)
          for (int c = 0; c < C; ++c)
            frame.at(c, gy * N + py, gx * N + px) = static_cast<float>(patches.value()[o++]);
  return frame;
}

// Fixed 2D sin-cos table: first half of dim encodes the row coordinate, second
// half the column, each as interleaved (sin, cos) pairs at geometric
// frequencies with base 10000.
template <typename S>
Tensor<S> sincos_pos_embed_2d(int grid_h, int grid_w, int dim) {
  if (dim % 4 != 0) throw ShapeError("positional dim must be divisible by 4, got " + std::to_string(dim));
  const int half = dim / 2;
  const int pairs = half / 2;
  std::vector<S> out(static_cast<size_t>(grid_h) * grid_w * dim);
  for (int r = 0; r < grid_h; ++r) {
    for (int c = 0; c < grid_w; ++c) {
      S* row = out.data() + (static_cast<size_t>(r) * grid_w + c) * dim;
      for (int i = 0; i < pairs; ++i) {
        const double omega = std::pow(10000.0, -2.0 * i / half);
        row[2 * i] = static_cast<S>(std::sin(r * omega));
        row[2 * i + 1] = static_cast<S>(std::cos(r * omega));
        row[half + 2 * i] = static_cast<S>(std::sin(c * omega));
        row[half + 2 * i + 1] = static_cast<S>(std::cos(c * omega));
      }
    }
  }
  return Tensor<S>::from_data({grid_h * grid_w, dim}, std::move(out));
}

// ---- parameter bookkeeping -------------------------------------------------

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
  bool decay;  // false for biases, norm affines, and token embeddings
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

// ---- layers ----------------------------------------------------------------

template <typename S>
struct Linear {
  Tensor<S> W, b;

  Linear() = default;
  Linear(int in, int out, Rng& rng) {
    W = Tensor<S>::randn({in, out}, rng, 0.02);
    W.set_requires_grad();
    b = Tensor<S>::zeros({out});
    b.set_requires_grad();
  }

  Tensor<S> forward(const Tensor<S>& x) const { return add(matmul(x, W), b); }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", W, true});
    out.push_back({prefix + ".bias", b, false});
  }
};

template <typename S>
struct LayerNorm {
  Tensor<S> gain, bias;

  LayerNorm() = default;
  explicit LayerNorm(int dim) {
    gain = Tensor<S>::filled({dim}, S(1));
    gain.set_requires_grad();
    bias = Tensor<S>::zeros({dim});
    bias.set_requires_grad();
  }

  Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, gain, bias); }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gain", gain, false});
    out.push_back({prefix + ".bias", bias, false});
  }
};

// Attention weights snapshot for visualization: [heads, n_query, n_key].
template <typename S>
struct AttnWeights {
  int heads = 0, n_query = 0, n_key = 0;
  std::vector<S> w;
};

template <typename S>
struct MultiHeadAttention {
  int dim = 0, heads = 0;
  Linear<S> q, k, v, o;

  MultiHeadAttention() = default;
  MultiHeadAttention(int dim_, int heads_, Rng& rng)
      : dim(dim_), heads(heads_), q(dim_, dim_, rng), k(dim_, dim_, rng), v(dim_, dim_, rng),
        o(dim_, dim_, rng) {
    if (dim % heads != 0)
      throw ShapeError("attention dim " + std::to_string(dim) + " not divisible by heads " +
                       std::to_string(heads));
  }

  // queries [nq, dim], keys_values [nk, dim] -> [nq, dim]. Self-attention is
  // the queries == keys_values case.
  Tensor<S> forward(const Tensor<S>& queries, const Tensor<S>& keys_values,
                    AttnWeights<S>* capture = nullptr) const {
    const int nq = queries.dim(0), nk = keys_values.dim(0);
    const int hd = dim / heads;
    auto split = [&](const Tensor<S>& t, int n) {
      // [n, dim] -> [heads, n, head_dim]
      return permute(reshape(t, {n, heads, hd}), {1, 0, 2});
    };
    auto Q = split(q.forward(queries), nq);
    auto K = split(k.forward(keys_values), nk);
    auto V = split(v.forward(keys_values), nk);
    auto scores = scale(matmul(Q, K, false, true), static_cast<S>(1.0 / std::sqrt(double(hd))));
    auto attn = softmax(scores, 2);  // [heads, nq, nk]
    if (capture) {
      capture->heads = heads;
      capture->n_query = nq;
      capture->n_key = nk;
      capture->w = attn.value();
    }
    auto ctx = matmul(attn, V);                                   // [heads, nq, hd]
    auto merged = reshape(permute(ctx, {1, 0, 2}), {nq, dim});    // [nq, dim]
    return o.forward(merged);
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    q.collect(out, prefix + ".q");
    k.collect(out, prefix + ".k");
    v.collect(out, prefix + ".v");
    o.collect(out, prefix + ".o");
  }
};

template <typename S>
struct Mlp {
  Linear<S> fc1, fc2;

  Mlp() = default;
  Mlp(int dim, int hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

  Tensor<S> forward(const Tensor<S>& x) const { return fc2.forward(gelu(fc1.forward(x))); }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Pre-norm residual block. Cross mode feeds an external context through the
// same normalization, so self mode is exactly cross mode with context == x.
template <typename S>
struct TransformerBlock {
  LayerNorm<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  Mlp<S> mlp;

  TransformerBlock() = default;
  TransformerBlock(int dim, int heads, int mlp_ratio, Rng& rng)
      : ln1(dim), ln2(dim), attn(dim, heads, rng), mlp(dim, mlp_ratio * dim, rng) {}

  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& context,
                    AttnWeights<S>* capture = nullptr) const {
    auto xn = ln1.forward(x);
    auto cn = context.node() == x.node() ? xn : ln1.forward(context);
    auto h = add(x, attn.forward(xn, cn, capture));
    return add(h, mlp.forward(ln2.forward(h)));
  }

  Tensor<S> forward(const Tensor<S>& x, AttnWeights<S>* capture = nullptr) const {
    return forward(x, x, capture);
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    ln2.collect(out, prefix + ".ln2");
    attn.collect(out, prefix + ".attn");
    mlp.collect(out, prefix + ".mlp");
  }
};

// ---- encoder ----------------------------------------------------------------

template <typename S>
struct VitEncoder {
  PatchifyConfig pcfg;
  BlockConfig bcfg;
  Linear<S> proj;
  Tensor<S> cls;      // learned [1, dim]
  Tensor<S> cls_pos;  // learned positional slot for CLS, zero-initialized
  Tensor<S> pos;      // fixed sin-cos table [n_patches, dim]
  std::vector<TransformerBlock<S>> blocks;
  LayerNorm<S> final_ln;

  VitEncoder() = default;
  VitEncoder(const PatchifyConfig& p, const BlockConfig& b, Rng& rng) : pcfg(p), bcfg(b) {
    p.validate();
    b.validate();
    proj = Linear<S>(p.patch_dim(), b.dim, rng);
    cls = Tensor<S>::randn({1, b.dim}, rng, 0.02);
    cls.set_requires_grad();
    cls_pos = Tensor<S>::zeros({1, b.dim});
    cls_pos.set_requires_grad();
    pos = sincos_pos_embed_2d<S>(p.grid(), p.grid(), b.dim);
    blocks.reserve(static_cast<size_t>(b.depth));
    for (int i = 0; i < b.depth; ++i) blocks.emplace_back(b.dim, b.heads, b.mlp_ratio, rng);
    final_ln = LayerNorm<S>(b.dim);
  }

  // Projects the selected patches and adds their positional embeddings.
  Tensor<S> embed(const Tensor<S>& patches, const std::vector<int>& kept) const {
    return add(proj.forward(gather_rows(patches, kept)), gather_rows(pos, kept));
  }

  Tensor<S> cls_with_pos() const { return add(cls, cls_pos); }

  // Runs the block stack plus final norm over a token sequence (CLS included
  // by the caller). Captures the last block's attention when requested.
  Tensor<S> run(const Tensor<S>& tokens, AttnWeights<S>* last_attn = nullptr) const {
    Tensor<S> x = tokens;
    for (size_t i = 0; i < blocks.size(); ++i)
      x = blocks[i].forward(x, i + 1 == blocks.size() ? last_attn : nullptr);
    return final_ln.forward(x);
  }

  // Full single-frame pass: CLS + selected patch tokens -> [1+|kept|, dim].
  Tensor<S> forward(const Tensor<S>& patches, const std::vector<int>& kept,
                    AttnWeights<S>* last_attn = nullptr) const {
    if (kept.empty()) throw ShapeError("encoder requires a nonempty visible token set");
    return run(concat_rows<S>({cls_with_pos(), embed(patches, kept)}), last_attn);
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    proj.collect(out, prefix + ".proj");
    out.push_back({prefix + ".cls", cls, false});
    out.push_back({prefix + ".cls_pos", cls_pos, false});
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(out, prefix + ".block" + std::to_string(i));
    final_ln.collect(out, prefix + ".final_ln");
  }

  int64_t param_count() const {
    ParamList<S> params;
    collect(params, "enc");
    int64_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
  }
};

}  // namespace siammae
