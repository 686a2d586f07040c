#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "siammae/data.hpp"
#include "siammae/errors.hpp"
#include "siammae/model.hpp"

namespace siammae {

// ---- feature and label grids ------------------------------------------------------

struct FeatureMap {
  int grid = 0;
  int dim = 0;
  std::vector<float> feat;  // [grid*grid, dim], rows L2-normalized

  const float* row(int p) const { return feat.data() + static_cast<size_t>(p) * dim; }
};

struct LabelMap {
  int grid = 0;
  int channels = 0;
  std::vector<float> val;  // [grid*grid, channels]

  const float* row(int p) const { return val.data() + static_cast<size_t>(p) * channels; }
  float* row(int p) { return val.data() + static_cast<size_t>(p) * channels; }
};

// Full (unmasked) encoder pass over one frame; CLS dropped, rows unit-length.
template <typename S>
FeatureMap extract_features(const SiamMaeModel<S>& model, const Image& frame) {
  NoGradGuard ng;
  auto patches = patchify<S>(frame, model.cfg.patch);
  const int n = model.cfg.patch.n_patches();
  std::vector<int> all(static_cast<size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  auto tokens = model.encoder.forward(patches, all);

  FeatureMap out;
  out.grid = model.cfg.patch.grid();
  out.dim = model.cfg.encoder.dim;
  out.feat.resize(static_cast<size_t>(n) * out.dim);
  const auto& vals = tokens.value();
  for (int p = 0; p < n; ++p) {
    const S* src = vals.data() + static_cast<size_t>(p + 1) * out.dim;  // skip CLS row
    double sq = 0;
    for (int d = 0; d < out.dim; ++d) sq += static_cast<double>(src[d]) * src[d];
    const double inv = 1.0 / std::max(std::sqrt(sq), 1e-12);
    for (int d = 0; d < out.dim; ++d)
      out.feat[static_cast<size_t>(p) * out.dim + d] = static_cast<float>(src[d] * inv);
  }
  return out;
}

// ---- propagation ------------------------------------------------------------------

struct PropagationConfig {
  int top_k = 7;
  int queue_len = 20;     // past predicted frames kept as context
  int neighborhood = 20;  // Chebyshev radius in patch units
  double temperature = 0.07;

  void validate() const {
    if (top_k < 1 || queue_len < 0 || neighborhood < 0 || temperature <= 0)
      throw UsageError("invalid propagation settings");
  }
};

struct ContextFrame {
  const FeatureMap* feat = nullptr;
  const LabelMap* labels = nullptr;
};

// Per query patch: cosine affinities to context patches in a Chebyshev window,
// softmax over the top-k at the given temperature, convex label combination.
// Ties in the top-k cut resolve in context enumeration order, so the result is
// deterministic.
inline LabelMap propagate_labels(const std::vector<ContextFrame>& context,
                                 const FeatureMap& target, const PropagationConfig& cfg) {
  cfg.validate();
  if (context.empty()) throw UsageError("label propagation needs at least one context frame");
  const int g = target.grid, dim = target.dim;
  const int channels = context.front().labels->channels;
  for (const auto& c : context) {
    if (c.feat->grid != g || c.feat->dim != dim || c.labels->grid != g ||
        c.labels->channels != channels)
      throw ShapeError("context frames disagree with the target grid");
  }

  LabelMap out;
  out.grid = g;
  out.channels = channels;
  out.val.assign(static_cast<size_t>(g) * g * channels, 0.0f);

  struct Cand {
    double aff;
    const float* label;
  };
  std::vector<Cand> cands;
  cands.reserve(context.size() * static_cast<size_t>(2 * cfg.neighborhood + 1) *
                (2 * cfg.neighborhood + 1));

  for (int qy = 0; qy < g; ++qy)
    for (int qx = 0; qx < g; ++qx) {
      const int q = qy * g + qx;
      const float* qf = target.row(q);
      cands.clear();
      const int y0 = std::max(0, qy - cfg.neighborhood), y1 = std::min(g - 1, qy + cfg.neighborhood);
      const int x0 = std::max(0, qx - cfg.neighborhood), x1 = std::min(g - 1, qx + cfg.neighborhood);
      for (const auto& c : context)
        for (int py = y0; py <= y1; ++py)
          for (int px = x0; px <= x1; ++px) {
            const int p = py * g + px;
            const float* pf = c.feat->row(p);
            double dot = 0;
            for (int d = 0; d < dim; ++d) dot += static_cast<double>(qf[d]) * pf[d];
            cands.push_back({dot / cfg.temperature, c.labels->row(p)});
          }

      const size_t k = std::min<size_t>(static_cast<size_t>(cfg.top_k), cands.size());
      std::stable_sort(cands.begin(), cands.end(),
                       [](const Cand& a, const Cand& b) { return a.aff > b.aff; });
      double max_aff = cands.front().aff;
      double denom = 0;
      std::vector<double> w(k);
      for (size_t i = 0; i < k; ++i) {
        w[i] = std::exp(cands[i].aff - max_aff);
        denom += w[i];
      }
      float* dst = out.row(q);
      for (size_t i = 0; i < k; ++i) {
        const double wi = w[i] / denom;
        for (int ch = 0; ch < channels; ++ch)
          dst[ch] += static_cast<float>(wi * cands[i].label[ch]);
      }
    }
  return out;
}

// ---- patch-grid <-> pixel conversions ---------------------------------------------

// Majority instance id per patch, one-hot rows; ties pick the lowest id.
inline LabelMap idmap_to_labels(const IdMap& seg, int patch_size, int n_classes) {
  if (seg.height != seg.width || seg.height % patch_size != 0)
    throw UsageError("segmentation size must be a square multiple of the patch size");
  const int g = seg.height / patch_size;
  LabelMap out;
  out.grid = g;
  out.channels = n_classes;
  out.val.assign(static_cast<size_t>(g) * g * n_classes, 0.0f);
  std::vector<int> count(static_cast<size_t>(n_classes));
  for (int py = 0; py < g; ++py)
    for (int px = 0; px < g; ++px) {
      std::fill(count.begin(), count.end(), 0);
      for (int y = py * patch_size; y < (py + 1) * patch_size; ++y)
        for (int x = px * patch_size; x < (px + 1) * patch_size; ++x) {
          const int id = seg.at(y, x);
          if (id < 0 || id >= n_classes) throw DataError("segmentation id out of range");
          ++count[static_cast<size_t>(id)];
        }
      int best = 0;
      for (int c = 1; c < n_classes; ++c)
        if (count[static_cast<size_t>(c)] > count[static_cast<size_t>(best)]) best = c;
      out.row(py * g + px)[best] = 1.0f;
    }
  return out;
}

// Bilinear upsample of every channel plane to pixel resolution, then per-pixel
// argmax; ties pick the lowest class.
inline IdMap labels_to_idmap(const LabelMap& lm, int canvas) {
  Image planes;
  planes.channels = lm.channels;
  planes.height = lm.grid;
  planes.width = lm.grid;
  planes.data.resize(static_cast<size_t>(lm.channels) * lm.grid * lm.grid);
  for (int p = 0; p < lm.grid * lm.grid; ++p)
    for (int c = 0; c < lm.channels; ++c)
      planes.at(c, p / lm.grid, p % lm.grid) = lm.row(p)[c];
  Image up = resize_bilinear(planes, canvas, canvas);

  IdMap out;
  out.height = canvas;
  out.width = canvas;
  out.data.assign(static_cast<size_t>(canvas) * canvas, 0);
  for (int y = 0; y < canvas; ++y)
    for (int x = 0; x < canvas; ++x) {
      int best = 0;
      float best_v = up.at(0, y, x);
      for (int c = 1; c < lm.channels; ++c)
        if (up.at(c, y, x) > best_v) {
          best_v = up.at(c, y, x);
          best = c;
        }
      out.at(y, x) = best;
    }
  return out;
}

// ---- metrics ----------------------------------------------------------------------

inline std::vector<uint8_t> class_mask(const IdMap& seg, int cls) {
  std::vector<uint8_t> out(seg.data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = seg.data[i] == cls ? 1 : 0;
  return out;
}

// Region similarity. Two empty masks count as a perfect match.
inline double jaccard(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size()) throw ShapeError("mask sizes differ");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

// Mask pixels with a 4-neighbor outside the mask (image border counts as
// outside) — the erosion-difference boundary.
inline std::vector<uint8_t> boundary_of(const std::vector<uint8_t>& mask, int h, int w) {
  std::vector<uint8_t> out(mask.size(), 0);
  auto inside = [&](int y, int x) {
    return y >= 0 && y < h && x >= 0 && x < w && mask[static_cast<size_t>(y) * w + x] != 0;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask[static_cast<size_t>(y) * w + x] != 0 &&
          (!inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1)))
        out[static_cast<size_t>(y) * w + x] = 1;
  return out;
}

// Squared Euclidean distance transform, lower-envelope-of-parabolas method.
inline void edt_1d(std::vector<double>& f) {
  const int n = static_cast<int>(f.size());
  std::vector<double> d(static_cast<size_t>(n));
  std::vector<int> v(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(n) + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      const int p = v[static_cast<size_t>(k)];
      s = ((f[static_cast<size_t>(q)] + q * q) - (f[static_cast<size_t>(p)] + p * p)) /
          (2.0 * (q - p));
      if (s > z[static_cast<size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<size_t>(k)];
    d[static_cast<size_t>(q)] = (q - p) * static_cast<double>(q - p) + f[static_cast<size_t>(p)];
  }
  f = std::move(d);
}

inline std::vector<double> squared_edt(const std::vector<uint8_t>& set, int h, int w) {
  // Large finite stand-in for "no source"; bigger than any attainable h^2+w^2.
  const double far = 1e12;
  std::vector<double> dist(set.size());
  for (size_t i = 0; i < set.size(); ++i) dist[i] = set[i] ? 0.0 : far;
  std::vector<double> col(static_cast<size_t>(h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col[static_cast<size_t>(y)] = dist[static_cast<size_t>(y) * w + x];
    edt_1d(col);
    for (int y = 0; y < h; ++y) dist[static_cast<size_t>(y) * w + x] = col[static_cast<size_t>(y)];
  }
  std::vector<double> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[static_cast<size_t>(x)] = dist[static_cast<size_t>(y) * w + x];
    edt_1d(row);
    for (int x = 0; x < w; ++x) dist[static_cast<size_t>(y) * w + x] = row[static_cast<size_t>(x)];
  }
  return dist;
}

}  // namespace detail

// Contour quality: precision/recall of boundary pixels matched within `tol`
// (Euclidean). Both boundaries empty scores 1, exactly one empty scores 0.
inline double boundary_f(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt, int h,
                         int w, double tol) {
  if (pred.size() != gt.size() || pred.size() != static_cast<size_t>(h) * w)
    throw ShapeError("mask sizes disagree with the given extent");
  const auto bp = detail::boundary_of(pred, h, w);
  const auto bg = detail::boundary_of(gt, h, w);
  const int64_t np = std::count(bp.begin(), bp.end(), uint8_t{1});
  const int64_t ng = std::count(bg.begin(), bg.end(), uint8_t{1});
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const auto dist_to_gt = detail::squared_edt(bg, h, w);
  const auto dist_to_pred = detail::squared_edt(bp, h, w);
  const double tol2 = tol * tol;
  int64_t hit_p = 0, hit_g = 0;
  for (size_t i = 0; i < bp.size(); ++i) {
    if (bp[i] && dist_to_gt[i] <= tol2) ++hit_p;
    if (bg[i] && dist_to_pred[i] <= tol2) ++hit_g;
  }
  const double precision = static_cast<double>(hit_p) / static_cast<double>(np);
  const double recall = static_cast<double>(hit_g) / static_cast<double>(ng);
  return precision + recall == 0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

// Mean IoU over the foreground classes present in the ground truth.
inline double miou(const IdMap& pred, const IdMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) throw ShapeError("map sizes differ");
  int max_id = 0;
  for (int id : gt.data) max_id = std::max(max_id, id);
  double total = 0;
  int n_classes = 0;
  for (int cls = 1; cls <= max_id; ++cls) {
    int64_t inter = 0, uni = 0, present = 0;
    for (size_t i = 0; i < gt.data.size(); ++i) {
      const bool p = pred.data[i] == cls, g = gt.data[i] == cls;
      inter += p && g;
      uni += p || g;
      present += g;
    }
    if (present == 0) continue;
    total += static_cast<double>(inter) / static_cast<double>(uni);
    ++n_classes;
  }
  return n_classes == 0 ? 1.0 : total / n_classes;
}

// Fraction of keypoints within alpha * ref_size of the truth. ref_size is the
// per-instance normalizer (largest bounding-box side).
inline double pck(const std::vector<std::pair<double, double>>& pred,
                  const std::vector<std::pair<double, double>>& gt,
                  const std::vector<double>& ref_size, double alpha) {
  if (pred.size() != gt.size() || pred.size() != ref_size.size())
    throw ShapeError("keypoint lists differ in length");
  if (pred.empty()) return 1.0;
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double dy = pred[i].first - gt[i].first;
    const double dx = pred[i].second - gt[i].second;
    if (std::sqrt(dy * dy + dx * dx) <= alpha * ref_size[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---- sequence evaluation ----------------------------------------------------------

enum class EvalTask { segmentation, parts, keypoints };

inline EvalTask eval_task_from_string(const std::string& s) {
  if (s == "segmentation") return EvalTask::segmentation;
  if (s == "parts") return EvalTask::parts;
  if (s == "keypoints") return EvalTask::keypoints;
  throw UsageError("unknown eval task: " + s);
}
inline std::string to_string(EvalTask t) {
  switch (t) {
    case EvalTask::segmentation: return "segmentation";
    case EvalTask::parts: return "parts";
    default: return "keypoints";
  }
}

struct SequenceEvalConfig {
  PropagationConfig prop;
  int patch_size = 8;
  double boundary_tol = 0;  // pixels; 0 = 0.008 * image diagonal, at least 1
};

inline void to_json(json& j, const PropagationConfig& c) {
  j = json{{"top_k", c.top_k},
           {"queue_len", c.queue_len},
           {"neighborhood", c.neighborhood},
           {"temperature", c.temperature}};
}

inline void from_json(const json& j, PropagationConfig& c) {
  const PropagationConfig d;
  c.top_k = j.value("top_k", d.top_k);
  c.queue_len = j.value("queue_len", d.queue_len);
  c.neighborhood = j.value("neighborhood", d.neighborhood);
  c.temperature = j.value("temperature", d.temperature);
}

inline void to_json(json& j, const SequenceEvalConfig& c) {
  j = json{{"prop", c.prop}, {"patch_size", c.patch_size}, {"boundary_tol", c.boundary_tol}};
}

inline void from_json(const json& j, SequenceEvalConfig& c) {
  const SequenceEvalConfig d;
  c.prop = j.value("prop", d.prop);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.boundary_tol = j.value("boundary_tol", d.boundary_tol);
}

struct EvalMetrics {
  double j_mean = 0;
  double f_mean = 0;
  double jf_mean = 0;
  double miou = 0;
  double pck_01 = 0;
  double pck_02 = 0;
  int frames = 0;
};

inline void to_json(json& j, const EvalMetrics& m) {
  j = json{{"J", m.j_mean},       {"F", m.f_mean},       {"JF", m.jf_mean}, {"mIoU", m.miou},
           {"PCK@0.1", m.pck_01}, {"PCK@0.2", m.pck_02}, {"frames", m.frames}};
}

inline void from_json(const json& j, EvalMetrics& m) {
  m.j_mean = j.value("J", 0.0);
  m.f_mean = j.value("F", 0.0);
  m.jf_mean = j.value("JF", 0.0);
  m.miou = j.value("mIoU", 0.0);
  m.pck_01 = j.value("PCK@0.1", 0.0);
  m.pck_02 = j.value("PCK@0.2", 0.0);
  m.frames = j.value("frames", 0);
}

namespace detail {

// Keypoint heatmaps on the patch grid: channel k carries sprite k's center,
// bilinearly splatted over the four nearest patch cells.
inline LabelMap keypoint_heatmaps(const GroundTruth& gt, int patch_size) {
  const int g = gt.canvas / patch_size;
  LabelMap lm;
  lm.grid = g;
  lm.channels = static_cast<int>(gt.sprites.size()) + 1;
  lm.val.assign(static_cast<size_t>(g) * g * lm.channels, 0.0f);
  for (size_t k = 0; k < gt.sprites.size(); ++k) {
    auto [cy, cx] = gt.keypoint(static_cast<int>(k), 0);
    const double gy = (cy - (patch_size - 1) / 2.0) / patch_size;
    const double gx = (cx - (patch_size - 1) / 2.0) / patch_size;
    const int y0 = static_cast<int>(std::floor(gy)), x0 = static_cast<int>(std::floor(gx));
    const double fy = gy - y0, fx = gx - x0;
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const int y = y0 + dy, x = x0 + dx;
        if (y < 0 || y >= g || x < 0 || x >= g) continue;
        const double wgt = (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
        lm.row(y * g + x)[k + 1] += static_cast<float>(wgt);
      }
  }
  return lm;
}

// Probability-weighted patch-center average for one heatmap channel.
inline std::optional<std::pair<double, double>> soft_argmax(const LabelMap& lm, int channel,
                                                            int patch_size) {
  double wsum = 0, ysum = 0, xsum = 0;
  for (int py = 0; py < lm.grid; ++py)
    for (int px = 0; px < lm.grid; ++px) {
      const double w = lm.row(py * lm.grid + px)[channel];
      wsum += w;
      ysum += w * (py * patch_size + (patch_size - 1) / 2.0);
      xsum += w * (px * patch_size + (patch_size - 1) / 2.0);
    }
  if (wsum <= 0) return std::nullopt;
  return std::make_pair(ysum / wsum, xsum / wsum);
}

// Largest bounding-box side of the instance, 0 if absent from the frame.
inline int bbox_max_side(const IdMap& seg, int cls) {
  int ymin = seg.height, ymax = -1, xmin = seg.width, xmax = -1;
  for (int y = 0; y < seg.height; ++y)
    for (int x = 0; x < seg.width; ++x)
      if (seg.at(y, x) == cls) {
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
      }
  if (ymax < 0) return 0;
  return std::max(ymax - ymin + 1, xmax - xmin + 1);
}

}  // namespace detail

// Semi-supervised propagation over one clip: ground truth is given on frame 0
// only; every later frame is labeled from frame 0 plus a queue of the most
// recent predictions, then scored against the full ground truth.
inline EvalMetrics evaluate_sequence(const std::function<FeatureMap(int)>& features_at,
                                     const GroundTruth& gt, const SequenceEvalConfig& cfg,
                                     EvalTask task) {
  cfg.prop.validate();
  if (gt.n_frames < 2) throw DataError("evaluation needs at least two frames");
  if (gt.canvas % cfg.patch_size != 0)
    throw UsageError("canvas is not a multiple of the patch size");
  const int n_classes = static_cast<int>(gt.sprites.size()) + 1;
  const double tol = cfg.boundary_tol > 0
                         ? cfg.boundary_tol
                         : std::max(1.0, 0.008 * std::hypot(gt.canvas, gt.canvas));

  FeatureMap f0 = features_at(0);
  LabelMap l0 = task == EvalTask::keypoints
                    ? detail::keypoint_heatmaps(gt, cfg.patch_size)
                    : idmap_to_labels(gt.seg[0], cfg.patch_size, n_classes);

  std::vector<int> objects;  // instances annotated on the first frame
  for (int cls = 1; cls < n_classes; ++cls) {
    auto m = class_mask(gt.seg[0], cls);
    if (std::count(m.begin(), m.end(), uint8_t{1}) > 0) objects.push_back(cls);
  }

  std::deque<std::pair<FeatureMap, LabelMap>> queue;
  EvalMetrics out;
  double j_total = 0, f_total = 0, miou_total = 0;
  std::vector<std::pair<double, double>> kp_pred, kp_gt;
  std::vector<double> kp_ref;

  for (int t = 1; t < gt.n_frames; ++t) {
    FeatureMap ft = features_at(t);
    std::vector<ContextFrame> context{{&f0, &l0}};
    for (const auto& q : queue) context.push_back({&q.first, &q.second});
    LabelMap lt = propagate_labels(context, ft, cfg.prop);

    const auto& seg_t = gt.seg[static_cast<size_t>(t)];
    if (task == EvalTask::keypoints) {
      for (size_t k = 0; k < gt.sprites.size(); ++k) {
        const int side = detail::bbox_max_side(seg_t, gt.sprites[k].id);
        if (side == 0) continue;  // instance not visible this frame
        auto pred = detail::soft_argmax(lt, static_cast<int>(k) + 1, cfg.patch_size);
        if (!pred) continue;
        kp_pred.push_back(*pred);
        kp_gt.push_back(gt.keypoint(static_cast<int>(k), t));
        kp_ref.push_back(static_cast<double>(side));
      }
    } else {
      IdMap pred = labels_to_idmap(lt, gt.canvas);
      if (task == EvalTask::segmentation) {
        double j = 0, f = 0;
        for (int cls : objects) {
          const auto pm = class_mask(pred, cls);
          const auto gm = class_mask(seg_t, cls);
          j += jaccard(pm, gm);
          f += boundary_f(pm, gm, gt.canvas, gt.canvas, tol);
        }
        if (!objects.empty()) {
          j_total += j / static_cast<double>(objects.size());
          f_total += f / static_cast<double>(objects.size());
        }
      } else {
        miou_total += miou(pred, seg_t);
      }
    }

    queue.emplace_back(std::move(ft), std::move(lt));
    if (static_cast<int>(queue.size()) > cfg.prop.queue_len) queue.pop_front();
    ++out.frames;
  }

  const double nf = std::max(1, out.frames);
  if (task == EvalTask::segmentation) {
    out.j_mean = j_total / nf;
    out.f_mean = f_total / nf;
    out.jf_mean = 0.5 * (out.j_mean + out.f_mean);
  } else if (task == EvalTask::parts) {
    out.miou = miou_total / nf;
  } else {
    out.pck_01 = pck(kp_pred, kp_gt, kp_ref, 0.1);
    out.pck_02 = pck(kp_pred, kp_gt, kp_ref, 0.2);
  }
  return out;
}

}  // namespace siammae
