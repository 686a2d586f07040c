#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "siammae/errors.hpp"
#include "siammae/image.hpp"
#include "siammae/rng.hpp"

namespace siammae {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- core types -------------------------------------------------------------

struct VideoClip {
  std::vector<Image> frames;
  int fps = 30;

  int length() const { return static_cast<int>(frames.size()); }
};

struct FramePairSample {
  Image f1, f2;
  int gap = 1;
};

struct AugmentParams {
  double crop_scale_lo = 0.5;   // area fraction range of random resized crop
  double crop_scale_hi = 1.0;
  double hflip_prob = 0.5;
  bool color_jitter = false;    // brightness/contrast/saturation +-0.4
  bool independent = false;     // ablation: per-frame instead of shared draws
  int out_size = 64;
};

inline void to_json(nlohmann::json& j, const AugmentParams& a) {
  j = {{"crop_scale_lo", a.crop_scale_lo}, {"crop_scale_hi", a.crop_scale_hi},
       {"hflip_prob", a.hflip_prob},       {"color_jitter", a.color_jitter},
       {"independent", a.independent},     {"out_size", a.out_size}};
}
inline void from_json(const nlohmann::json& j, AugmentParams& a) {
  a.crop_scale_lo = j.value("crop_scale_lo", a.crop_scale_lo);
  a.crop_scale_hi = j.value("crop_scale_hi", a.crop_scale_hi);
  a.hflip_prob = j.value("hflip_prob", a.hflip_prob);
  a.color_jitter = j.value("color_jitter", a.color_jitter);
  a.independent = j.value("independent", a.independent);
  a.out_size = j.value("out_size", a.out_size);
}

// ---- synthetic scenes ---------------------------------------------------------

enum class SpriteShape { square, disc, diamond };

inline std::string to_string(SpriteShape s) {
  switch (s) {
    case SpriteShape::square: return "square";
    case SpriteShape::disc: return "disc";
    default: return "diamond";
  }
}
inline SpriteShape sprite_shape_from_string(const std::string& s) {
  if (s == "square") return SpriteShape::square;
  if (s == "disc") return SpriteShape::disc;
  if (s == "diamond") return SpriteShape::diamond;
  throw DataError("unknown sprite shape: " + s);
}

struct SyntheticSceneSpec {
  int canvas = 64;
  int n_frames = 32;
  int fps = 30;
  int min_sprites = 2, max_sprites = 4;
  int min_size = 8, max_size = 16;
  int max_speed = 2;        // per-axis speed in units of `quantum` px/frame
  int quantum = 1;          // positions/sizes/speeds snap to this pixel grid
  bool wrap = true;         // torus borders; false clips sprites at the edge
  bool confine = false;     // keep whole trajectories inside the canvas
  bool allow_overlap = true;
  bool squares_only = false;  // restrict shapes so sprites tile the quantum grid
  int background_cells = 8;

  void validate() const {
    if (canvas <= 0 || n_frames < 2 || min_sprites < 1 || max_sprites < min_sprites ||
        min_size < 1 || max_size < min_size || max_speed < 0 || quantum < 1)
      throw DataError("invalid synthetic scene spec");
    if (max_size > canvas) throw DataError("sprite larger than canvas");
  }
};

struct SpriteTrack {
  int id = 0;  // 1-based; 0 is background
  SpriteShape shape = SpriteShape::square;
  int size = 8;
  int vy = 0, vx = 0;        // px/frame
  int start_y = 0, start_x = 0;  // top-left at frame 0, unwrapped

  std::pair<int, int> top_left(int t) const { return {start_y + t * vy, start_x + t * vx}; }
  // sprite center in unwrapped coordinates
  std::pair<double, double> center(int t) const {
    return {start_y + t * vy + (size - 1) / 2.0, start_x + t * vx + (size - 1) / 2.0};
  }
};

struct GroundTruth {
  int canvas = 0;
  int n_frames = 0;
  bool wrap = true;
  std::vector<IdMap> seg;            // per-frame instance ids
  std::vector<SpriteTrack> sprites;  // ordered by id

  double wrap_coord(double v) const {
    if (!wrap) return v;
    double m = std::fmod(v, static_cast<double>(canvas));
    return m < 0 ? m + canvas : m;
  }

  // sprite center keypoint in canvas coordinates, (y, x)
  std::pair<double, double> keypoint(int sprite_idx, int t) const {
    auto [cy, cx] = sprites[static_cast<size_t>(sprite_idx)].center(t);
    return {wrap_coord(cy), wrap_coord(cx)};
  }
};

inline bool sprite_covers(SpriteShape shape, int size, int sy, int sx) {
  const double c = size / 2.0;
  const double dy = sy + 0.5 - c, dx = sx + 0.5 - c;
  switch (shape) {
    case SpriteShape::square: return true;
    case SpriteShape::disc: return dy * dy + dx * dx <= c * c;
    default: return std::abs(dy) + std::abs(dx) <= c;
  }
}

// Exact forward correspondence: where does pixel (y,x) of frame t1 land in
// frame t2? nullopt for background pixels, pixels leaving the canvas, or
// targets occluded by another sprite.
inline std::optional<std::pair<int, int>> correspond(const GroundTruth& gt, int t1, int t2,
                                                     int y, int x) {
  const int id = gt.seg[static_cast<size_t>(t1)].at(y, x);
  if (id == 0) return std::nullopt;
  const auto& s = gt.sprites[static_cast<size_t>(id - 1)];
  int ty = y + (t2 - t1) * s.vy;
  int tx = x + (t2 - t1) * s.vx;
  if (gt.wrap) {
    ty = ((ty % gt.canvas) + gt.canvas) % gt.canvas;
    tx = ((tx % gt.canvas) + gt.canvas) % gt.canvas;
  } else if (ty < 0 || tx < 0 || ty >= gt.canvas || tx >= gt.canvas) {
    return std::nullopt;
  }
  if (gt.seg[static_cast<size_t>(t2)].at(ty, tx) != id) return std::nullopt;  // occluded
  return std::make_pair(ty, tx);
}

namespace detail {

struct SpriteLook {
  float r, g, b;
  int checker = 3;  // sprite-local texture cell, moves with the sprite
};

inline void paint_sprite(Image& frame, IdMap& seg, const SpriteTrack& s, const SpriteLook& look,
                         int t, int canvas, bool wrap) {
  const auto [ty, tx] = s.top_left(t);
  for (int sy = 0; sy < s.size; ++sy) {
    for (int sx = 0; sx < s.size; ++sx) {
      if (!sprite_covers(s.shape, s.size, sy, sx)) continue;
      int y = ty + sy, x = tx + sx;
      if (wrap) {
        y = ((y % canvas) + canvas) % canvas;
        x = ((x % canvas) + canvas) % canvas;
      } else if (y < 0 || x < 0 || y >= canvas || x >= canvas) {
        continue;
      }
      const bool alt = ((sy / look.checker) + (sx / look.checker)) % 2 == 1;
      const float dim = alt ? 0.55f : 1.0f;
      frame.at(0, y, x) = look.r * dim;
      frame.at(1, y, x) = look.g * dim;
      frame.at(2, y, x) = look.b * dim;
      seg.at(y, x) = s.id;
    }
  }
}

inline bool swept_boxes_overlap(const SpriteTrack& a, const SpriteTrack& b, int n_frames) {
  auto box = [n_frames](const SpriteTrack& s) {
    const auto [y0, x0] = s.top_left(0);
    const auto [y1, x1] = s.top_left(n_frames - 1);
    return std::array<int, 4>{std::min(y0, y1), std::min(x0, x1), std::max(y0, y1) + s.size,
                              std::max(x0, x1) + s.size};
  };
  const auto A = box(a), B = box(b);
  return A[0] < B[2] && B[0] < A[2] && A[1] < B[3] && B[1] < A[3];
}

}  // namespace detail

inline std::pair<VideoClip, GroundTruth> generate_synthetic_clip(const SyntheticSceneSpec& spec,
                                                                 Rng& rng) {
  spec.validate();
  const int cv = spec.canvas, L = spec.n_frames, q = spec.quantum;

  // static blocky background texture
  const int cell = std::max(1, cv / spec.background_cells);
  const int cells = (cv + cell - 1) / cell;
  std::vector<float> bg_colors(static_cast<size_t>(cells) * cells * 3);
  for (auto& v : bg_colors) v = static_cast<float>(rng.uniform(0.05, 0.95));
  Image background(3, cv, cv);
  for (int y = 0; y < cv; ++y)
    for (int x = 0; x < cv; ++x)
      for (int c = 0; c < 3; ++c)
        background.at(c, y, x) =
            bg_colors[(static_cast<size_t>(y / cell) * cells + x / cell) * 3 + c];

  GroundTruth gt;
  gt.canvas = cv;
  gt.n_frames = L;
  gt.wrap = spec.wrap;

  const int n_sprites = static_cast<int>(rng.uniform_int(spec.min_sprites, spec.max_sprites));
  std::vector<detail::SpriteLook> looks;
  for (int i = 0; i < n_sprites; ++i) {
    SpriteTrack s;
    s.id = i + 1;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      s.shape = spec.squares_only ? SpriteShape::square
                                  : static_cast<SpriteShape>(rng.uniform_int(3));
      int size = static_cast<int>(rng.uniform_int(spec.min_size, spec.max_size));
      s.size = std::max(q, (size / q) * q);
      do {
        s.vy = q * static_cast<int>(rng.uniform_int(-spec.max_speed, spec.max_speed));
        s.vx = q * static_cast<int>(rng.uniform_int(-spec.max_speed, spec.max_speed));
        // max_speed 0 legitimately yields a static scene
      } while (spec.max_speed > 0 && s.vy == 0 && s.vx == 0);
      auto sample_start = [&](int v) -> std::optional<int> {
        int lo = 0, hi = cv - s.size;
        if (spec.confine) {
          const int total = v * (L - 1);
          lo = std::max(lo, -total);
          hi = std::min(hi, cv - s.size - total);
        }
        if (hi < lo) return std::nullopt;
        const int qlo = (lo + q - 1) / q, qhi = hi / q;
        if (qhi < qlo) return std::nullopt;
        return q * static_cast<int>(rng.uniform_int(qlo, qhi));
      };
      const auto sy = sample_start(s.vy), sx = sample_start(s.vx);
      if (!sy || !sx) continue;
      s.start_y = *sy;
      s.start_x = *sx;
      if (!spec.allow_overlap) {
        bool clash = false;
        for (const auto& other : gt.sprites)
          clash = clash || detail::swept_boxes_overlap(s, other, L);
        if (clash) continue;
      }
      placed = true;
    }
    if (!placed) throw DataError("could not place sprite " + std::to_string(s.id) +
                                 " under the scene constraints");
    gt.sprites.push_back(s);
    detail::SpriteLook look;
    look.r = static_cast<float>(rng.uniform(0.25, 1.0));
    look.g = static_cast<float>(rng.uniform(0.25, 1.0));
    look.b = static_cast<float>(rng.uniform(0.25, 1.0));
    look.checker = static_cast<int>(rng.uniform_int(2, 4));
    looks.push_back(look);
  }

  VideoClip clip;
  clip.fps = spec.fps;
  for (int t = 0; t < L; ++t) {
    Image frame = background;
    IdMap seg(cv, cv, 0);
    for (int i = 0; i < n_sprites; ++i)
      detail::paint_sprite(frame, seg, gt.sprites[static_cast<size_t>(i)],
                           looks[static_cast<size_t>(i)], t, cv, spec.wrap);
    clip.frames.push_back(std::move(frame));
    gt.seg.push_back(std::move(seg));
  }
  return {std::move(clip), std::move(gt)};
}

// ---- frame-pair sampling ---------------------------------------------------------

inline FramePairSample sample_frame_pair(const VideoClip& clip, int gap_lo, int gap_hi,
                                         Rng& rng) {
  if (gap_lo < 1 || gap_hi < gap_lo) throw UsageError("invalid frame gap range");
  const int L = clip.length();
  if (L < gap_lo + 1)
    throw DataError("clip of length " + std::to_string(L) + " shorter than minimum gap " +
                    std::to_string(gap_lo) + " + 1");
  const int hi = std::min(gap_hi, L - 1);
  const int gap = static_cast<int>(rng.uniform_int(gap_lo, hi));
  const int start = static_cast<int>(rng.uniform_int(0, L - 1 - gap));
  return {clip.frames[static_cast<size_t>(start)], clip.frames[static_cast<size_t>(start + gap)],
          gap};
}

namespace detail {

struct SpatialDraw {
  int y0, x0, h, w;
  bool flip;
};

inline SpatialDraw draw_crop(const Image& img, const AugmentParams& p, Rng& rng) {
  // torchvision-style random resized crop: area fraction + log-uniform aspect
  SpatialDraw d{0, 0, img.height, img.width, false};
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area = img.height * static_cast<double>(img.width) *
                        rng.uniform(p.crop_scale_lo, p.crop_scale_hi);
    const double aspect = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const int w = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(area / aspect)));
    if (w < 1 || h < 1 || w > img.width || h > img.height) continue;
    d.h = h;
    d.w = w;
    d.y0 = static_cast<int>(rng.uniform_int(0, img.height - h));
    d.x0 = static_cast<int>(rng.uniform_int(0, img.width - w));
    break;
  }
  d.flip = rng.uniform() < p.hflip_prob;
  return d;
}

struct JitterDraw {
  float brightness, contrast, saturation;
};

inline JitterDraw draw_jitter(Rng& rng) {
  return {static_cast<float>(rng.uniform(0.6, 1.4)), static_cast<float>(rng.uniform(0.6, 1.4)),
          static_cast<float>(rng.uniform(0.6, 1.4))};
}

inline Image apply_spatial(const Image& img, const SpatialDraw& d, int out_size) {
  Image out = resize_bilinear(crop(img, d.y0, d.x0, d.h, d.w), out_size, out_size);
  return d.flip ? hflip(out) : out;
}

inline Image apply_jitter(const Image& img, const JitterDraw& j) {
  Image out = img;
  // brightness
  for (auto& v : out.data) v *= j.brightness;
  // contrast around the per-image gray mean
  double mean = 0;
  for (float v : out.data) mean += v;
  mean /= static_cast<double>(out.data.size());
  for (auto& v : out.data) v = static_cast<float>(mean + (v - mean) * j.contrast);
  // saturation toward per-pixel luma
  if (out.channels == 3) {
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        const float gray = 0.299f * out.at(0, y, x) + 0.587f * out.at(1, y, x) +
                           0.114f * out.at(2, y, x);
        for (int c = 0; c < 3; ++c)
          out.at(c, y, x) = gray + (out.at(c, y, x) - gray) * j.saturation;
      }
  }
  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace detail

// One spatial transform (and one optional photometric draw) shared by both
// frames, preserving correspondence; `independent` redraws per frame.
inline FramePairSample augment_pair(const FramePairSample& pair, const AugmentParams& params,
                                    Rng& rng) {
  FramePairSample out;
  out.gap = pair.gap;
  auto d1 = detail::draw_crop(pair.f1, params, rng);
  auto d2 = params.independent ? detail::draw_crop(pair.f2, params, rng) : d1;
  out.f1 = detail::apply_spatial(pair.f1, d1, params.out_size);
  out.f2 = detail::apply_spatial(pair.f2, d2, params.out_size);
  if (params.color_jitter) {
    auto j1 = detail::draw_jitter(rng);
    auto j2 = params.independent ? detail::draw_jitter(rng) : j1;
    out.f1 = detail::apply_jitter(out.f1, j1);
    out.f2 = detail::apply_jitter(out.f2, j2);
  }
  return out;
}

// Epoch plan under repeated sampling: each clip index appears `factor` times,
// shuffled, then chunked into batches (final partial batch kept).
inline std::vector<std::vector<int>> repeated_sampling_batches(int n_clips, int factor,
                                                               int batch_size, Rng& rng) {
  if (factor < 1 || batch_size < 1) throw UsageError("repeated sampling needs factor, batch >= 1");
  std::vector<int> pool;
  pool.reserve(static_cast<size_t>(n_clips) * factor);
  for (int i = 0; i < n_clips; ++i)
    for (int f = 0; f < factor; ++f) pool.push_back(i);
  rng.shuffle(pool);
  std::vector<std::vector<int>> batches;
  for (size_t off = 0; off < pool.size(); off += static_cast<size_t>(batch_size))
    batches.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(off),
                         pool.begin() + static_cast<std::ptrdiff_t>(
                                            std::min(off + batch_size, pool.size())));
  return batches;
}

// ---- disk layout -------------------------------------------------------------------
//
// dataset_root/index.json            {"clips": ["clip_0000", ...]}
// dataset_root/clip_0000/frame_00000.ppm
// dataset_root/clip_0000/seg_00000.pgm
// dataset_root/clip_0000/gt.json     sprite tracks; seg maps live in the images

inline void to_json(json& j, const SyntheticSceneSpec& s) {
  j = json{{"canvas", s.canvas},           {"n_frames", s.n_frames},
           {"fps", s.fps},                 {"min_sprites", s.min_sprites},
           {"max_sprites", s.max_sprites}, {"min_size", s.min_size},
           {"max_size", s.max_size},       {"max_speed", s.max_speed},
           {"quantum", s.quantum},         {"wrap", s.wrap},
           {"confine", s.confine},         {"allow_overlap", s.allow_overlap},
           {"squares_only", s.squares_only},
           {"background_cells", s.background_cells}};
}

inline void from_json(const json& j, SyntheticSceneSpec& s) {
  SyntheticSceneSpec d;
  s.canvas = j.value("canvas", d.canvas);
  s.n_frames = j.value("n_frames", d.n_frames);
  s.fps = j.value("fps", d.fps);
  s.min_sprites = j.value("min_sprites", d.min_sprites);
  s.max_sprites = j.value("max_sprites", d.max_sprites);
  s.min_size = j.value("min_size", d.min_size);
  s.max_size = j.value("max_size", d.max_size);
  s.max_speed = j.value("max_speed", d.max_speed);
  s.quantum = j.value("quantum", d.quantum);
  s.wrap = j.value("wrap", d.wrap);
  s.confine = j.value("confine", d.confine);
  s.allow_overlap = j.value("allow_overlap", d.allow_overlap);
  s.squares_only = j.value("squares_only", d.squares_only);
  s.background_cells = j.value("background_cells", d.background_cells);
}

inline std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05d.ppm", t);
  return buf;
}
inline std::string seg_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seg_%05d.pgm", t);
  return buf;
}

inline void save_clip(const std::string& clip_dir, const VideoClip& clip,
                      const GroundTruth& gt) {
  fs::create_directories(clip_dir);
  for (int t = 0; t < clip.length(); ++t) {
    write_image(clip.frames[static_cast<size_t>(t)], clip_dir + "/" + frame_name(t));
    write_id_map(gt.seg[static_cast<size_t>(t)], clip_dir + "/" + seg_name(t));
  }
  json j;
  j["canvas"] = gt.canvas;
  j["n_frames"] = gt.n_frames;
  j["wrap"] = gt.wrap;
  j["fps"] = clip.fps;
  j["sprites"] = json::array();
  for (const auto& s : gt.sprites)
    j["sprites"].push_back(json{{"id", s.id},
                                {"shape", to_string(s.shape)},
                                {"size", s.size},
                                {"vy", s.vy},
                                {"vx", s.vx},
                                {"start_y", s.start_y},
                                {"start_x", s.start_x}});
  std::ofstream out(clip_dir + "/gt.json");
  out << j.dump(2) << "\n";
}

inline VideoClip load_clip_from_frames_dir(const std::string& path) {
  if (!fs::is_directory(path)) throw DataError("not a directory: " + path);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(path)) {
    const auto name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0) names.push_back(e.path().string());
  }
  if (names.empty()) throw DataError("no frame images in " + path);
  std::sort(names.begin(), names.end());
  VideoClip clip;
  for (const auto& n : names) {
    Image img = read_image(n);
    if (!clip.frames.empty() && !img.same_size(clip.frames.front()))
      throw DataError("frame size mismatch at " + n);
    clip.frames.push_back(std::move(img));
  }
  return clip;
}

inline GroundTruth load_gt(const std::string& clip_dir) {
  std::ifstream in(clip_dir + "/gt.json");
  if (!in) throw DataError("missing ground truth file in " + clip_dir);
  json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw DataError("unparseable ground truth in " + clip_dir);
  GroundTruth gt;
  gt.canvas = j.at("canvas").get<int>();
  gt.n_frames = j.at("n_frames").get<int>();
  gt.wrap = j.at("wrap").get<bool>();
  for (const auto& sj : j.at("sprites")) {
    SpriteTrack s;
    s.id = sj.at("id").get<int>();
    s.shape = sprite_shape_from_string(sj.at("shape").get<std::string>());
    s.size = sj.at("size").get<int>();
    s.vy = sj.at("vy").get<int>();
    s.vx = sj.at("vx").get<int>();
    s.start_y = sj.at("start_y").get<int>();
    s.start_x = sj.at("start_x").get<int>();
    gt.sprites.push_back(s);
  }
  for (int t = 0; t < gt.n_frames; ++t) gt.seg.push_back(read_id_map(clip_dir + "/" + seg_name(t)));
  return gt;
}

inline void write_dataset_index(const std::string& root, const std::vector<std::string>& clips) {
  json j;
  j["clips"] = clips;
  std::ofstream out(root + "/index.json");
  if (!out) throw DataError("cannot write index in " + root);
  out << j.dump(2) << "\n";
}

inline std::vector<std::string> list_dataset_clips(const std::string& root) {
  std::ifstream in(root + "/index.json");
  if (!in) throw DataError("missing dataset index in " + root);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("unparseable dataset index in " + root);
  std::vector<std::string> out;
  for (const auto& c : j.at("clips")) out.push_back(root + "/" + c.get<std::string>());
  return out;
}

// Generates and writes a full dataset; returns the clip directories.
inline std::vector<std::string> generate_dataset(const std::string& root,
                                                 const SyntheticSceneSpec& spec, int n_clips,
                                                 uint64_t seed) {
  fs::create_directories(root);
  std::vector<std::string> names;
  Rng rng(seed);
  for (int i = 0; i < n_clips; ++i) {
    Rng clip_rng = rng.split(static_cast<uint64_t>(i));
    auto [clip, gt] = generate_synthetic_clip(spec, clip_rng);
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%04d", i);
    save_clip(root + "/" + buf, clip, gt);
    names.emplace_back(buf);
  }
  write_dataset_index(root, names);
  json sj = spec;
  sj["n_clips"] = n_clips;
  sj["seed"] = seed;
  std::ofstream out(root + "/spec.json");
  out << sj.dump(2) << "\n";
  return list_dataset_clips(root);
}

}  // namespace siammae
