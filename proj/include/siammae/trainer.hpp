#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "siammae/data.hpp"
#include "siammae/errors.hpp"
#include "siammae/model.hpp"
#include "siammae/optim.hpp"

namespace siammae {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in native little-endian layout");

// ---- training configuration ----------------------------------------------------

struct TrainConfig {
  double base_lr = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double grad_clip = 0.0;
  int warmup_epochs = 40;
  int total_epochs = 400;
  int batch_size = 16;
  int repeated_sampling = 2;
  int gap_lo = 4;
  int gap_hi = 48;
  int checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  uint64_t seed = 0;
  MaskSpec mask = MaskSpec::asymmetric(0.95);
  AugmentParams aug;

  void validate() const {
    if (total_epochs < 1 || batch_size < 1 || repeated_sampling < 1)
      throw UsageError("epochs, batch size and repeated-sampling factor must be positive");
    if (warmup_epochs < 0 || warmup_epochs > total_epochs)
      throw UsageError("warmup epochs must lie in [0, total epochs]");
    mask.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"base_lr", c.base_lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"weight_decay", c.weight_decay},
       {"grad_clip", c.grad_clip},
       {"warmup_epochs", c.warmup_epochs},
       {"total_epochs", c.total_epochs},
       {"batch_size", c.batch_size},
       {"repeated_sampling", c.repeated_sampling},
       {"gap_lo", c.gap_lo},
       {"gap_hi", c.gap_hi},
       {"checkpoint_every", c.checkpoint_every},
       {"seed", c.seed},
       {"mask", c.mask},
       {"aug", c.aug}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.base_lr = j.value("base_lr", c.base_lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.total_epochs = j.value("total_epochs", c.total_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.repeated_sampling = j.value("repeated_sampling", c.repeated_sampling);
  c.gap_lo = j.value("gap_lo", c.gap_lo);
  c.gap_hi = j.value("gap_hi", c.gap_hi);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mask")) j.at("mask").get_to(c.mask);
  if (j.contains("aug")) j.at("aug").get_to(c.aug);
}

inline AdamWConfig adamw_config(const TrainConfig& c) {
  return AdamWConfig{c.beta1, c.beta2, c.eps, c.weight_decay, c.grad_clip};
}

// ---- checkpoint blob ------------------------------------------------------------

inline uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return ~crc;
}

struct TrainState {
  SiamMaeModel<float> model;
  AdamW<float> optim;
  Rng rng;
  int64_t global_step = 0;
};

inline TrainState make_train_state(const ModelConfig& mcfg, const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  TrainState st;
  st.rng = Rng(tcfg.seed);
  st.model = SiamMaeModel<float>(mcfg, st.rng);
  auto params = st.model.params();
  st.optim = AdamW<float>(params, adamw_config(tcfg));
  return st;
}

namespace detail {

inline void append_floats(std::vector<float>& blob, const std::vector<float>& src,
                          const std::string& name, const Shape& shape, nlohmann::json& tensors) {
  tensors.push_back({{"name", name},
                     {"shape", shape},
                     {"offset", blob.size() * sizeof(float)},
                     {"bytes", src.size() * sizeof(float)}});
  blob.insert(blob.end(), src.begin(), src.end());
}

inline void write_binary_file(const fs::path& path, const void* data, size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw DataError("short write: " + path.string());
}

inline std::vector<uint8_t> read_binary_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open: " + path.string());
  const auto bytes = static_cast<size_t>(in.tellg());
  std::vector<uint8_t> buf(bytes);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("short read: " + path.string());
  return buf;
}

}  // namespace detail

inline void save_checkpoint(const fs::path& dir, const TrainState& st, const TrainConfig& tcfg) {
  fs::create_directories(dir);
  auto params = st.model.params();
  const auto& slots = st.optim.slots();
  if (slots.size() != params.size())
    throw DataError("optimizer state does not match model parameters");

  std::vector<float> blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : params)
    detail::append_floats(blob, p.tensor.value(), p.name, p.tensor.shape(), tensors);
  for (size_t i = 0; i < params.size(); ++i) {
    detail::append_floats(blob, slots[i].m, "adam.m." + params[i].name,
                          params[i].tensor.shape(), tensors);
    detail::append_floats(blob, slots[i].v, "adam.v." + params[i].name,
                          params[i].tensor.shape(), tensors);
  }
  const size_t bytes = blob.size() * sizeof(float);
  const uint32_t crc = crc32(reinterpret_cast<const uint8_t*>(blob.data()), bytes);

  const auto rng_state = st.rng.state();
  nlohmann::json rng = nlohmann::json::array();
  for (uint64_t w : rng_state) rng.push_back(std::to_string(w));

  nlohmann::json manifest = {
      {"format", 1},
      {"step", st.global_step},
      {"adam_steps", st.optim.step_count()},
      {"rng", rng},
      {"model", st.model.cfg},
      {"train", tcfg},
      {"tensors", tensors},
      {"weights", {{"file", "weights.bin"}, {"bytes", bytes}, {"crc32", crc}}}};

  detail::write_binary_file(dir / "weights.bin", blob.data(), bytes);
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw DataError("cannot open for writing: " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << "\n";
}

struct Checkpoint {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  int64_t step = 0;
  int64_t adam_steps = 0;
  std::array<uint64_t, 4> rng_state{};
  std::map<std::string, std::vector<float>> tensors;
  std::map<std::string, Shape> shapes;
};

inline Checkpoint read_checkpoint(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw DataError("cannot open: " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }

  Checkpoint ck;
  try {
    manifest.at("model").get_to(ck.model_cfg);
    manifest.at("train").get_to(ck.train_cfg);
    ck.step = manifest.at("step").get<int64_t>();
    ck.adam_steps = manifest.at("adam_steps").get<int64_t>();
    const auto& rng = manifest.at("rng");
    if (rng.size() != ck.rng_state.size()) throw DataError("bad rng state length");
    for (size_t i = 0; i < ck.rng_state.size(); ++i)
      ck.rng_state[i] = std::stoull(rng[i].get<std::string>());

    const auto blob = detail::read_binary_file(dir / manifest.at("weights").at("file")
                                                         .get<std::string>());
    const auto expect_bytes = manifest.at("weights").at("bytes").get<size_t>();
    const auto expect_crc = manifest.at("weights").at("crc32").get<uint32_t>();
    if (blob.size() != expect_bytes)
      throw DataError("checkpoint blob has wrong size");
    if (crc32(blob.data(), blob.size()) != expect_crc)
      throw DataError("checkpoint checksum mismatch; file is corrupt");

    for (const auto& t : manifest.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto offset = t.at("offset").get<size_t>();
      const auto bytes = t.at("bytes").get<size_t>();
      if (offset + bytes > blob.size() || bytes % sizeof(float) != 0)
        throw DataError("tensor record out of bounds: " + name);
      std::vector<float> vals(bytes / sizeof(float));
      std::memcpy(vals.data(), blob.data() + offset, bytes);
      ck.tensors.emplace(name, std::move(vals));
      ck.shapes.emplace(name, t.at("shape").get<Shape>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  return ck;
}

inline TrainState restore_train_state(const Checkpoint& ck) {
  TrainState st = make_train_state(ck.model_cfg, ck.train_cfg);
  auto params = st.model.params();
  auto& slots = st.optim.slots();
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto fetch = [&](const std::string& name) -> const std::vector<float>& {
      auto it = ck.tensors.find(name);
      if (it == ck.tensors.end()) throw DataError("checkpoint is missing tensor: " + name);
      if (it->second.size() != p.tensor.value().size())
        throw DataError("checkpoint tensor has wrong size: " + name);
      return it->second;
    };
    p.tensor.raw_value() = fetch(p.name);
    slots[i].m = fetch("adam.m." + p.name);
    slots[i].v = fetch("adam.v." + p.name);
  }
  st.optim.set_step_count(ck.adam_steps);
  st.rng.set_state(ck.rng_state);
  st.global_step = ck.step;
  return st;
}

// ---- training loop --------------------------------------------------------------

struct LossRow {
  int64_t step = 0;
  double lr = 0;
  double loss = 0;
};

struct TrainResult {
  std::vector<LossRow> log;
  fs::path final_checkpoint;
};

inline int64_t steps_per_epoch(int n_clips, const TrainConfig& cfg) {
  const int64_t pool = static_cast<int64_t>(n_clips) * cfg.repeated_sampling;
  return (pool + cfg.batch_size - 1) / cfg.batch_size;
}

inline std::string format_loss_row(const LossRow& r) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g", static_cast<long long>(r.step), r.lr,
                r.loss);
  return buf;
}

// Runs (or resumes) pretraining over the clip set. One optimizer step per
// batch; per-sample work is ordered deterministically so a fixed seed yields a
// bit-identical loss log and checkpoint. Checkpoints land on epoch boundaries,
// which is what makes resumed trajectories exact.
inline TrainResult train(TrainState& st, const TrainConfig& cfg,
                         const std::vector<VideoClip>& clips, const fs::path& out_dir) {
  cfg.validate();
  if (clips.empty()) throw DataError("no training clips");
  const int n_clips = static_cast<int>(clips.size());
  const int64_t spe = steps_per_epoch(n_clips, cfg);
  const int64_t total_steps = spe * cfg.total_epochs;
  const int64_t warmup_steps = spe * cfg.warmup_epochs;
  if (st.global_step % spe != 0)
    throw DataError("training can only resume from an epoch boundary");

  AugmentParams aug = cfg.aug;
  aug.out_size = st.model.cfg.patch.image_size;

  fs::create_directories(out_dir);
  const auto csv_path = out_dir / "loss.csv";
  std::ofstream csv;
  if (st.global_step == 0) {
    csv.open(csv_path, std::ios::trunc);
    csv << "step,lr,loss\n";
  } else {
    csv.open(csv_path, std::ios::app);
  }
  if (!csv) throw DataError("cannot open for writing: " + csv_path.string());

  auto params = st.model.params();
  TrainResult result;
  for (int64_t epoch = st.global_step / spe; epoch < cfg.total_epochs; ++epoch) {
    const auto plan = repeated_sampling_batches(n_clips, cfg.repeated_sampling,
                                                cfg.batch_size, st.rng);
    for (const auto& batch : plan) {
      for (auto& p : params) p.tensor.zero_grad();
      double batch_loss = 0;
      for (int idx : batch) {
        auto pair = sample_frame_pair(clips[static_cast<size_t>(idx)], cfg.gap_lo, cfg.gap_hi,
                                      st.rng);
        pair = augment_pair(pair, aug, st.rng);
        auto out = st.model.forward_train(pair.f1, pair.f2, cfg.mask, st.rng);
        const double item = out.loss.item();
        if (!std::isfinite(item)) throw NumericError("training loss is not finite");
        backward(out.loss);
        batch_loss += item;
      }
      const float inv = 1.0f / static_cast<float>(batch.size());
      for (auto& p : params)
        for (auto& g : p.tensor.node()->grad) g *= inv;
      batch_loss /= static_cast<double>(batch.size());

      const double lr = lr_at(st.global_step, total_steps, warmup_steps, cfg.base_lr);
      st.optim.step(params, lr);
      LossRow row{st.global_step, lr, batch_loss};
      csv << format_loss_row(row) << "\n";
      result.log.push_back(row);
      ++st.global_step;
    }
    csv.flush();
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.total_epochs) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%05lld",
                    static_cast<long long>(epoch + 1));
      save_checkpoint(out_dir / name, st, cfg);
    }
  }
  result.final_checkpoint = out_dir / "checkpoint_final";
  save_checkpoint(result.final_checkpoint, st, cfg);
  return result;
}

}  // namespace siammae
