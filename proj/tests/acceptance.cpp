// Acceptance harness: exercises every shipped guarantee end to end and prints
// exactly one [PASS]/[FAIL] line per criterion. Runs standalone (no test
// framework) so the output doubles as a release checklist. Optional arguments
// select a subset of criteria by number, e.g. `acceptance 9 10`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "siammae/config.hpp"
#include "siammae/labelprop.hpp"
#include "siammae/trainer.hpp"
#include "siammae/verify.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace siammae;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_dir() {
  static const fs::path root = [] {
    auto p = fs::temp_directory_path() / "siammae_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

ModelConfig tiny_model(EncoderArch enc, DecoderArch dec) {
  ModelConfig c;
  c.patch = {8, 4, 1};
  c.encoder = {16, 2, 2, 2};
  c.decoder = {8, 2, 2, 1};
  c.arch = {enc, dec};
  return c;
}

Image random_frame(int channels, int side, Rng& rng) {
  Image img(channels, side, side);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

// ---- 1. gradient fidelity -------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = run_verification({});  // 20 seeds, 1e-4 relative gate
  const double secs = seconds_since(t0);

  double worst = 0;
  std::string first_failure;
  for (const auto& c : report.checks) {
    if (c.name.rfind("grad ", 0) == 0 || c.name.rfind("full loss", 0) == 0)
      worst = std::max(worst, c.max_err);
    if (!c.passed && first_failure.empty()) first_failure = c.name + " (" + c.detail + ")";
  }
  Outcome o;
  o.passed = report.all_passed() && secs < 120.0;
  o.detail = fmt("%zu checks, worst grad rel err %.2e vs 1e-4 gate, %.1fs of 120s budget",
                 report.checks.size(), worst, secs);
  if (!first_failure.empty()) o.detail += "; first failure: " + first_failure;
  return o;
}

// ---- 2. masking contract --------------------------------------------------------------

Outcome masking_contract() {
  const auto sweep = verify_masking();

  Rng rng(2);
  auto m1 = sample_mask(196, MaskSpec::asymmetric(0.95), FrameRole::f1, rng);
  auto m2 = sample_mask(196, MaskSpec::asymmetric(0.95), FrameRole::f2, rng);
  const bool reference = m1.masked.empty() && m1.kept.size() == 196 && m2.kept.size() == 10 &&
                         m2.masked.size() == 186;

  Outcome o;
  o.passed = sweep.passed && reference;
  o.detail = fmt("past frame fully visible, future keeps max(1, round(0.05*n)) "
                 "(10 of 196), checkerboard exact; property-swept n in [1,1024]");
  if (!sweep.passed) o.detail += "; sweep failed: " + sweep.detail;
  if (!reference) o.detail += "; reference geometry (196 -> 10) violated";
  return o;
}

// ---- 3. loss locality ------------------------------------------------------------------

Outcome loss_locality() {
  Rng rng(3);
  SiamMaeModel<double> model(tiny_model(EncoderArch::siamese, DecoderArch::cross_self), rng);
  const int n = 6, dim = model.cfg.patch.patch_dim();
  NoGradGuard ng;

  int unmoved_on_kept = 0, moved_on_masked = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    auto targets = Tensor<double>::randn({n, dim}, rng);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const int k = 1 + static_cast<int>(rng.uniform_int(n - 1));  // 1..n-1 kept
    MaskPattern mask;
    mask.kept.assign(order.begin(), order.begin() + k);
    mask.masked.assign(order.begin() + k, order.end());
    std::sort(mask.kept.begin(), mask.kept.end());
    std::sort(mask.masked.begin(), mask.masked.end());

    auto pred = Tensor<double>::randn({static_cast<int>(mask.masked.size()), dim}, rng);
    const double base = model.reconstruction_loss(pred, targets, mask).item();

    auto bump = [&](int row) {
      auto vals = targets.value();
      vals[static_cast<size_t>(row) * dim + rng.uniform_int(dim)] += rng.uniform(0.5, 2.0);
      auto bumped = Tensor<double>::from_data({n, dim}, vals);
      return model.reconstruction_loss(pred, bumped, mask).item();
    };
    if (bump(mask.kept[static_cast<size_t>(rng.uniform_int(k))]) == base) ++unmoved_on_kept;
    if (bump(mask.masked[static_cast<size_t>(rng.uniform_int(n - k))]) != base)
      ++moved_on_masked;
  }

  Outcome o;
  o.passed = unmoved_on_kept == trials && moved_on_masked == trials;
  o.detail = fmt("%d/%d trials: visible-patch edits leave the loss bit-identical; "
                 "%d/%d trials: masked-patch edits move it",
                 unmoved_on_kept, trials, moved_on_masked, trials);
  return o;
}

// ---- 4. architecture invariants --------------------------------------------------------

Outcome architecture_invariants() {
  Outcome o;
  NoGradGuard ng;

  // Weight-shared two-tower encoder: the past frame's latent cannot depend on
  // the future frame. Bit-exact equality, not a tolerance.
  bool siamese_exact = true;
  {
    Rng rng(41);
    SiamMaeModel<float> model(tiny_model(EncoderArch::siamese, DecoderArch::cross_self), rng);
    Rng drng(42);
    auto f1 = random_frame(1, 8, drng);
    auto f2a = random_frame(1, 8, drng);
    auto f2b = random_frame(1, 8, drng);
    auto p1 = patchify<float>(f1, model.cfg.patch);
    const std::vector<int> kept1 = {0, 1, 2, 3}, kept2 = {1};
    auto la = model.encode(p1, kept1, patchify<float>(f2a, model.cfg.patch), kept2);
    auto lb = model.encode(p1, kept1, patchify<float>(f2b, model.cfg.patch), kept2);
    for (size_t i = 0; i < la.f1.value().size(); ++i)
      siamese_exact = siamese_exact && la.f1.value()[i] == lb.f1.value()[i];
  }

  // Cross-attention-only decoder: each masked query attends to past-frame
  // context only, so decoding it alone must reproduce the full pass.
  double cross_dev = 0;
  {
    Rng rng(43);
    SiamMaeModel<float> model(tiny_model(EncoderArch::siamese, DecoderArch::cross), rng);
    Rng drng(44);
    auto p1 = patchify<float>(random_frame(1, 8, drng), model.cfg.patch);
    auto p2 = patchify<float>(random_frame(1, 8, drng), model.cfg.patch);
    MaskPattern m1{{0, 1, 2, 3}, {}};
    MaskPattern m2{{2}, {0, 1, 3}};
    auto latents = model.encode(p1, m1.kept, p2, m2.kept);
    auto full = model.decode(latents, m1, m2);
    auto ctx = add(model.dec_proj.forward(latents.f1), gather_rows(model.dec_pos, m1.kept));
    auto tokens = model.build_decoder_tokens(latents.f2, m2);
    auto solo = model.pixel_head.forward(model.run_decoder(gather_rows(tokens, {3}), ctx));
    const int row = 2;  // query 3 sits third in masked = {0,1,3}
    for (int j = 0; j < model.cfg.patch.patch_dim(); ++j)
      cross_dev = std::max(
          cross_dev, static_cast<double>(std::abs(full.pred_f2.at({row, j}) - solo.at({0, j}))));
  }

  // Every encoder x decoder pairing survives a 10-step optimization.
  int smoke_ok = 0;
  std::string smoke_fail;
  {
    SyntheticSceneSpec spec;
    spec.canvas = 32;
    spec.n_frames = 8;
    spec.min_sprites = 1;
    spec.max_sprites = 2;
    spec.min_size = 6;
    spec.max_size = 10;
    Rng crng(45);
    std::vector<VideoClip> clips;
    for (int i = 0; i < 5; ++i) {
      Rng sub = crng.split(static_cast<uint64_t>(i));
      clips.push_back(generate_synthetic_clip(spec, sub).first);
    }
    int idx = 0;
    for (EncoderArch enc : {EncoderArch::siamese, EncoderArch::joint}) {
      for (DecoderArch dec : {DecoderArch::joint, DecoderArch::cross, DecoderArch::cross_self}) {
        ModelConfig mcfg;
        mcfg.patch = {32, 8, 3};
        mcfg.encoder = {16, 2, 2, 1};
        mcfg.decoder = {8, 2, 2, 1};
        mcfg.arch = {enc, dec};
        TrainConfig tcfg;
        tcfg.total_epochs = 2;  // 5 clips x 1 sample / batch 1 = 10 steps
        tcfg.warmup_epochs = 1;
        tcfg.batch_size = 1;
        tcfg.repeated_sampling = 1;
        tcfg.gap_lo = 1;
        tcfg.gap_hi = 4;
        tcfg.seed = 46;
        try {
          auto st = make_train_state(mcfg, tcfg);
          auto res = train(st, tcfg, clips,
                           scratch_dir() / ("smoke_" + std::to_string(idx)));
          if (res.log.size() == 10) ++smoke_ok;
        } catch (const std::exception& e) {
          if (smoke_fail.empty())
            smoke_fail = to_string(enc) + "/" + to_string(dec) + ": " + e.what();
        }
        ++idx;
      }
    }
  }

  o.passed = siamese_exact && cross_dev < 1e-6 && smoke_ok == 6;
  o.detail = fmt("two-tower latents bit-exact: %s; cross-only query deviation %.1e vs 1e-6; "
                 "%d/6 encoder-decoder pairings finish a 10-step smoke run",
                 siamese_exact ? "yes" : "NO", cross_dev, smoke_ok);
  if (!smoke_fail.empty()) o.detail += "; first smoke failure: " + smoke_fail;
  return o;
}

// ---- 5. encoder parameter budget -------------------------------------------------------

Outcome encoder_parameter_budget() {
  Rng rng(5);
  VitEncoder<float> enc(PatchifyConfig{224, 16, 3}, BlockConfig{384, 6, 4, 12}, rng);
  const auto n = enc.param_count();
  const double rel = std::abs(static_cast<double>(n) - 21e6) / 21e6;
  Outcome o;
  o.passed = rel <= 0.05;
  o.detail = fmt("ViT-S/16 encoder has %lld parameters, %.1f%% from the 21M target (5%% allowed)",
                 static_cast<long long>(n), 100.0 * rel);
  return o;
}

// ---- 6. optimizer and schedule oracles --------------------------------------------------

Outcome optimizer_schedule_oracles() {
  // Three AdamW steps on loss = w^2/2 from w0 = 1, lr 0.1; trajectory derived
  // by hand from the update rule and frozen here.
  const double expected[3] = {0.895000001, 0.7908280263266225, 0.6877481124854042};
  Tensor<double> w = Tensor<double>::scalar(1.0);
  w.set_requires_grad(true);
  ParamList<double> params{NamedParam<double>{"w", w, true}};
  AdamW<double> opt(params, AdamWConfig{});  // beta 0.9/0.95, eps 1e-8, decay 0.05
  double adamw_dev = 0;
  for (int t = 0; t < 3; ++t) {
    params[0].tensor.zero_grad();
    auto loss = scale(mul(params[0].tensor, params[0].tensor), 0.5);
    backward(loss);
    opt.step(params, 0.1);
    adamw_dev = std::max(adamw_dev, std::abs(params[0].tensor.value()[0] - expected[t]));
  }

  const int64_t total = 1000, warmup = 100;
  const double base = 1.5e-4;
  const bool endpoints = lr_at(0, total, warmup, base) == 0.0 &&
                         lr_at(warmup, total, warmup, base) == base &&
                         lr_at(total, total, warmup, base) == 0.0;
  bool monotone_after_warmup = true;
  double max_jump = 0;
  double prev = lr_at(0, total, warmup, base);
  for (int64_t s = 1; s <= total; ++s) {
    const double cur = lr_at(s, total, warmup, base);
    max_jump = std::max(max_jump, std::abs(cur - prev));
    if (s > warmup && cur > prev + 1e-18) monotone_after_warmup = false;
    prev = cur;
  }
  // Largest per-step move is the warmup slope; anything bigger is a jump.
  const bool continuous = max_jump <= base / static_cast<double>(warmup) + 1e-18;

  Outcome o;
  o.passed = adamw_dev <= 1e-12 && endpoints && monotone_after_warmup && continuous;
  o.detail = fmt("AdamW 3-step trajectory off by %.1e (gate 1e-12); lr(0)=0, "
                 "lr(warmup)=1.5e-4, lr(end)=0, step-to-step jump <= warmup slope, "
                 "nonincreasing after warmup: %s",
                 adamw_dev, (endpoints && monotone_after_warmup && continuous) ? "yes" : "NO");
  return o;
}

// ---- 7. metric oracles ------------------------------------------------------------------

Outcome metric_oracles() {
  const auto check = verify_metrics(200);
  Outcome o;
  o.passed = check.passed;
  o.detail = "J, boundary F, mIoU, PCK equal brute-force recounts on 200 random 8x8 "
             "instances; perfect predictions score exactly 1.0";
  if (!check.passed) o.detail += "; failure: " + check.detail;
  return o;
}

// ---- 8. propagation protocol oracle -----------------------------------------------------

Outcome propagation_protocol_oracle() {
  SequenceEvalConfig ecfg;
  ecfg.patch_size = 8;

  double min_j = 1.0, min_pck = 1.0;
  for (uint64_t seed : {101ull, 202ull, 303ull}) {
    Rng rng(seed);
    auto [clip, gt] = generate_synthetic_clip(support::aligned_spec(64, 8, 5), rng);
    auto feats = [&gt = gt](int t) { return support::oracle_features(gt, t, 8); };
    min_j = std::min(min_j, evaluate_sequence(feats, gt, ecfg, EvalTask::segmentation).j_mean);
    min_pck =
        std::min(min_pck, evaluate_sequence(feats, gt, ecfg, EvalTask::keypoints).pck_02);
  }

  // With one context frame, identical features and top-1 affinities the
  // propagated labels must be a verbatim copy.
  bool copy_exact = true;
  {
    const int g = 4, dim = g * g, channels = 3;
    FeatureMap f;
    f.grid = g;
    f.dim = dim;
    f.feat.assign(static_cast<size_t>(g) * g * dim, 0.0f);
    for (int p = 0; p < g * g; ++p) f.feat[static_cast<size_t>(p) * dim + p] = 1.0f;
    LabelMap l;
    l.grid = g;
    l.channels = channels;
    Rng rng(8);
    l.val.resize(static_cast<size_t>(g) * g * channels);
    for (auto& v : l.val) v = static_cast<float>(rng.uniform());
    PropagationConfig pcfg;
    pcfg.top_k = 1;
    auto out = propagate_labels({{&f, &l}}, f, pcfg);
    for (size_t i = 0; i < l.val.size(); ++i)
      copy_exact = copy_exact && out.val[i] == l.val[i];
  }

  Outcome o;
  o.passed = min_j >= 0.95 && min_pck == 1.0 && copy_exact;
  o.detail = fmt("ground-truth-correspondence features: J >= %.4f (floor 0.95), "
                 "PCK@0.2 = %.2f over 3 scenes; identical-feature single-context copy "
                 "bit-exact: %s",
                 min_j, min_pck, copy_exact ? "yes" : "NO");
  return o;
}

// ---- 9/10. learned runs (shared training budget) ----------------------------------------

struct LearnedRuns {
  bool attempted = false;
  std::string error;
  double smoothed_early = 0, smoothed_final = 0;   // window means of the loss log
  double trained_j = 0, random_j = 0;              // held-out propagation quality
  double baseline_j = 0;                           // symmetric-masking joint baseline
  bool baseline_ran = false;
  double train_secs = 0, baseline_secs = 0;
};

LearnedRuns g_runs;

double window_mean(const std::vector<LossRow>& log, int64_t center, int64_t radius) {
  double total = 0;
  int64_t n = 0;
  for (const auto& row : log)
    if (row.step >= center - radius && row.step < center + radius) {
      total += row.loss;
      ++n;
    }
  return n > 0 ? total / static_cast<double>(n) : 0.0;
}

double mean_heldout_j(const SiamMaeModel<float>& model,
                      const std::vector<std::pair<VideoClip, GroundTruth>>& held) {
  SequenceEvalConfig ecfg;
  ecfg.patch_size = model.cfg.patch.patch_size;
  double total = 0;
  for (const auto& [clip, gt] : held) {
    auto feats = [&](int t) { return extract_features(model, clip.frames[static_cast<size_t>(t)]); };
    total += evaluate_sequence(feats, gt, ecfg, EvalTask::segmentation).j_mean;
  }
  return total / static_cast<double>(held.size());
}

TrainConfig learned_budget(uint64_t seed) {
  TrainConfig tcfg;
  tcfg.total_epochs = 125;  // 128 clips x 2 samples / batch 16 = 16 steps/epoch -> 2000 steps
  tcfg.warmup_epochs = 10;
  tcfg.batch_size = 16;
  tcfg.repeated_sampling = 2;
  tcfg.gap_lo = 4;
  tcfg.gap_hi = 16;
  tcfg.base_lr = 1.5e-3;
  tcfg.seed = seed;
  return tcfg;
}

// 64x64 sprite scenes whose motion is snapped to the patch grid: sprite
// patches translate verbatim across the torus, so appearance-matching
// features can track them while position-copying features lose them one
// full patch per frame. This keeps the protocol ceiling high (oracle
// features reach J ~ 0.93 here) and the random-init floor low (~0.15).
SyntheticSceneSpec learned_scene(int n_frames, bool allow_overlap) {
  SyntheticSceneSpec s;
  s.canvas = 64;
  s.n_frames = n_frames;
  s.min_sprites = 2;
  s.max_sprites = 3;
  s.min_size = 16;
  s.max_size = 24;
  s.max_speed = 1;
  s.quantum = 8;
  s.wrap = true;
  s.allow_overlap = allow_overlap;
  s.squares_only = true;
  s.background_cells = 8;
  return s;
}

void ensure_learned_runs(bool need_baseline) {
  if (g_runs.attempted && (!need_baseline || g_runs.baseline_ran || !g_runs.error.empty()))
    return;
  const bool first = !g_runs.attempted;
  g_runs.attempted = true;
  try {
    static std::vector<VideoClip> train_clips;
    static std::vector<std::pair<VideoClip, GroundTruth>> held;
    if (first) {
      const auto train_scene = learned_scene(32, true);
      const auto held_scene = learned_scene(12, false);
      Rng drng(4242);
      uint64_t tag = 0;
      while (train_clips.size() < 128) {
        Rng sub = drng.split(tag++);
        try {
          train_clips.push_back(generate_synthetic_clip(train_scene, sub).first);
        } catch (const DataError&) {  // sprite placement can fail; redraw
        }
      }
      while (held.size() < 8) {
        Rng sub = drng.split(tag++);
        try {
          held.push_back(generate_synthetic_clip(held_scene, sub));
        } catch (const DataError&) {
        }
      }
    }

    if (first) {
      ModelConfig mcfg;  // dim 64 / depth 4 encoder, dim 32 / depth 2 decoder, patch 8
      TrainConfig tcfg = learned_budget(9);
      const auto t0 = std::chrono::steady_clock::now();
      auto st = make_train_state(mcfg, tcfg);
      auto res = train(st, tcfg, train_clips, scratch_dir() / "learned_default");
      g_runs.smoothed_early = window_mean(res.log, 50, 25);
      g_runs.smoothed_final = window_mean(res.log, static_cast<int64_t>(res.log.size()) - 25, 25);
      g_runs.trained_j = mean_heldout_j(st.model, held);
      Rng rinit(777);
      SiamMaeModel<float> random_model(mcfg, rinit);
      g_runs.random_j = mean_heldout_j(random_model, held);
      g_runs.train_secs = seconds_since(t0);  // training plus both evaluations
    }

    if (need_baseline && !g_runs.baseline_ran) {
      ModelConfig mcfg;
      mcfg.arch = {EncoderArch::joint, DecoderArch::joint};
      TrainConfig tcfg = learned_budget(9);
      tcfg.mask = MaskSpec::symmetric_random(0.75);
      const auto t0 = std::chrono::steady_clock::now();
      auto st = make_train_state(mcfg, tcfg);
      train(st, tcfg, train_clips, scratch_dir() / "learned_baseline");
      g_runs.baseline_secs = seconds_since(t0);
      g_runs.baseline_j = mean_heldout_j(st.model, held);
      g_runs.baseline_ran = true;
    }
  } catch (const std::exception& e) {
    g_runs.error = e.what();
  }
}

Outcome end_to_end_learning() {
  ensure_learned_runs(false);
  Outcome o;
  if (!g_runs.error.empty()) {
    o.detail = "training run failed: " + g_runs.error;
    return o;
  }
  const double drop = 1.0 - g_runs.smoothed_final / g_runs.smoothed_early;
  const double margin = g_runs.trained_j - g_runs.random_j;
  o.passed = drop >= 0.30 && margin >= 0.15 && g_runs.train_secs < 2700.0;
  o.detail = fmt("2000 steps + evals in %.0fs (<2700s); smoothed loss %.4f -> %.4f "
                 "(%.1f%% drop, need 30%%); held-out J %.3f trained vs %.3f random init "
                 "(margin %.3f, need 0.15)",
                 g_runs.train_secs, g_runs.smoothed_early, g_runs.smoothed_final, 100.0 * drop,
                 g_runs.trained_j, g_runs.random_j, margin);
  return o;
}

Outcome masking_direction() {
  ensure_learned_runs(true);
  Outcome o;
  if (!g_runs.error.empty()) {
    o.detail = "training run failed: " + g_runs.error;
    return o;
  }
  o.passed = g_runs.trained_j > g_runs.baseline_j;
  o.detail = fmt("same budget (%.0fs): asymmetric-0.95 two-tower J %.3f vs symmetric-0.75 "
                 "joint J %.3f on held-out clips (sign check)",
                 g_runs.baseline_secs, g_runs.trained_j, g_runs.baseline_j);
  return o;
}

// ---- 11. bit-exact reproducibility ------------------------------------------------------

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open: " + p.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Outcome reproducibility() {
  auto run_once = [&](const fs::path& dir) {
    SyntheticSceneSpec spec;
    spec.canvas = 32;
    spec.n_frames = 8;
    spec.min_sprites = 1;
    spec.max_sprites = 2;
    spec.min_size = 6;
    spec.max_size = 10;
    Rng drng(1111);
    std::vector<VideoClip> clips;
    std::vector<GroundTruth> gts;
    for (int i = 0; i < 8; ++i) {
      Rng sub = drng.split(static_cast<uint64_t>(i));
      auto [clip, gt] = generate_synthetic_clip(spec, sub);
      clips.push_back(std::move(clip));
      gts.push_back(std::move(gt));
    }

    ModelConfig mcfg;
    mcfg.patch = {32, 8, 3};
    mcfg.encoder = {16, 2, 2, 1};
    mcfg.decoder = {8, 2, 2, 1};
    TrainConfig tcfg;
    tcfg.total_epochs = 2;
    tcfg.warmup_epochs = 1;
    tcfg.batch_size = 4;
    tcfg.repeated_sampling = 2;
    tcfg.gap_lo = 1;
    tcfg.gap_hi = 4;
    tcfg.seed = 12;
    auto st = make_train_state(mcfg, tcfg);
    train(st, tcfg, clips, dir);

    SequenceEvalConfig ecfg;
    ecfg.patch_size = 8;
    auto feats = [&](int t) {
      return extract_features(st.model, clips[0].frames[static_cast<size_t>(t)]);
    };
    nlohmann::json metrics = evaluate_sequence(feats, gts[0], ecfg, EvalTask::segmentation);
    write_json_file(dir / "metrics.json", metrics);
  };

  const fs::path a = scratch_dir() / "repro_a", b = scratch_dir() / "repro_b";
  run_once(a);
  run_once(b);

  const char* files[] = {"loss.csv", "checkpoint_final/weights.bin",
                         "checkpoint_final/manifest.json", "metrics.json"};
  int identical = 0;
  std::string differ;
  for (const char* f : files) {
    if (file_bytes(a / f) == file_bytes(b / f))
      ++identical;
    else if (differ.empty())
      differ = f;
  }

  Outcome o;
  o.passed = identical == 4;
  o.detail = fmt("%d/4 artifacts byte-identical across two same-seed runs "
                 "(loss log, checkpoint weights+manifest, metric JSON)",
                 identical);
  if (!differ.empty()) o.detail += "; first difference: " + differ;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient fidelity", gradient_fidelity},
      {2, "masking contract", masking_contract},
      {3, "loss locality", loss_locality},
      {4, "architecture invariants", architecture_invariants},
      {5, "encoder parameter budget", encoder_parameter_budget},
      {6, "optimizer and schedule oracles", optimizer_schedule_oracles},
      {7, "metric oracles", metric_oracles},
      {8, "propagation protocol oracle", propagation_protocol_oracle},
      {9, "end-to-end learning signal", end_to_end_learning},
      {10, "masking ablation direction", masking_direction},
      {11, "bit-exact reproducibility", reproducibility},
  };

  int ran = 0, passed = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    ++ran;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail = std::string("unexpected exception: ") + e.what();
    }
    if (o.passed) ++passed;
    std::printf("[%s] %2d. %s: %s\n", o.passed ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/%d criteria passed\n", passed, ran);
  return passed == ran ? 0 : 1;
}
