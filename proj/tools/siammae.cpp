#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "siammae/config.hpp"
#include "siammae/labelprop.hpp"
#include "siammae/trainer.hpp"
#include "siammae/verify.hpp"

namespace {

using namespace siammae;

// ---- flag parsing helpers ---------------------------------------------------------

// "0.95a" -> asymmetric 95%, "0.75s" -> symmetric 75%, "grid" -> checkerboard.
MaskSpec parse_mask_shorthand(const std::string& text) {
  if (text == "grid") return MaskSpec::grid_pattern();
  if (text.size() < 2)
    throw UsageError("mask shorthand must be <ratio>a, <ratio>s, or grid: " + text);
  const char kind = text.back();
  double ratio = 0;
  try {
    size_t used = 0;
    ratio = std::stod(text.substr(0, text.size() - 1), &used);
    if (used != text.size() - 1) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw UsageError("cannot parse mask ratio in: " + text);
  }
  if (kind == 'a') return MaskSpec::asymmetric(ratio);
  if (kind == 's') return MaskSpec::symmetric_random(ratio);
  throw UsageError("mask shorthand must end in 'a' (asymmetric) or 's' (symmetric): " + text);
}

ArchVariant parse_arch(const std::string& text) {
  const size_t comma = text.find(',');
  if (comma == std::string::npos)
    throw UsageError("arch must be <encoder>,<decoder>, e.g. siamese,cross_self");
  return ArchVariant{encoder_arch_from_string(text.substr(0, comma)),
                     decoder_arch_from_string(text.substr(comma + 1))};
}

std::pair<int, int> parse_gap(const std::string& text) {
  const size_t comma = text.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument(text);
    return {std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
  } catch (const std::exception&) {
    throw UsageError("gap must be <lo>,<hi>, e.g. 4,48");
  }
}

// ---- dataset plumbing --------------------------------------------------------------

struct Dataset {
  std::vector<std::string> dirs;  // absolute clip directories, index order
  std::vector<VideoClip> clips;
};

Dataset load_dataset(const std::string& root) {
  Dataset ds;
  ds.dirs = list_dataset_clips(root);  // already root-prefixed
  for (const auto& dir : ds.dirs) ds.clips.push_back(load_clip_from_frames_dir(dir));
  return ds;
}

std::string csv_field(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Config-table values (mask ratios) print for humans, not for round-trips.
std::string csv_ratio(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// ---- gen-data ------------------------------------------------------------------------

struct GenDataOpts {
  std::string spec_path;
  std::string out;
  int n_clips = 8;
  uint64_t seed = 0;
  std::vector<std::string> overrides;
};

int cmd_gen_data(const GenDataOpts& o) {
  if (!fs::exists(o.spec_path)) throw UsageError("scene spec file not found: " + o.spec_path);
  json sj = load_json_file(o.spec_path);
  apply_overrides(sj, o.overrides);
  auto spec = sj.get<SyntheticSceneSpec>();
  spec.validate();
  if (o.n_clips < 1) throw UsageError("need at least one clip");

  fs::create_directories(o.out);
  std::vector<std::string> names;
  for (int i = 0; i < o.n_clips; ++i) {
    Rng rng = Rng(o.seed).split(static_cast<uint64_t>(i));
    auto [clip, gt] = generate_synthetic_clip(spec, rng);
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%04d", i);
    save_clip(o.out + "/" + buf, clip, gt);
    names.emplace_back(buf);
  }
  write_dataset_index(o.out, names);
  write_config_snapshot(o.out, json{{"command", "gen-data"},
                                    {"seed", o.seed},
                                    {"n_clips", o.n_clips},
                                    {"scene", json(spec)}});
  std::printf("wrote %d clips to %s\n", o.n_clips, o.out.c_str());
  return 0;
}

// ---- train ------------------------------------------------------------------------------

struct TrainOpts {
  std::string config_path;
  std::string data;
  std::string out;
  std::string resume;
  std::string arch;
  std::string mask;
  std::string gap;
  uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainOpts& o) {
  auto ds = load_dataset(o.data);

  TrainState st;
  TrainConfig tcfg;
  json resolved;
  if (!o.resume.empty()) {
    auto ck = read_checkpoint(o.resume);
    st = restore_train_state(ck);
    tcfg = ck.train_cfg;
    resolved = json{{"model", ck.model_cfg}, {"train", tcfg}, {"resumed_from", o.resume}};
  } else {
    resolved = json{{"model", ModelConfig{}}, {"train", TrainConfig{}}};
    if (!o.config_path.empty()) deep_merge(resolved, load_json_file(o.config_path));
    if (!o.arch.empty()) {
      const auto arch = parse_arch(o.arch);
      resolved["model"]["encoder_arch"] = to_string(arch.encoder);
      resolved["model"]["decoder_arch"] = to_string(arch.decoder);
    }
    if (!o.mask.empty()) resolved["train"]["mask"] = parse_mask_shorthand(o.mask);
    if (!o.gap.empty()) {
      const auto [lo, hi] = parse_gap(o.gap);
      resolved["train"]["gap_lo"] = lo;
      resolved["train"]["gap_hi"] = hi;
    }
    if (o.seed_set) resolved["train"]["seed"] = o.seed;
    apply_overrides(resolved, o.overrides);
    const auto mcfg = resolved.at("model").get<ModelConfig>();
    tcfg = resolved.at("train").get<TrainConfig>();
    st = make_train_state(mcfg, tcfg);
  }
  resolved["command"] = "train";
  write_config_snapshot(o.out, resolved);

  auto result = train(st, tcfg, ds.clips, o.out);
  const double last = result.log.empty() ? 0.0 : result.log.back().loss;
  std::printf("trained %zu steps on %zu clips; final loss %.6f; checkpoint %s\n",
              result.log.size(), ds.clips.size(), last, result.final_checkpoint.c_str());
  return 0;
}

// ---- eval --------------------------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint;
  std::string config_path;
  std::string data;
  std::string out;
  std::string task = "segmentation";
  bool random_init = false;
  uint64_t seed = 0;
  std::vector<std::string> overrides;
};

SiamMaeModel<float> eval_model(const EvalOpts& o, json& resolved) {
  if (!o.checkpoint.empty()) {
    auto ck = read_checkpoint(o.checkpoint);
    resolved["checkpoint"] = o.checkpoint;
    resolved["model"] = ck.model_cfg;
    if (o.random_init) {
      Rng rng(o.seed);
      return SiamMaeModel<float>(ck.model_cfg, rng);
    }
    return restore_train_state(ck).model;
  }
  if (o.random_init && !o.config_path.empty()) {
    json mj = load_json_file(o.config_path);
    if (mj.contains("model")) mj = mj["model"];
    const auto mcfg = mj.get<ModelConfig>();
    resolved["model"] = mcfg;
    Rng rng(o.seed);
    return SiamMaeModel<float>(mcfg, rng);
  }
  throw UsageError("eval needs --checkpoint, or --random-init with --config");
}

EvalMetrics mean_metrics(const std::vector<EvalMetrics>& rows) {
  EvalMetrics m;
  for (const auto& r : rows) {
    m.j_mean += r.j_mean;
    m.f_mean += r.f_mean;
    m.jf_mean += r.jf_mean;
    m.miou += r.miou;
    m.pck_01 += r.pck_01;
    m.pck_02 += r.pck_02;
    m.frames += r.frames;
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  m.j_mean /= n;
  m.f_mean /= n;
  m.jf_mean /= n;
  m.miou /= n;
  m.pck_01 /= n;
  m.pck_02 /= n;
  return m;
}

int cmd_eval(const EvalOpts& o) {
  const EvalTask task = eval_task_from_string(o.task);
  json resolved{{"command", "eval"},
                {"task", o.task},
                {"random_init", o.random_init},
                {"seed", o.seed}};
  auto model = eval_model(o, resolved);

  SequenceEvalConfig ecfg;
  ecfg.patch_size = model.cfg.patch.patch_size;
  resolved["eval"] = ecfg;
  apply_overrides(resolved, o.overrides);
  ecfg = resolved.at("eval").get<SequenceEvalConfig>();
  ecfg.prop.validate();
  write_config_snapshot(o.out, resolved);

  const auto clip_dirs = list_dataset_clips(o.data);
  std::vector<std::string> clip_names;
  std::vector<EvalMetrics> rows;
  json per_clip = json::object();
  for (const auto& dir : clip_dirs) {
    const std::string name = fs::path(dir).filename().string();
    clip_names.push_back(name);
    auto clip = load_clip_from_frames_dir(dir);
    auto gt = load_gt(dir);
    const auto& pc = model.cfg.patch;
    if (clip.frames.empty() || clip.frames[0].height != pc.image_size ||
        clip.frames[0].width != pc.image_size || clip.frames[0].channels != pc.channels)
      throw DataError("clip " + name + " does not match the model input " +
                      std::to_string(pc.channels) + "x" + std::to_string(pc.image_size) + "x" +
                      std::to_string(pc.image_size));
    auto features_at = [&](int t) { return extract_features(model, clip.frames[static_cast<size_t>(t)]); };
    rows.push_back(evaluate_sequence(features_at, gt, ecfg, task));
    per_clip[name] = rows.back();
  }
  const auto mean = mean_metrics(rows);

  json mj{{"task", o.task}, {"clips", per_clip}, {"mean", mean}};
  write_json_file(o.out + "/metrics.json", mj);
  std::string csv = "clip,J,F,JF,mIoU,PCK@0.1,PCK@0.2,frames\n";
  auto csv_row = [&](const std::string& name, const EvalMetrics& m) {
    csv += name + "," + csv_field(m.j_mean) + "," + csv_field(m.f_mean) + "," +
           csv_field(m.jf_mean) + "," + csv_field(m.miou) + "," + csv_field(m.pck_01) + "," +
           csv_field(m.pck_02) + "," + std::to_string(m.frames) + "\n";
  };
  for (size_t i = 0; i < rows.size(); ++i) csv_row(clip_names[i], rows[i]);
  csv_row("mean", mean);
  std::ofstream csv_out(o.out + "/metrics.csv");
  if (!csv_out) throw DataError("cannot write metrics.csv in " + o.out);
  csv_out << csv;

  switch (task) {
    case EvalTask::segmentation:
      std::printf("segmentation over %zu clips: J %.4f  F %.4f  J&F %.4f\n", rows.size(),
                  mean.j_mean, mean.f_mean, mean.jf_mean);
      break;
    case EvalTask::parts:
      std::printf("parts over %zu clips: mIoU %.4f\n", rows.size(), mean.miou);
      break;
    default:
      std::printf("keypoints over %zu clips: PCK@0.1 %.4f  PCK@0.2 %.4f\n", rows.size(),
                  mean.pck_01, mean.pck_02);
  }
  return 0;
}

// ---- ablate -------------------------------------------------------------------------------

struct AblateOpts {
  std::string grid_path;
  std::string data;
  std::string eval_data;  // defaults to --data
  std::string out;
  uint64_t seed = 0;
  std::vector<std::string> overrides;
};

std::string csv_quote(std::string s) {
  for (auto& c : s)
    if (c == ',' || c == '\n') c = ';';
  return s;
}

int cmd_ablate(const AblateOpts& o) {
  json gj = load_json_file(o.grid_path);
  apply_overrides(gj, o.overrides);
  if (!gj.contains("rows") || !gj["rows"].is_array() || gj["rows"].empty())
    throw UsageError("grid file needs a nonempty \"rows\" array");

  json base{{"model", ModelConfig{}}, {"train", TrainConfig{}}};
  base["train"]["seed"] = o.seed;
  if (gj.contains("base")) deep_merge(base, gj["base"]);

  auto ds = load_dataset(o.data);
  const std::string eval_dir = o.eval_data.empty() ? o.data : o.eval_data;

  fs::create_directories(o.out);
  write_config_snapshot(o.out, json{{"command", "ablate"}, {"seed", o.seed}, {"base", base},
                                    {"rows", gj["rows"]}});

  std::string csv =
      "name,encoder,decoder,scheme,ratio_f1,ratio_f2,gap_lo,gap_hi,J,F,JF,status\n";
  int failures = 0;
  for (size_t r = 0; r < gj["rows"].size(); ++r) {
    const auto& row = gj["rows"][r];
    const std::string name =
        row.value("name", "row" + std::to_string(r));
    json rj = base;
    if (row.contains("set"))
      for (const auto& [k, v] : row["set"].items()) set_dotted_key(rj, k, v);

    std::string prefix;
    std::string status = "ok";
    EvalMetrics mean;
    try {
      const auto mcfg = rj.at("model").get<ModelConfig>();
      const auto tcfg = rj.at("train").get<TrainConfig>();
      prefix = to_string(mcfg.arch.encoder) + "," + to_string(mcfg.arch.decoder) + "," +
               to_string(tcfg.mask.scheme) + "," + csv_ratio(tcfg.mask.ratio_f1) + "," +
               csv_ratio(tcfg.mask.ratio_f2) + "," + std::to_string(tcfg.gap_lo) + "," +
               std::to_string(tcfg.gap_hi);

      const std::string row_out = o.out + "/rows/" + name;
      auto st = make_train_state(mcfg, tcfg);
      write_config_snapshot(row_out, json{{"model", mcfg}, {"train", tcfg}});
      train(st, tcfg, ds.clips, row_out);

      EvalOpts eo;
      eo.checkpoint = row_out + "/checkpoint_final";
      eo.data = eval_dir;
      eo.out = row_out + "/eval";
      cmd_eval(eo);
      mean = load_json_file(row_out + "/eval/metrics.json").at("mean").get<EvalMetrics>();
    } catch (const std::exception& e) {
      status = std::string("error: ") + e.what();
      ++failures;
    }
    if (prefix.empty()) prefix = ",,,,,,";
    csv += name + "," + prefix + ",";
    if (status == "ok")
      csv += csv_field(mean.j_mean) + "," + csv_field(mean.f_mean) + "," +
             csv_field(mean.jf_mean);
    else
      csv += ",,";
    csv += "," + csv_quote(status) + "\n";
    std::printf("[%zu/%zu] %s: %s\n", r + 1, gj["rows"].size(), name.c_str(),
                csv_quote(status).c_str());
  }
  std::ofstream out(o.out + "/results.csv");
  if (!out) throw DataError("cannot write results.csv in " + o.out);
  out << csv;
  std::printf("ablation grid done: %zu rows, %d failed; table at %s/results.csv\n",
              gj["rows"].size(), failures, o.out.c_str());
  return 0;
}

// ---- attn-viz -----------------------------------------------------------------------------

struct VizOpts {
  std::string checkpoint;
  std::string image_path;
  std::string out;
};

Image adapt_channels(const Image& img, int channels) {
  if (img.channels == channels) return img;
  Image out(channels, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float mean = 0;
      for (int c = 0; c < img.channels; ++c) mean += img.at(c, y, x);
      mean /= static_cast<float>(img.channels);
      for (int c = 0; c < channels; ++c)
        out.at(c, y, x) = img.channels == 1 ? img.at(0, y, x) : mean;
    }
  return out;
}

int cmd_attn_viz(const VizOpts& o) {
  auto model = restore_train_state(read_checkpoint(o.checkpoint)).model;
  const auto& pc = model.cfg.patch;
  Image img = adapt_channels(read_image(o.image_path), pc.channels);
  if (img.height != pc.image_size || img.width != pc.image_size)
    img = resize_bilinear(img, pc.image_size, pc.image_size);

  const auto maps = model.cls_attention_maps(img);
  fs::create_directories(o.out);
  write_config_snapshot(o.out, json{{"command", "attn-viz"},
                                    {"checkpoint", o.checkpoint},
                                    {"image", o.image_path}});

  Image heat(1, pc.image_size, pc.image_size);
  for (size_t h = 0; h < maps.size(); ++h) {
    const Image up = resize_bilinear(maps[h], pc.image_size, pc.image_size);
    char buf[32];
    std::snprintf(buf, sizeof buf, "head_%02zu.pgm", h);
    write_image(up, o.out + "/" + buf);
    for (size_t i = 0; i < heat.data.size(); ++i) heat.data[i] += up.data[i];
  }
  for (auto& v : heat.data) v /= static_cast<float>(maps.size());

  // Composite: red-tinted mean attention over the dimmed grayscale input.
  Image gray = adapt_channels(img, 1);
  Image overlay(3, pc.image_size, pc.image_size);
  for (int y = 0; y < pc.image_size; ++y)
    for (int x = 0; x < pc.image_size; ++x) {
      const float g = 0.5f * gray.at(0, y, x);
      overlay.at(0, y, x) = std::min(1.0f, g + 0.5f * heat.at(0, y, x));
      overlay.at(1, y, x) = g;
      overlay.at(2, y, x) = g;
    }
  write_image(overlay, o.out + "/overlay.ppm");
  std::printf("wrote %zu head maps + overlay to %s\n", maps.size(), o.out.c_str());
  return 0;
}

// ---- verify -------------------------------------------------------------------------------

struct VerifyOpts {
  int seeds = 20;
  std::string out;
};

int cmd_verify(const VerifyOpts& o) {
  VerifyOptions vo;
  vo.seeds = o.seeds;
  if (vo.seeds < 1) throw UsageError("need at least one seed");
  const auto report = run_verification(vo);
  const auto text = format_verify_report(report);
  std::fputs(text.c_str(), stdout);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream f(o.out + "/report.txt");
    f << text;
    write_config_snapshot(o.out, json{{"command", "verify"}, {"seeds", o.seeds}});
  }
  return report.all_passed() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"siammae: frame-pair masked autoencoder pretraining and label propagation"};
  app.require_subcommand(1);
  int rc = 0;

  GenDataOpts gen;
  auto* sgen = app.add_subcommand("gen-data", "generate a synthetic sprite dataset");
  sgen->add_option("--spec", gen.spec_path, "scene spec JSON file")->required();
  sgen->add_option("--out", gen.out, "output dataset directory")->required();
  sgen->add_option("--n", gen.n_clips, "number of clips");
  sgen->add_option("--seed", gen.seed, "dataset seed");
  sgen->add_option("--override", gen.overrides, "scene spec override key=value");
  sgen->callback([&] { rc = cmd_gen_data(gen); });

  TrainOpts tr;
  auto* strain = app.add_subcommand("train", "pretrain on frame pairs");
  strain->add_option("--config", tr.config_path, "config JSON with model/train sections");
  strain->add_option("--data", tr.data, "dataset directory (from gen-data)")->required();
  strain->add_option("--out", tr.out, "run output directory")->required();
  auto* resume_opt = strain->add_option("--resume", tr.resume, "checkpoint directory to resume");
  auto* seed_opt = strain->add_option("--seed", tr.seed, "training seed");
  auto* arch_opt =
      strain->add_option("--arch", tr.arch, "encoder,decoder (e.g. siamese,cross_self)");
  auto* mask_opt = strain->add_option("--mask", tr.mask, "mask shorthand: 0.95a, 0.75s, grid");
  auto* gap_opt = strain->add_option("--gap", tr.gap, "frame gap range lo,hi");
  auto* ovr_opt = strain->add_option("--override", tr.overrides, "config override key=value");
  resume_opt->excludes(seed_opt)->excludes(arch_opt)->excludes(mask_opt)->excludes(gap_opt);
  resume_opt->excludes(ovr_opt);
  strain->callback([&] {
    tr.seed_set = seed_opt->count() > 0;
    rc = cmd_train(tr);
  });

  EvalOpts ev;
  auto* seval = app.add_subcommand("eval", "label-propagation evaluation");
  seval->add_option("--checkpoint", ev.checkpoint, "checkpoint directory");
  seval->add_option("--config", ev.config_path, "model config JSON (with --random-init)");
  seval->add_option("--data", ev.data, "labeled dataset directory")->required();
  seval->add_option("--out", ev.out, "metrics output directory")->required();
  seval->add_option("--task", ev.task, "segmentation | parts | keypoints");
  seval->add_flag("--random-init", ev.random_init, "score fresh random weights as a baseline");
  seval->add_option("--seed", ev.seed, "seed for --random-init weights");
  seval->add_option("--override", ev.overrides, "eval config override key=value");
  seval->callback([&] { rc = cmd_eval(ev); });

  AblateOpts ab;
  auto* sab = app.add_subcommand("ablate", "train + evaluate a grid of configurations");
  sab->add_option("--grid", ab.grid_path, "grid JSON: base config + rows of overrides")
      ->required();
  sab->add_option("--data", ab.data, "training dataset directory")->required();
  sab->add_option("--eval-data", ab.eval_data, "held-out dataset (defaults to --data)");
  sab->add_option("--out", ab.out, "grid output directory")->required();
  sab->add_option("--seed", ab.seed, "training seed shared by all rows");
  sab->add_option("--override", ab.overrides, "grid file override key=value");
  sab->callback([&] { rc = cmd_ablate(ab); });

  VizOpts vz;
  auto* sviz = app.add_subcommand("attn-viz", "per-head CLS attention heatmaps");
  sviz->add_option("--checkpoint", vz.checkpoint, "checkpoint directory")->required();
  sviz->add_option("--image", vz.image_path, "input image (PNG or NetPBM)")->required();
  sviz->add_option("--out", vz.out, "output directory")->required();
  sviz->callback([&] { rc = cmd_attn_viz(vz); });

  VerifyOpts vf;
  auto* sverify = app.add_subcommand("verify", "gradient, masking, and metric self-checks");
  sverify->add_option("--seeds", vf.seeds, "random restarts per gradient check");
  sverify->add_option("--out", vf.out, "optional directory for the written report");
  sverify->callback([&] { rc = cmd_verify(vf); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse error
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {  // DataError, ShapeError, IO failures
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return rc;
}
