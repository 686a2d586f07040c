#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "siammae/labelprop.hpp"
#include "siammae/model.hpp"
#include "siammae/tensor.hpp"

namespace siammae {

// Release-gate self checks: central-difference gradient audits for every
// differentiable op and the full model loss (64-bit), masking invariants,
// and independent metric recounts. The harness also checks itself by
// injecting a sign error into a derivative and requiring detection.

struct VerifyCheck {
  std::string name;
  bool passed = false;
  double max_err = 0.0;  // worst relative gradient error, 0 for non-gradient checks
  std::string detail;    // populated on failure
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;

  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
};

struct VerifyOptions {
  int seeds = 20;     // random restarts per gradient check
  double tol = 1e-4;  // relative-error gate for 64-bit central differences
};

namespace detail {

// ---- op-level gradient table --------------------------------------------------------

// One gradient case: random double-precision inputs plus a scalar-valued loss.
// The reducer weights come from a separate rng stream held out of `inputs`, so
// the cotangent reaching the op under test is non-uniform but replays
// identically across the finite-difference evaluations.
struct GradCase {
  std::string name;
  std::function<std::vector<Tensor<double>>(Rng&)> make_inputs;
  std::function<Tensor<double>(const std::vector<Tensor<double>>&, Rng&)> loss;
};

inline Tensor<double> fixed_weights(Shape shape, Rng& rng) {
  auto w = Tensor<double>::randn(std::move(shape), rng);
  w.set_requires_grad(false);
  return w;
}

inline Tensor<double> weighted_total(const Tensor<double>& x, Rng& rng) {
  return sum(mul(x, fixed_weights(x.shape(), rng)));
}

inline std::vector<GradCase> op_grad_cases() {
  using T = Tensor<double>;
  auto randn = [](Shape shape) {
    return [shape](Rng& rng) { return std::vector<T>{T::randn(shape, rng)}; };
  };
  auto randn2 = [](Shape a, Shape b) {
    return [a, b](Rng& rng) { return std::vector<T>{T::randn(a, rng), T::randn(b, rng)}; };
  };
  auto rand_pos = [](Shape shape) {
    return [shape](Rng& rng) {
      auto t = T::randn(shape, rng);
      for (auto& v : t.raw_value()) v = 0.5 + std::abs(v);
      return std::vector<T>{t};
    };
  };
  auto reduce = [](std::function<T(const std::vector<T>&)> op) {
    return [op](const std::vector<T>& in, Rng& rng) { return weighted_total(op(in), rng); };
  };

  std::vector<GradCase> cases;
  cases.push_back({"add", randn2({3, 4}, {3, 4}),
                   reduce([](const std::vector<T>& in) { return add(in[0], in[1]); })});
  cases.push_back({"add (row broadcast)", randn2({3, 4}, {4}),
                   reduce([](const std::vector<T>& in) { return add(in[0], in[1]); })});
  cases.push_back({"sub", randn2({3, 4}, {3, 4}),
                   reduce([](const std::vector<T>& in) { return sub(in[0], in[1]); })});
  cases.push_back({"mul", randn2({3, 4}, {3, 4}),
                   reduce([](const std::vector<T>& in) { return mul(in[0], in[1]); })});
  cases.push_back({"mul (row broadcast)", randn2({3, 4}, {4}),
                   reduce([](const std::vector<T>& in) { return mul(in[0], in[1]); })});
  cases.push_back({"scale", randn({3, 4}),
                   reduce([](const std::vector<T>& in) { return scale(in[0], -0.7); })});
  cases.push_back({"matmul", randn2({3, 4}, {4, 5}),
                   reduce([](const std::vector<T>& in) { return matmul(in[0], in[1]); })});
  cases.push_back({"matmul (transposed operands)", randn2({4, 3}, {5, 4}),
                   reduce([](const std::vector<T>& in) {
                     return matmul(in[0], in[1], true, true);
                   })});
  cases.push_back({"matmul (batched, broadcast rhs)", randn2({2, 3, 4}, {4, 5}),
                   reduce([](const std::vector<T>& in) { return matmul(in[0], in[1]); })});
  cases.push_back({"exp", randn({3, 4}),
                   reduce([](const std::vector<T>& in) { return exp(in[0]); })});
  cases.push_back({"log", rand_pos({3, 4}),
                   reduce([](const std::vector<T>& in) { return log(in[0]); })});
  cases.push_back({"sqrt", rand_pos({3, 4}),
                   reduce([](const std::vector<T>& in) { return sqrt(in[0]); })});
  cases.push_back({"gelu", randn({3, 4}),
                   reduce([](const std::vector<T>& in) { return gelu(in[0]); })});
  cases.push_back({"softmax (last axis)", randn({3, 5}),
                   reduce([](const std::vector<T>& in) { return softmax(in[0], 1); })});
  cases.push_back({"softmax (leading axis)", randn({3, 5}),
                   reduce([](const std::vector<T>& in) { return softmax(in[0], 0); })});
  cases.push_back({"layer_norm",
                   [](Rng& rng) {
                     return std::vector<T>{T::randn({4, 6}, rng), T::randn({6}, rng),
                                           T::randn({6}, rng)};
                   },
                   reduce([](const std::vector<T>& in) {
                     return layer_norm(in[0], in[1], in[2]);
                   })});
  cases.push_back({"mean", randn({3, 4}),
                   [](const std::vector<T>& in, Rng&) { return mean(in[0]); }});
  cases.push_back({"sum", randn({3, 4}),
                   [](const std::vector<T>& in, Rng&) { return sum(in[0]); }});
  cases.push_back({"reshape", randn({3, 4}),
                   reduce([](const std::vector<T>& in) { return reshape(in[0], {2, 6}); })});
  cases.push_back({"permute", randn({2, 3, 4}),
                   reduce([](const std::vector<T>& in) { return permute(in[0], {2, 0, 1}); })});
  cases.push_back({"gather_rows (repeated index)", randn({5, 4}),
                   reduce([](const std::vector<T>& in) {
                     return gather_rows(in[0], {3, 0, 3});
                   })});
  cases.push_back({"scatter_rows", randn({2, 4}),
                   reduce([](const std::vector<T>& in) {
                     return scatter_rows(6, {4, 1}, in[0]);
                   })});
  cases.push_back({"concat_rows", randn2({2, 3}, {1, 3}),
                   reduce([](const std::vector<T>& in) {
                     return concat_rows<double>({in[0], in[1]});
                   })});
  return cases;
}

inline VerifyCheck run_grad_case(const GradCase& gc, int seeds, double tol) {
  VerifyCheck c;
  c.name = "grad " + gc.name;
  c.passed = true;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(0xa11ced + static_cast<uint64_t>(s) * 977);
    auto inputs = gc.make_inputs(rng);
    // Weight draws replay from the post-input rng state on every evaluation,
    // so the loss is a pure function of the (possibly perturbed) inputs.
    const Rng weight_rng = rng;
    auto rep = grad_check<double>(
        [&gc, weight_rng](const std::vector<Tensor<double>>& in) {
          Rng w = weight_rng;
          return gc.loss(in, w);
        },
        inputs, tol);
    c.max_err = std::max(c.max_err, rep.max_rel_err);
    if (!rep.ok) {
      c.passed = false;
      c.detail = "seed " + std::to_string(s) + " rel err " + std::to_string(rep.max_rel_err);
    }
  }
  return c;
}

}  // namespace detail

// ---- full-model gradient audit --------------------------------------------------------

// Finite-differences every (or a sampled subset of) parameter coordinate(s) of
// a double-precision model against the analytic gradient of the training loss.
// Masks are fixed up front so the loss is a deterministic function of weights.
inline VerifyCheck verify_model_gradients(const std::string& label, const ModelConfig& mcfg,
                                          int seeds, double tol, int64_t coords_per_param,
                                          uint64_t seed_base = 0x5eed) {
  VerifyCheck c;
  c.name = label;
  c.passed = true;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(seed_base + static_cast<uint64_t>(s) * 131);
    SiamMaeModel<double> model(mcfg, rng);

    Image f1(mcfg.patch.channels, mcfg.patch.image_size, mcfg.patch.image_size);
    Image f2 = f1;
    for (auto& v : f1.data) v = static_cast<float>(rng.uniform());
    for (auto& v : f2.data) v = static_cast<float>(rng.uniform());

    MaskSpec spec;  // asymmetric default: f1 fully visible, f2 mostly masked
    const int n = mcfg.patch.n_patches();
    auto m1 = sample_mask(n, spec, FrameRole::f1, rng);
    auto m2 = sample_mask(n, spec, FrameRole::f2, rng);

    auto loss = model.forward_with_masks(f1, f2, m1, m2).loss;
    backward(loss);

    auto eval_loss = [&]() {
      NoGradGuard ng;
      return model.forward_with_masks(f1, f2, m1, m2).loss.item();
    };

    for (auto& p : model.params()) {
      auto& vals = p.tensor.raw_value();
      const auto& analytic = p.tensor.grad();
      std::vector<size_t> coords;
      if (coords_per_param > 0 && static_cast<int64_t>(vals.size()) > coords_per_param) {
        for (int64_t k = 0; k < coords_per_param; ++k)
          coords.push_back(
              static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(vals.size()))));
      } else {
        coords.resize(vals.size());
        for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
      }
      for (size_t i : coords) {
        const double orig = vals[i];
        const double h = 1e-5 * std::max(1.0, std::abs(orig));
        vals[i] = orig + h;
        const double fp = eval_loss();
        vals[i] = orig - h;
        const double fm = eval_loss();
        vals[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = analytic[i];
        const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
        c.max_err = std::max(c.max_err, rel);
        if (rel > tol && c.passed) {
          c.passed = false;
          c.detail = p.name + "[" + std::to_string(i) + "] seed " + std::to_string(s) +
                     " rel err " + std::to_string(rel);
        }
      }
    }
  }
  return c;
}

// ---- masking invariants ---------------------------------------------------------------

inline VerifyCheck verify_masking() {
  VerifyCheck c;
  c.name = "masking invariants (n in [1,1024])";
  c.passed = true;
  auto fail = [&](const std::string& why) {
    if (c.passed) {
      c.passed = false;
      c.detail = why;
    }
  };

  Rng rng(31);
  auto check_partition = [&](const MaskPattern& m, int n, const char* what) {
    std::vector<char> seen(static_cast<size_t>(n), 0);
    if (!std::is_sorted(m.kept.begin(), m.kept.end()) ||
        !std::is_sorted(m.masked.begin(), m.masked.end()))
      fail(std::string(what) + ": index lists not sorted");
    for (int i : m.kept) {
      if (i < 0 || i >= n || seen[static_cast<size_t>(i)]) fail(std::string(what) + ": bad kept index");
      if (i >= 0 && i < n) seen[static_cast<size_t>(i)] = 1;
    }
    for (int i : m.masked) {
      if (i < 0 || i >= n || seen[static_cast<size_t>(i)]) fail(std::string(what) + ": bad masked index");
      if (i >= 0 && i < n) seen[static_cast<size_t>(i)] = 1;
    }
    if (static_cast<int>(m.kept.size() + m.masked.size()) != n)
      fail(std::string(what) + ": kept+masked does not cover the patch set");
  };

  for (int n = 1; n <= 1024; ++n) {
    MaskSpec spec;  // asymmetric 0 / 0.95
    auto m1 = sample_mask(n, spec, FrameRole::f1, rng);
    if (!m1.masked.empty() || static_cast<int>(m1.kept.size()) != n)
      fail("asymmetric spec masked a past-frame patch at n=" + std::to_string(n));
    auto m2 = sample_mask(n, spec, FrameRole::f2, rng);
    check_partition(m2, n, "random scheme");
    for (double r : {0.5, 0.75, 0.9, 0.95}) {
      const int expect = std::max(1, static_cast<int>(std::lround((1.0 - r) * n)));
      MaskSpec s2;
      s2.ratio_f2 = r;
      auto m = sample_mask(n, s2, FrameRole::f2, rng);
      if (static_cast<int>(m.kept.size()) != expect)
        fail("kept count at n=" + std::to_string(n) + " ratio " + std::to_string(r));
    }
  }
  // The reference geometry: 196 patches at 95% leaves 10 visible.
  {
    MaskSpec spec;
    auto m = sample_mask(196, spec, FrameRole::f2, rng);
    if (m.kept.size() != 10) fail("195-ratio kept count at n=196 is not 10");
  }
  // Grid scheme: exact checkerboard on every square grid.
  for (int g = 1; g <= 32; ++g) {
    MaskSpec spec;
    spec.scheme = MaskScheme::grid;
    const int n = g * g;
    auto m = sample_mask(n, spec, FrameRole::f2, rng);
    check_partition(m, n, "grid scheme");
    for (int i : m.kept)
      if ((i / g + i % g) % 2 != 0) fail("grid kept cell off the checkerboard at g=" + std::to_string(g));
    for (int i : m.masked)
      if ((i / g + i % g) % 2 == 0) fail("grid masked cell on the checkerboard at g=" + std::to_string(g));
  }
  return c;
}

// ---- metric recounts --------------------------------------------------------------------

namespace detail {

inline double recount_jaccard(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::vector<std::pair<int, int>> recount_boundary(const std::vector<uint8_t>& m, int h,
                                                         int w) {
  std::vector<std::pair<int, int>> pts;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m[static_cast<size_t>(y) * w + x]) continue;
      const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1 ||
                        !m[static_cast<size_t>(y - 1) * w + x] ||
                        !m[static_cast<size_t>(y + 1) * w + x] ||
                        !m[static_cast<size_t>(y) * w + x - 1] ||
                        !m[static_cast<size_t>(y) * w + x + 1];
      if (edge) pts.emplace_back(y, x);
    }
  return pts;
}

inline double recount_boundary_f(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                                 int h, int w, double tol) {
  auto bp = recount_boundary(pred, h, w);
  auto bg = recount_boundary(gt, h, w);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  auto hits = [tol](const std::vector<std::pair<int, int>>& from,
                    const std::vector<std::pair<int, int>>& to) {
    int64_t n = 0;
    for (auto& p : from) {
      double best = 1e300;
      for (auto& q : to) {
        const double dy = p.first - q.first, dx = p.second - q.second;
        best = std::min(best, dy * dy + dx * dx);
      }
      if (best <= tol * tol) ++n;
    }
    return static_cast<double>(n) / static_cast<double>(from.size());
  };
  const double precision = hits(bp, bg);
  const double recall = hits(bg, bp);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

inline double recount_miou(const IdMap& pred, const IdMap& gt) {
  int max_id = 0;
  for (int v : gt.data) max_id = std::max(max_id, v);
  double total = 0.0;
  int present = 0;
  for (int cls = 1; cls <= max_id; ++cls) {
    bool in_gt = false;
    for (int v : gt.data) in_gt = in_gt || v == cls;
    if (!in_gt) continue;
    ++present;
    total += recount_jaccard(class_mask(pred, cls), class_mask(gt, cls));
  }
  return present == 0 ? 1.0 : total / present;
}

inline IdMap random_idmap(int side, int n_classes, Rng& rng) {
  IdMap m(side, side);
  for (auto& v : m.data) v = static_cast<int>(rng.uniform_int(n_classes));
  return m;
}

}  // namespace detail

inline VerifyCheck verify_metrics(int instances = 50) {
  VerifyCheck c;
  c.name = "metric recounts (J, boundary F, mIoU, PCK)";
  c.passed = true;
  auto fail = [&](const std::string& why) {
    if (c.passed) {
      c.passed = false;
      c.detail = why;
    }
  };

  Rng rng(99);
  for (int i = 0; i < instances; ++i) {
    auto pred = detail::random_idmap(8, 3, rng);
    auto gt = detail::random_idmap(8, 3, rng);
    for (int cls = 1; cls <= 2; ++cls) {
      auto pm = class_mask(pred, cls), gm = class_mask(gt, cls);
      if (jaccard(pm, gm) != detail::recount_jaccard(pm, gm))
        fail("jaccard recount differs, instance " + std::to_string(i));
      for (double tol : {1.0, 2.0})
        if (boundary_f(pm, gm, 8, 8, tol) != detail::recount_boundary_f(pm, gm, 8, 8, tol))
          fail("boundary F recount differs, instance " + std::to_string(i));
    }
    if (miou(pred, gt) != detail::recount_miou(pred, gt))
      fail("mIoU recount differs, instance " + std::to_string(i));

    std::vector<std::pair<double, double>> kp_pred, kp_gt;
    std::vector<double> ref;
    for (int k = 0; k < 5; ++k) {
      kp_gt.emplace_back(rng.uniform(0, 8), rng.uniform(0, 8));
      kp_pred.emplace_back(kp_gt.back().first + rng.uniform(-2, 2),
                           kp_gt.back().second + rng.uniform(-2, 2));
      ref.push_back(rng.uniform(1, 8));
    }
    for (double alpha : {0.1, 0.2, 0.5}) {
      int64_t hits = 0;
      for (size_t k = 0; k < kp_gt.size(); ++k) {
        const double dy = kp_pred[k].first - kp_gt[k].first;
        const double dx = kp_pred[k].second - kp_gt[k].second;
        if (std::sqrt(dy * dy + dx * dx) <= alpha * ref[k]) ++hits;
      }
      if (pck(kp_pred, kp_gt, ref, alpha) != static_cast<double>(hits) / kp_gt.size())
        fail("PCK recount differs, instance " + std::to_string(i));
    }

    // Perfect predictions must score exactly 1.0 on every metric.
    auto m1 = class_mask(gt, 1);
    if (jaccard(m1, m1) != 1.0 || boundary_f(m1, m1, 8, 8, 1.0) != 1.0 ||
        miou(gt, gt) != 1.0 || pck(kp_gt, kp_gt, ref, 0.1) != 1.0)
      fail("perfect prediction does not score 1.0, instance " + std::to_string(i));
  }
  return c;
}

// ---- harness sanity ----------------------------------------------------------------------

// Feed the checker a value-correct square whose hand-written derivative has a
// flipped sign; the suite is only trustworthy if this is flagged.
inline VerifyCheck verify_harness_detects_errors(double tol) {
  VerifyCheck c;
  c.name = "harness flags an injected sign error";
  auto broken_square = [](const std::vector<Tensor<double>>& in) {
    const auto& x = in[0];
    std::vector<double> sq(x.value().size());
    for (size_t i = 0; i < sq.size(); ++i) sq[i] = x.value()[i] * x.value()[i];
    auto y = make_op<double>(x.shape(), std::move(sq), {x},
                             [](typename Tensor<double>::Node& n) {
                               auto& p = *n.parents[0];
                               if (!p.requires_grad) return;
                               for (size_t i = 0; i < p.value.size(); ++i)
                                 p.grad[i] += -2.0 * p.value[i] * n.grad[i];
                             });
    return sum(y);
  };
  Rng rng(7);
  auto x = Tensor<double>::randn({3, 3}, rng);
  for (auto& v : x.raw_value()) v = 0.5 + std::abs(v);  // keep gradients well away from 0
  auto rep = grad_check<double>(broken_square, {x}, tol);
  c.passed = !rep.ok;
  c.max_err = rep.max_rel_err;
  if (!c.passed) c.detail = "sign-flipped derivative went undetected";
  return c;
}

// ---- suite ---------------------------------------------------------------------------------

inline VerifyReport run_verification(const VerifyOptions& opt = {}) {
  VerifyReport report;
  for (const auto& gc : detail::op_grad_cases())
    report.checks.push_back(detail::run_grad_case(gc, opt.seeds, opt.tol));

  // Tiny model, every coordinate, all six architecture variants.
  for (auto enc : {EncoderArch::siamese, EncoderArch::joint})
    for (auto dec : {DecoderArch::joint, DecoderArch::cross, DecoderArch::cross_self}) {
      ModelConfig mc;
      mc.patch = PatchifyConfig{16, 8, 1};
      mc.encoder = BlockConfig{8, 2, 2, 1};
      mc.decoder = BlockConfig{8, 2, 2, 1};
      mc.arch = {enc, dec};
      report.checks.push_back(verify_model_gradients(
          "grad full loss " + to_string(enc) + "/" + to_string(dec) + " (all coordinates)", mc,
          /*seeds=*/1, opt.tol, /*coords_per_param=*/0));
    }

  // Depth-2 / dim-64 default architecture, sampled coordinates, many seeds.
  {
    ModelConfig mc;
    mc.patch = PatchifyConfig{32, 8, 3};
    mc.encoder = BlockConfig{64, 4, 2, 2};
    mc.decoder = BlockConfig{64, 4, 2, 2};
    mc.arch = {EncoderArch::siamese, DecoderArch::cross_self};
    report.checks.push_back(verify_model_gradients(
        "grad full loss siamese/cross_self dim-64 depth-2 (sampled coordinates)", mc, opt.seeds,
        opt.tol, /*coords_per_param=*/2));
  }

  report.checks.push_back(verify_harness_detects_errors(opt.tol));
  report.checks.push_back(verify_masking());
  report.checks.push_back(verify_metrics());
  return report;
}

inline std::string format_verify_report(const VerifyReport& report) {
  std::string out;
  size_t width = 0;
  for (const auto& c : report.checks) width = std::max(width, c.name.size());
  for (const auto& c : report.checks) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "  max rel err %.3e", c.max_err);
    out += c.passed ? "[PASS] " : "[FAIL] ";
    out += c.name;
    out.append(width - c.name.size(), ' ');
    if (c.name.rfind("grad", 0) == 0 || c.name.rfind("harness", 0) == 0) out += buf;
    if (!c.passed && !c.detail.empty()) out += "  (" + c.detail + ")";
    out += "\n";
  }
  out += report.all_passed() ? "verification: all checks passed\n"
                             : "verification: FAILURES PRESENT\n";
  return out;
}

}  // namespace siammae
