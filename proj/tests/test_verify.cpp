#include <doctest.h>

#include <string>

#include "siammae/verify.hpp"

using namespace siammae;

TEST_SUITE("verify") {

TEST_CASE("op gradient table: every case passes with headroom") {
  for (const auto& gc : detail::op_grad_cases()) {
    auto check = detail::run_grad_case(gc, /*seeds=*/3, /*tol=*/1e-4);
    CAPTURE(check.name);
    CHECK(check.passed);
    CHECK(check.max_err < 1e-5);  // doubles should clear the gate by an order of magnitude
  }
}

TEST_CASE("op gradient table: covers every differentiable op once") {
  auto cases = detail::op_grad_cases();
  auto has = [&cases](const char* needle) {
    for (const auto& gc : cases)
      if (gc.name.rfind(needle, 0) == 0) return true;
    return false;
  };
  for (const char* op : {"add", "sub", "mul", "scale", "matmul", "exp", "log", "sqrt", "gelu",
                         "softmax", "layer_norm", "mean", "sum", "reshape", "permute",
                         "gather_rows", "scatter_rows", "concat_rows"})
    CHECK_MESSAGE(has(op), op);
}

TEST_CASE("full-loss gradients: tiny model, every coordinate") {
  for (auto arch : {ArchVariant{EncoderArch::siamese, DecoderArch::cross_self},
                    ArchVariant{EncoderArch::joint, DecoderArch::joint}}) {
    ModelConfig mc;
    mc.patch = PatchifyConfig{16, 8, 1};
    mc.encoder = BlockConfig{8, 2, 2, 1};
    mc.decoder = BlockConfig{8, 2, 2, 1};
    mc.arch = arch;
    auto check = verify_model_gradients("tiny", mc, /*seeds=*/1, 1e-4, /*coords_per_param=*/0);
    CAPTURE(to_string(arch.encoder) + "/" + to_string(arch.decoder));
    CHECK(check.passed);
    CHECK(check.max_err < 1e-4);
    CHECK(check.max_err > 0.0);  // finite differences never agree to the last bit
  }
}

TEST_CASE("full-loss gradients: dim-64 depth-2 model, sampled coordinates") {
  ModelConfig mc;
  mc.patch = PatchifyConfig{32, 8, 3};
  mc.encoder = BlockConfig{64, 4, 2, 2};
  mc.decoder = BlockConfig{64, 4, 2, 2};
  auto check = verify_model_gradients("dim64", mc, /*seeds=*/2, 1e-4, /*coords_per_param=*/2);
  CHECK(check.passed);
  CHECK(check.max_err < 1e-4);
}

TEST_CASE("harness sanity: a sign-flipped derivative is detected") {
  auto check = verify_harness_detects_errors(1e-4);
  CHECK(check.passed);
  CHECK(check.max_err > 1.0);  // -2x vs 2x is a 100% relative error at least
}

TEST_CASE("masking invariants hold for n in [1,1024]") {
  auto check = verify_masking();
  CAPTURE(check.detail);
  CHECK(check.passed);
}

TEST_CASE("metric recounts agree exactly") {
  auto check = verify_metrics();
  CAPTURE(check.detail);
  CHECK(check.passed);
}

TEST_CASE("report format: per-check verdicts, gradient errors, summary line") {
  VerifyReport rep;
  rep.checks.push_back({"grad add", true, 3.2e-9, ""});
  rep.checks.push_back({"masking invariants", false, 0.0, "bad kept index"});
  CHECK(!rep.all_passed());
  auto text = format_verify_report(rep);
  CHECK(text.find("[PASS] grad add") != std::string::npos);
  CHECK(text.find("max rel err 3.200e-09") != std::string::npos);
  CHECK(text.find("[FAIL] masking invariants") != std::string::npos);
  CHECK(text.find("(bad kept index)") != std::string::npos);
  CHECK(text.find("FAILURES PRESENT") != std::string::npos);

  rep.checks.pop_back();
  CHECK(rep.all_passed());
  CHECK(format_verify_report(rep).find("all checks passed") != std::string::npos);
}

TEST_CASE("reduced-seed sweep of the full suite passes") {
  VerifyOptions opt;
  opt.seeds = 1;
  auto report = run_verification(opt);
  CHECK(report.all_passed());
  // one row per op case, six tiny-model rows, one sampled-model row,
  // harness + masking + metrics
  CHECK(report.checks.size() == detail::op_grad_cases().size() + 6 + 1 + 3);
  for (const auto& c : report.checks) {
    CAPTURE(c.name);
    CAPTURE(c.detail);
    CHECK(c.passed);
  }
}

}  // TEST_SUITE
