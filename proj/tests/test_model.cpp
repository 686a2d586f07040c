#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "siammae/model.hpp"

using namespace siammae;

namespace {

Image random_frame(int c, int hw, Rng& rng) {
  Image img(c, hw, hw);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

ModelConfig tiny_config(DecoderArch dec = DecoderArch::cross_self,
                        EncoderArch enc = EncoderArch::siamese) {
  ModelConfig c;
  c.patch = {8, 4, 1};
  c.encoder = {16, 2, 2, 2};
  c.decoder = {8, 2, 2, 1};
  c.arch = {enc, dec};
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("masking: asymmetric spec keeps all of f1 and 10 of 196 in f2") {
  Rng rng(1);
  auto spec = MaskSpec::asymmetric(0.95);
  auto m1 = sample_mask(196, spec, FrameRole::f1, rng);
  CHECK(m1.kept.size() == 196);
  CHECK(m1.masked.empty());
  auto m2 = sample_mask(196, spec, FrameRole::f2, rng);
  CHECK(m2.kept.size() == 10);  // round(0.05 * 196)
  CHECK(m2.masked.size() == 186);
}

TEST_CASE("masking: kept/masked always partition the index range, sorted") {
  Rng rng(2);
  for (int n : {1, 2, 3, 7, 16, 64, 196, 555, 1024}) {
    for (double r : {0.0, 0.5, 0.75, 0.95, 1.0}) {
      auto m = sample_mask(n, MaskSpec::symmetric_random(r), FrameRole::f2, rng);
      CHECK(static_cast<int>(m.kept.size()) ==
            std::max(1, static_cast<int>(std::lround((1.0 - r) * n))));
      std::set<int> all(m.kept.begin(), m.kept.end());
      all.insert(m.masked.begin(), m.masked.end());
      CHECK(static_cast<int>(all.size()) == n);
      CHECK(*all.begin() == 0);
      CHECK(*all.rbegin() == n - 1);
      CHECK(std::is_sorted(m.kept.begin(), m.kept.end()));
      CHECK(std::is_sorted(m.masked.begin(), m.masked.end()));
    }
  }
}

TEST_CASE("masking: grid scheme is an exact checkerboard on a 4x4 grid") {
  Rng rng(3);
  auto m = sample_mask(16, MaskSpec::grid_pattern(), FrameRole::f2, rng);
  CHECK(m.kept == std::vector<int>{0, 2, 5, 7, 8, 10, 13, 15});
  CHECK(m.masked.size() == 8);
}

TEST_CASE("masking: deterministic under a fixed rng stream") {
  Rng a(77), b(77);
  auto ma = sample_mask(64, MaskSpec::asymmetric(0.9), FrameRole::f2, a);
  auto mb = sample_mask(64, MaskSpec::asymmetric(0.9), FrameRole::f2, b);
  CHECK(ma.kept == mb.kept);
  CHECK(ma.masked == mb.masked);
}

TEST_CASE("siamese encoder: f1 latent is bit-identical under any f2 change") {
  Rng rng(4);
  SiamMaeModel<float> model(tiny_config(), rng);
  Rng drng(5);
  auto f1 = random_frame(1, 8, drng);
  auto f2a = random_frame(1, 8, drng);
  auto f2b = random_frame(1, 8, drng);
  auto p1 = patchify<float>(f1, model.cfg.patch);
  auto p2a = patchify<float>(f2a, model.cfg.patch);
  auto p2b = patchify<float>(f2b, model.cfg.patch);
  const std::vector<int> kept1 = {0, 1, 2, 3}, kept2 = {1};
  NoGradGuard ng;
  auto la = model.encode(p1, kept1, p2a, kept2);
  auto lb = model.encode(p1, kept1, p2b, kept2);
  REQUIRE(la.f1.value().size() == lb.f1.value().size());
  for (size_t i = 0; i < la.f1.value().size(); ++i)
    CHECK(la.f1.value()[i] == lb.f1.value()[i]);  // exact bit equality
}

TEST_CASE("joint encoder: latents of f1 depend on f2 content") {
  Rng rng(6);
  SiamMaeModel<float> model(tiny_config(DecoderArch::joint, EncoderArch::joint), rng);
  Rng drng(7);
  auto f1 = random_frame(1, 8, drng);
  auto f2 = random_frame(1, 8, drng);
  auto p1 = patchify<float>(f1, model.cfg.patch);
  auto p2 = patchify<float>(f2, model.cfg.patch);
  const std::vector<int> kept = {0, 1, 2, 3};
  NoGradGuard ng;
  auto base = model.encode(p1, kept, p2, kept);
  p2.raw_value()[3] += 0.5f;
  auto bumped = model.encode(p1, kept, p2, kept);
  double delta = 0;
  for (size_t i = 0; i < base.f1.value().size(); ++i)
    delta += std::abs(double(base.f1.value()[i]) - bumped.f1.value()[i]);
  CHECK(delta > 0.0);
}

TEST_CASE("decode shapes: 196 patches with 186 masked yield [186, 768]") {
  Rng rng(8);
  ModelConfig c;
  c.patch = {224, 16, 3};
  c.encoder = {32, 2, 2, 1};
  c.decoder = {16, 2, 2, 1};
  SiamMaeModel<float> model(c, rng);
  Rng drng(9);
  auto f1 = random_frame(3, 224, drng);
  auto f2 = random_frame(3, 224, drng);
  auto p1 = patchify<float>(f1, c.patch);
  auto p2 = patchify<float>(f2, c.patch);
  Rng mrng(10);
  auto spec = MaskSpec::asymmetric(0.95);
  auto m1 = sample_mask(196, spec, FrameRole::f1, mrng);
  auto m2 = sample_mask(196, spec, FrameRole::f2, mrng);
  REQUIRE(m2.masked.size() == 186);
  NoGradGuard ng;
  auto latents = model.encode(p1, m1.kept, p2, m2.kept);
  auto dec = model.decode(latents, m1, m2);
  CHECK(dec.pred_f2.shape() == Shape{186, 768});
}

TEST_CASE("cross decoder: each masked query is independent of the other f2 tokens") {
  Rng rng(11);
  SiamMaeModel<float> model(tiny_config(DecoderArch::cross), rng);
  Rng drng(12);
  auto f1 = random_frame(1, 8, drng);
  auto f2 = random_frame(1, 8, drng);
  auto p1 = patchify<float>(f1, model.cfg.patch);
  auto p2 = patchify<float>(f2, model.cfg.patch);
  MaskPattern m1{{0, 1, 2, 3}, {}};
  MaskPattern m2{{2}, {0, 1, 3}};
  NoGradGuard ng;
  auto latents = model.encode(p1, m1.kept, p2, m2.kept);
  auto full = model.decode(latents, m1, m2);

  // rebuild with only the masked query at position 3 present
  auto ctx = add(model.dec_proj.forward(latents.f1), gather_rows(model.dec_pos, m1.kept));
  auto tokens = model.build_decoder_tokens(latents.f2, m2);
  auto solo = model.pixel_head.forward(model.run_decoder(gather_rows(tokens, {3}), ctx));
  const int row = 2;  // position 3 is the third entry of masked = {0,1,3}
  for (int j = 0; j < model.cfg.patch.patch_dim(); ++j)
    CHECK(std::abs(full.pred_f2.at({row, j}) - solo.at({0, j})) < 1e-6f);
}

TEST_CASE("cross_self decoder: other f2 tokens do influence a masked query") {
  Rng rng(13);
  SiamMaeModel<float> model(tiny_config(DecoderArch::cross_self), rng);
  Rng drng(14);
  auto f1 = random_frame(1, 8, drng);
  auto f2 = random_frame(1, 8, drng);
  auto p1 = patchify<float>(f1, model.cfg.patch);
  auto p2 = patchify<float>(f2, model.cfg.patch);
  MaskPattern m1{{0, 1, 2, 3}, {}};
  MaskPattern m2{{2}, {0, 1, 3}};
  NoGradGuard ng;
  auto latents = model.encode(p1, m1.kept, p2, m2.kept);
  auto full = model.decode(latents, m1, m2);
  auto ctx = add(model.dec_proj.forward(latents.f1), gather_rows(model.dec_pos, m1.kept));
  auto tokens = model.build_decoder_tokens(latents.f2, m2);
  auto solo = model.pixel_head.forward(model.run_decoder(gather_rows(tokens, {3}), ctx));
  double delta = 0;
  for (int j = 0; j < model.cfg.patch.patch_dim(); ++j)
    delta += std::abs(double(full.pred_f2.at({2, j})) - solo.at({0, j}));
  CHECK(delta > 1e-4);
}

TEST_CASE("reconstruction loss: zero at the normalized target, locality to masked rows") {
  Rng rng(15);
  SiamMaeModel<double> model(tiny_config(), rng);
  Rng drng(16);
  auto targets = Tensor<double>::randn({4, 16}, drng);
  MaskPattern mask{{0, 2}, {1, 3}};

  auto norm = SiamMaeModel<double>::normalize_target_rows(targets, mask.masked);
  auto perfect = Tensor<double>::from_data({2, 16}, norm);
  CHECK(model.reconstruction_loss(perfect, targets, mask).item() == doctest::Approx(0.0));

  // perturbing a kept (unmasked) target row changes nothing at all
  auto pred = Tensor<double>::randn({2, 16}, drng);
  const double base = model.reconstruction_loss(pred, targets, mask).item();
  auto bumped_vals = targets.value();
  bumped_vals[0 * 16 + 5] += 3.0;  // row 0 is kept
  auto bumped = Tensor<double>::from_data({4, 16}, bumped_vals);
  CHECK(model.reconstruction_loss(pred, bumped, mask).item() == base);  // exactly 0 change

  // perturbing a masked target row changes the loss
  auto bumped2_vals = targets.value();
  bumped2_vals[1 * 16 + 5] += 3.0;  // row 1 is masked
  auto bumped2 = Tensor<double>::from_data({4, 16}, bumped2_vals);
  CHECK(model.reconstruction_loss(pred, bumped2, mask).item() != base);

  MaskPattern empty{{0, 1, 2, 3}, {}};
  CHECK_THROWS_AS(model.reconstruction_loss(pred, targets, empty), ShapeError);
}

TEST_CASE("reconstruction loss: zero prediction against normalized targets is about 1") {
  Rng rng(17);
  SiamMaeModel<double> model(tiny_config(), rng);
  Rng drng(18);
  auto targets = Tensor<double>::randn({4, 16}, drng, 2.5);
  MaskPattern mask{{}, {0, 1, 2, 3}};
  mask.kept = {};
  auto zero_pred = Tensor<double>::zeros({4, 16});
  const double loss = model.reconstruction_loss(zero_pred, targets, mask).item();
  // targets are unit-variance per row up to the eps regularizer
  CHECK(loss == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("no trivial leak: identical frames, f1 fully visible, loss > 0 at random init") {
  Rng rng(19);
  SiamMaeModel<float> model(tiny_config(DecoderArch::cross_self), rng);
  Rng drng(20);
  auto f = random_frame(1, 8, drng);
  Rng mrng(21);
  NoGradGuard ng;
  auto out = model.forward_train(f, f, MaskSpec::asymmetric(0.95), mrng);
  CHECK(std::isfinite(out.loss.item()));
  CHECK(out.loss.item() > 0.0f);
}

TEST_CASE("forward_train: diagnostics carry kept counts and a finite attention entropy") {
  Rng rng(22);
  SiamMaeModel<float> model(tiny_config(), rng);
  Rng drng(23);
  auto f1 = random_frame(1, 8, drng);
  auto f2 = random_frame(1, 8, drng);
  Rng mrng(24);
  NoGradGuard ng;
  auto out = model.forward_train(f1, f2, MaskSpec::asymmetric(0.75), mrng);
  CHECK(out.diag.kept_f1 == 4);
  CHECK(out.diag.kept_f2 == 1);
  CHECK(std::isfinite(out.diag.attn_entropy));
  CHECK(out.diag.attn_entropy >= 0.0);
}

TEST_CASE("full loss gradients match finite differences on a tiny model (64-bit)") {
  Rng rng(25);
  SiamMaeModel<double> model(tiny_config(DecoderArch::cross_self), rng);
  Rng drng(26);
  auto f1 = random_frame(1, 8, drng);
  auto f2 = random_frame(1, 8, drng);
  Rng mrng(27);
  const auto spec = MaskSpec::asymmetric(0.75);
  auto m1 = sample_mask(4, spec, FrameRole::f1, mrng);
  auto m2 = sample_mask(4, spec, FrameRole::f2, mrng);

  std::vector<Tensor<double>> params;
  for (auto& p : model.params()) params.push_back(p.tensor);
  auto rep = grad_check<double>(
      [&](const std::vector<Tensor<double>>&) {
        return model.forward_with_masks(f1, f2, m1, m2).loss;
      },
      params, 1e-4);
  CHECK(rep.ok);
  CHECK(rep.max_rel_err < 1e-4);
  CHECK(rep.coords_checked > 5000);  // every parameter coordinate covered
}

TEST_CASE("cls attention maps: one per head, in range, normalized raw rows") {
  Rng rng(28);
  SiamMaeModel<float> model(tiny_config(), rng);
  Rng drng(29);
  auto f = random_frame(1, 8, drng);
  AttnWeights<float> raw;
  auto maps = model.cls_attention_maps(f, &raw);
  REQUIRE(maps.size() == 2);  // heads
  for (const auto& m : maps) {
    CHECK(m.height == 2);
    CHECK(m.width == 2);
    for (float v : m.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  // raw CLS row sums to 1 over CLS + patches for every head
  for (int h = 0; h < raw.heads; ++h) {
    double s = 0;
    const float* row = raw.w.data() + static_cast<size_t>(h) * raw.n_query * raw.n_key;
    for (int j = 0; j < raw.n_key; ++j) s += row[j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_SUITE_END();
