#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>

#include "cropsim/synth.hpp"
#include "cropsim/traits.hpp"
#include "doctest.h"
#include "support/ap_oracle.hpp"
#include "support/tempdir.hpp"

using namespace cropsim;
using namespace cropsim::testing;

TEST_CASE("PLA of the centre plant") {
  InstanceMasks full{256, 256, {rect_instance(256, 256, 0, 0, 256, 256)}};
  TraitEstimate e = pla_from_masks(full, 0.23);
  CHECK(e.pixels == 65536);
  CHECK(e.pla == doctest::Approx(3466.9).epsilon(1e-4));
  CHECK(e.pla_percent == doctest::Approx(100.0));
  CHECK_FALSE(e.no_plant);

  InstanceMasks none{64, 64, {}};
  e = pla_from_masks(none, 0.23);
  CHECK(e.pla == 0);
  CHECK(e.no_plant);

  // containment beats size, centroid distance is the fallback
  InstanceMasks two{64, 64, {rect_instance(64, 64, 0, 0, 30, 30), rect_instance(64, 64, 30, 30, 36, 36)}};
  CHECK(pla_from_masks(two, 1.0).pixels == 36);
  InstanceMasks off{64, 64, {rect_instance(64, 64, 0, 0, 20, 20), rect_instance(64, 64, 40, 40, 50, 50)}};
  CHECK(pla_from_masks(off, 1.0).pixels == 100);

  // gsd scaling: physical area scales by s^2, percent is invariant
  const TraitEstimate a = pla_from_masks(two, 0.5), b = pla_from_masks(two, 1.5);
  CHECK(b.pla == doctest::Approx(a.pla * 9.0));
  CHECK(b.pla_percent == a.pla_percent);
  CHECK(total_pla_from_masks(two, 1.0).pixels == 936);
}

TEST_CASE("colour segmenter recovers synthetic plants") {
  SynthConfig cfg;
  cfg.n_sequences = 6;
  auto seqs = synth_sequences(cfg);
  ColorSegmenter seg;
  for (const auto& s : seqs) {
    SynthFrame f = render_frame(s, 35, 64);
    InstanceMasks m = seg(f.image);
    const auto truth = union_mask(f.masks), found = union_mask(m);
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < truth.size(); ++i) {
      inter += truth[i] && found[i];
      uni += truth[i] || found[i];
    }
    CHECK(static_cast<double>(inter) / static_cast<double>(uni) > 0.95);
    // species labels agree with the rendered plant under each component
    for (const auto& inst : m.instances) {
      int votes[2] = {0, 0};
      for (const auto& g : f.masks.instances)
        for (size_t i = 0; i < g.mask.size(); ++i) votes[g.label] += g.mask[i] && inst.mask[i];
      CHECK(inst.label == (votes[0] >= votes[1] ? 0 : 1));
    }
  }
}

TEST_CASE("boundary mask is dilation minus erosion") {
  std::vector<uint8_t> m(49, 0);
  for (int y = 2; y < 5; ++y)
    for (int x = 2; x < 5; ++x) m[static_cast<size_t>(y * 7 + x)] = 1;
  auto b = boundary_mask(m, 7, 7);
  CHECK(b[3 * 7 + 3] == 0);  // interior
  CHECK(b[2 * 7 + 2] == 1);
  CHECK(b[1 * 7 + 3] == 1);  // outer ring
  CHECK(b[1 * 7 + 1] == 0);  // diagonal is outside a cross dilation
  CHECK(std::count(b.begin(), b.end(), 1) == 8 + 12);
}

TEST_CASE("trait MAE and ME") {
  auto r = trait_mae_me({2, 4}, {1, 5});
  CHECK(r.mae == 1.0);
  CHECK(r.me == 0.0);
  r = trait_mae_me({1, 2, 3}, {1, 2, 3});
  CHECK(r.mae == 0.0);
  CHECK(r.me == 0.0);
  CHECK_THROWS(trait_mae_me({1}, {1, 2}));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int k = 0; k < 20; ++k) {
    std::vector<double> a(5), b(5);
    for (int i = 0; i < 5; ++i) a[static_cast<size_t>(i)] = n(rng), b[static_cast<size_t>(i)] = n(rng);
    auto m = trait_mae_me(a, b);
    CHECK(std::abs(m.me) <= m.mae + 1e-15);
  }
}

TEST_CASE("AP/AR trivial detectors") {
  InstanceMasks truth{32, 32, {rect_instance(32, 32, 2, 2, 10, 10), rect_instance(32, 32, 15, 15, 25, 28, 1)}};
  for (IouType t : {IouType::kBox, IouType::kMask}) {
    ApAr perfect = ap_ar({truth}, {truth}, t);
    CHECK(perfect.ap == 1.0);
    CHECK(perfect.ap50 == 1.0);
    CHECK(perfect.ap75 == 1.0);
    CHECK(perfect.ar == 1.0);
    ApAr empty = ap_ar({InstanceMasks{32, 32, {}}}, {truth}, t);
    CHECK(empty.ap == 0.0);
    CHECK(empty.ar == 0.0);
  }
}

TEST_CASE("AP/AR match an exhaustive matcher on random 3-instance scenes") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto [pred, truth] = random_scene(rng);
    for (IouType type : {IouType::kBox, IouType::kMask}) {
      const ApAr got = ap_ar(pred, truth, type), want = brute_force_ap_ar(pred, truth, type);
      CHECK(got.ap50 == want.ap50);
      CHECK(got.ap75 == want.ap75);
      CHECK(got.ar == want.ar);
      CHECK(got.ap == doctest::Approx(want.ap).epsilon(1e-12));
    }
  }
}

TEST_CASE("biomass regressor: non-negative outputs, constant labels, determinism, save/load") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<RegressorSample> train, val;
  for (int i = 0; i < 24; ++i) {
    Image img(Shape{3, 32, 32});
    for (auto& v : img.span()) v = u(rng);
    (i < 16 ? train : val).push_back({img, {0.7, 0.2}});
  }
  RegressorConfig cfg;
  cfg.width = 4;
  cfg.batch_size = 8;
  cfg.max_epochs = 25;
  cfg.lr = 3e-3;
  std::mt19937_64 r1(1), r2(1);
  BiomassRegressor a(4, r1), b(4, r2);
  auto fa = train_biomass_regressor(a, train, val, cfg);
  auto fb = train_biomass_regressor(b, train, val, cfg);
  CHECK(fa.val_mse == fb.val_mse);
  CHECK(fa.val_mse[static_cast<size_t>(fa.best_epoch - 1)] < 1e-3);

  Tensor<float> noise(Shape{4, 3, 32, 32});
  for (auto& v : noise.span()) v = 5.0f * u(rng);
  for (const auto& p : a.predict(noise)) {
    CHECK(p[0] >= 0);
    CHECK(p[1] >= 0);
  }
  const TraitEstimate e = a.estimate(val[0].image);
  CHECK(e.kind == TraitKind::kBM);
  CHECK(e.bm[0] == doctest::Approx(0.7).epsilon(0.1));

  cropsim::testing::TempDir dir;
  a.save(dir.path() / "reg.ckpt", {{"note", "x"}});
  BiomassRegressor c = BiomassRegressor::load(dir.path() / "reg.ckpt");
  CHECK(c.predict(noise) == a.predict(noise));
}

TEST_CASE("regressor samples require labels") {
  SequenceRecord r;
  r.sequence_id = "s";
  r.times = {7};
  r.images = {"x.png"};
  r.biomass = {std::nullopt};
  ImageStore store;
  CHECK_THROWS_AS(regressor_samples({r}, store), ManifestError);
}

TEST_CASE("traits CSV schema") {
  cropsim::testing::TempDir dir;
  TraitEstimate bm;
  bm.kind = TraitKind::kBM;
  bm.bm = {0.5, 0.25};
  TraitEstimate none;
  none.no_plant = true;
  write_traits_csv(dir.path() / "t.csv", {{"img0", pla_from_masks(InstanceMasks{4, 4, {rect_instance(4, 4, 0, 0, 2, 2)}}, 1.0)},
                                          {"img1", bm},
                                          {"img2", none}});
  std::ifstream f(dir.path() / "t.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "image_id,kind,pla_mm2,pla_percent,gsd_mm,pixels,bm_sw,bm_fb,flags");
  std::getline(f, line);
  CHECK(line == "img0,PLA,4,25,1,4,,,");
  std::getline(f, line);
  CHECK(line == "img1,BM,,,,,0.5,0.25,");
  std::getline(f, line);
  CHECK(line.find("no-plant") != std::string::npos);
}
