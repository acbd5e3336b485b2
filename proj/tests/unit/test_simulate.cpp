#include <cmath>
#include <random>

#include "cropsim/simulate.hpp"
#include "cropsim/synth.hpp"
#include "doctest.h"
#include "support/tempdir.hpp"

using namespace cropsim;

namespace {

struct Fixture {
  cropsim::testing::TempDir dir;
  std::vector<SequenceRecord> all;
  ImageStore store;
  std::mt19937_64 rng{5};
  ModelConfig model;
  Generator<float> gen;
  BiomassRegressor reg;
  FeatureExtractor fx;

  Fixture() : all(make_records(dir.path())), model(make_model()), gen(model, rng), reg(4, rng) {}

  static std::vector<SequenceRecord> make_records(const std::filesystem::path& p) {
    SynthConfig s;
    s.n_sequences = 6;
    s.n_times = 3;
    s.image_size = 32;
    return load_manifest(synth_generate(s, p), true);
  }
  static ModelConfig make_model() {
    ModelConfig m;
    m.image_size = 32;
    m.gen_width = 4;
    m.critic_width = 4;
    m.noise_dim = 16;
    m.embed_dim = 8;
    m.cond.active = {true, true, true};
    m.cond.n_treatments = 6;
    m.cond.biomass_norm.mean = {0.3, 0.2};
    m.cond.biomass_norm.stddev = {0.2, 0.1};
    return m;
  }
};

SequenceRecord labelled_record() {
  SequenceRecord r;
  r.sequence_id = "s";
  r.treatment_id = 2;
  r.times = {7, 14, 28};
  r.images = {"a.png", "b.png", "c.png"};
  r.biomass = {std::array<double, 2>{0.0, 0.2}, std::nullopt, std::array<double, 2>{0.6, 1.0}};
  return r;
}

}  // namespace

TEST_CASE("biomass interpolates between labelled days and holds outside") {
  const SequenceRecord r = labelled_record();
  CHECK((*biomass_at(r, 7))[0] == doctest::Approx(0.0));
  CHECK((*biomass_at(r, 14))[0] == doctest::Approx(0.6 * 7.0 / 21.0));
  CHECK((*biomass_at(r, 21))[1] == doctest::Approx(0.2 + 0.8 * 14.0 / 21.0));
  CHECK((*biomass_at(r, 0))[1] == doctest::Approx(0.2));
  CHECK((*biomass_at(r, 60))[0] == doctest::Approx(0.6));
  const ConditionSet y = conditions_at(r, 21);
  CHECK(y.t == 21);
  CHECK(y.c == 2);
  SequenceRecord bare = r;
  bare.biomass.assign(3, std::nullopt);
  CHECK_FALSE(biomass_at(bare, 10).has_value());
}

TEST_CASE("sign test tail probabilities") {
  CHECK(sign_test_p({1, 2, 3, 4, 5}) == doctest::Approx(1.0 / 32));
  CHECK(sign_test_p({1, -1}) == doctest::Approx(0.75));
  CHECK(sign_test_p({0, 0, 3}) == doctest::Approx(0.5));
  CHECK(sign_test_p({}) == 1.0);
  // P(X >= 8 | n = 10) = (45 + 10 + 1) / 1024
  CHECK(sign_test_p({1, 1, 1, 1, 1, 1, 1, 1, -1, -1}) == doctest::Approx(56.0 / 1024));
}

TEST_CASE("ME monotone fraction on a hand grid") {
  std::vector<BiomassSweepRow> rows;
  for (int s : {50, 100, 150})
    for (int f : {50, 100, 150}) {
      BiomassSweepRow r;
      r.scale_sw = s;
      r.scale_fb = f;
      r.sw.me = s / 100.0;
      r.fb.me = f == 150 ? 0.0 : f / 100.0;
      rows.push_back(r);
    }
  CHECK(me_monotone_fraction(rows, 0) == doctest::Approx(1.0));
  CHECK(me_monotone_fraction(rows, 1) == doctest::Approx(0.5));
}

TEST_CASE("predictions do not depend on batching") {
  Fixture f;
  const auto& r = f.all.front();
  std::vector<Image> xs;
  std::vector<ConditionSet> yi, yg;
  std::vector<uint64_t> seeds;
  for (size_t i = 0; i < r.size(); ++i)
    for (size_t j = 0; j < r.size(); ++j) {
      xs.push_back(f.store.get(r.images[i]));
      yi.push_back(r.conditions(i));
      yg.push_back(r.conditions(j));
      seeds.push_back(mix_seed(9, seeds.size()));
    }
  const Tensor<float> a = predict_images(f.gen, xs, yi, yg, seeds, 16);
  const Tensor<float> b = predict_images(f.gen, xs, yi, yg, seeds, 2);
  for (int64_t k = 0; k < a.numel(); ++k) REQUIRE(a[k] == doctest::Approx(b[k]).epsilon(1e-5));
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
  CHECK_THROWS(predict_images(f.gen, xs, yi, yg, {1, 2}));
}

TEST_CASE("variability matches a direct per-pixel std") {
  Fixture f;
  const auto& r = f.all.front();
  const Image x = f.store.get(r.images[0]);
  const Variability one = variability(f.gen, x, r.conditions(0), r.conditions(2), 1, 4);
  CHECK(one.max == 0.0);
  CHECK(one.mean == 0.0);

  const int n = 5;
  const Variability v = variability(f.gen, x, r.conditions(0), r.conditions(2), n, 4);
  std::vector<Image> xs(n, x);
  std::vector<ConditionSet> yi(n, r.conditions(0)), yg(n, r.conditions(2));
  std::vector<uint64_t> seeds;
  for (int k = 0; k < n; ++k) seeds.push_back(mix_seed(4, k));
  const Tensor<float> d = predict_images(f.gen, xs, yi, yg, seeds);
  const int64_t hw = 32 * 32;
  double worst = 0, mean = 0;
  for (int64_t p = 0; p < hw; ++p) {
    double s = 0;
    for (int c = 0; c < 3; ++c) {
      std::vector<double> vals;
      for (int k = 0; k < n; ++k) vals.push_back((d[(k * 3 + c) * hw + p] + 1.0) / 2.0);
      double m = 0, q = 0;
      for (double u : vals) m += u / n;
      for (double u : vals) q += (u - m) * (u - m) / n;
      s += std::sqrt(q) / 3;
    }
    worst = std::max(worst, std::abs(s - v.stddev[p]));
    mean += s / hw;
  }
  CHECK(worst < 1e-6);
  CHECK(v.mean == doctest::Approx(mean));
  CHECK(v.max > 0);
  CHECK(v.stddev[v.argmax] == v.max);
  CHECK(v.visual.shape() == Shape{3, 32, 32});
}

TEST_CASE("evaluation covers every ordered pair") {
  Fixture f;
  auto test = filter_split(f.all, "train");
  test.resize(2);
  EvalConfig cfg;
  cfg.is_mixture = [](int c) { return treatment_info(c).composition == Composition::kMixture; };
  const EvalResult e = evaluate(f.gen, test, f.store, f.fx, &f.reg, cfg);
  CHECK(e.report.pairs.size() == 18);
  CHECK(e.report.buckets.at("T0").count == 6);
  CHECK(e.report.fid.has_value());
  REQUIRE(e.generated.has_value());
  CHECK(e.generated->all.n == 18);
  CHECK(e.real->all.n == 6);
  for (const auto& p : e.report.pairs) CHECK((p.ms_ssim >= 0 && p.ms_ssim <= 1));
  cropsim::testing::TempDir out;
  write_eval_json(out.path() / "m.json", e, {{"condition", "t,c,b"}});
  CHECK(std::filesystem::file_size(out.path() / "m.json") > 100);
}

TEST_CASE("time sweep flags days outside the observed range") {
  Fixture f;
  const auto& r = f.all.front();
  TimeSweepConfig cfg;
  cfg.times = {r.times[0], r.times[1], r.times.back() + 7};
  cfg.draws = 3;
  const TimeSweep s = sweep_time(f.gen, r, 0, f.store, f.fx, &f.reg, cfg);
  REQUIRE(s.rows.size() == 3);
  CHECK_FALSE(s.rows[0].ood);
  CHECK(s.rows[0].has_reference);
  CHECK(s.rows[2].ood);
  CHECK_FALSE(s.rows[2].has_reference);
  CHECK(s.grid.dim(1) == 3 * 32 + 4 * 2);
  CHECK(s.grid.dim(2) == 3 * 32 + 4 * 2);
}

TEST_CASE("treatment change to itself leaves predictions unchanged") {
  Fixture f;
  TreatmentSweepConfig cfg;
  for (int c = 0; c < 6; ++c) cfg.change[c] = c;
  cfg.image_size = 32;
  const TreatmentSweep s = sweep_treatment(f.gen, f.reg, f.all, f.store, cfg);
  REQUIRE_FALSE(s.replicates.empty());
  for (const auto& rep : s.replicates) {
    CHECK(rep.diff() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(rep.t_in < rep.t_gen);
  }
  cfg.change = {{0, 9}};
  CHECK_THROWS_AS(sweep_treatment(f.gen, f.reg, f.all, f.store, cfg), ConditionError);
}

TEST_CASE("biomass sweep always contains the 100:100 anchor") {
  Fixture f;
  BiomassSweepConfig cfg;
  cfg.scales = {50, 150};
  cfg.max_pairs = 5;
  const BiomassSweep s = sweep_biomass(f.gen, f.reg, f.all, f.store, cfg);
  CHECK(s.rows.size() == 9);
  bool anchor = false;
  for (const auto& r : s.rows) {
    anchor = anchor || (r.scale_sw == 100 && r.scale_fb == 100);
    CHECK(r.n == 5);
    CHECK(std::abs(r.sw.me) <= r.sw.mae + 1e-12);
  }
  CHECK(anchor);
  CHECK_FALSE(s.warnings.empty());
}
