#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "cropsim/dataset.hpp"
#include "cropsim/synth.hpp"
#include "doctest.h"
#include "support/tempdir.hpp"

using namespace cropsim;
namespace fs = std::filesystem;

namespace {

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream f(p);
  for (const auto& l : lines) f << l << "\n";
}

std::string rec(const std::string& id, int t, int trt = 0, const std::string& split = "train") {
  return R"({"sequence_id":")" + id + R"(","time":)" + std::to_string(t) + R"(,"image":"img/)" + id + "_" +
         std::to_string(t) + R"(.png","treatment":)" + std::to_string(trt) + R"(,"bm_sw":0.5,"bm_fb":null,"split":")" +
         split + R"("})";
}

std::vector<SequenceRecord> fake_records(int n_seq, int n_img) {
  std::vector<SequenceRecord> out;
  for (int s = 0; s < n_seq; ++s) {
    SequenceRecord r;
    r.sequence_id = "s" + std::to_string(s);
    r.treatment_id = s % 3;
    r.split = "train";
    for (int i = 0; i < n_img; ++i) {
      r.times.push_back(7 * (i + 1));
      r.images.push_back("x");
      r.biomass.push_back(std::array<double, 2>{0.1 * i, 0.2 * i});
    }
    out.push_back(r);
  }
  return out;
}

Image ramp_image(int h, int w) {
  Image img(Shape{3, h, w});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(std::sin(0.37 * static_cast<double>(i)));
  return img;
}

float px(const Image& im, int64_t c, int64_t y, int64_t x) {
  return im[(c * im.dim(1) + y) * im.dim(2) + x];
}

}  // namespace

TEST_CASE("manifest groups records into sorted sequences") {
  cropsim::testing::TempDir dir;
  std::vector<std::string> lines;
  for (int s = 0; s < 3; ++s)
    for (int t : {21, 7, 14, 28}) lines.push_back(rec("p" + std::to_string(s), t, s));
  write_lines(dir.path() / "m.jsonl", lines);
  auto recs = load_manifest(dir.path() / "m.jsonl");
  REQUIRE(recs.size() == 3);
  for (const auto& r : recs) {
    CHECK(r.size() == 4);
    CHECK(std::is_sorted(r.times.begin(), r.times.end()));
    CHECK(r.images[0] == dir.path() / ("img/" + r.sequence_id + "_7.png"));
    CHECK_FALSE(r.biomass[0].has_value());
  }
  CHECK(recs[2].treatment_id == 2);
}

TEST_CASE("manifest errors name the offending line and sequence") {
  cropsim::testing::TempDir dir;
  write_lines(dir.path() / "dup.jsonl", {rec("a", 7), rec("a", 14), rec("a", 7)});
  try {
    load_manifest(dir.path() / "dup.jsonl");
    FAIL("expected an error");
  } catch (const ManifestError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":3:") != std::string::npos);
    CHECK(msg.find("sequence a") != std::string::npos);
  }
  write_lines(dir.path() / "bad.jsonl", {rec("a", 7), "{not json"});
  CHECK_THROWS_WITH_AS(load_manifest(dir.path() / "bad.jsonl"), doctest::Contains(":2:"), ManifestError);
  write_lines(dir.path() / "bm.jsonl", {rec("a", 7)});
  CHECK_THROWS_AS(load_manifest(dir.path() / "bm.jsonl", true), ManifestError);
  write_lines(dir.path() / "split.jsonl", {rec("a", 7, 0, "train"), rec("a", 14, 0, "test")});
  CHECK_THROWS_AS(load_manifest(dir.path() / "split.jsonl"), ManifestError);
  write_lines(dir.path() / "trt.jsonl", {rec("a", 7, 0), rec("a", 14, 1)});
  CHECK_THROWS_AS(load_manifest(dir.path() / "trt.jsonl"), ManifestError);
  CHECK_THROWS_AS(load_manifest(dir.path() / "missing.jsonl"), ManifestError);
}

TEST_CASE("epoch sampling protocol") {
  auto recs = fake_records(10, 5);
  auto pairs = sample_epoch(recs, 42);
  CHECK(pairs.size() == 50);
  std::multiset<std::pair<size_t, size_t>> inputs;
  for (const auto& p : pairs) {
    inputs.insert({p.seq, p.in});
    CHECK(p.ref < recs[p.seq].size());
  }
  std::multiset<std::pair<size_t, size_t>> expected;
  for (size_t s = 0; s < 10; ++s)
    for (size_t i = 0; i < 5; ++i) expected.insert({s, i});
  CHECK(inputs == expected);
  CHECK(sample_epoch(recs, 42) == pairs);
  CHECK_FALSE(sample_epoch(recs, 43) == pairs);
  CHECK_THROWS_AS(sample_epoch({}, 1), ManifestError);

  // self-pairs occur, references spread over the sequence
  int self = 0;
  std::map<size_t, int> ref_hist;
  for (uint64_t seed = 0; seed < 40; ++seed)
    for (const auto& p : sample_epoch(recs, seed)) {
      self += p.in == p.ref;
      ++ref_hist[p.ref];
    }
  CHECK(self > 0);
  for (const auto& [ref, count] : ref_hist) CHECK(std::abs(count - 400) < 80);
}

TEST_CASE("augmentation: no-op, involutions and rotations") {
  Image a = ramp_image(8, 8);
  SamplePair p{a, ramp_image(8, 8), {}, {}, "s"};
  SamplePair q = p;
  augment(q, AugmentConfig::none(), 7);
  CHECK(q.x_in == p.x_in);
  CHECK(q.x_ref == p.x_ref);
  CHECK(hflip(hflip(a)) == a);
  CHECK(vflip(vflip(a)) == a);
  CHECK(rot90(rot90(a, 1), 3) == a);
  CHECK(rot90(a, 2) == hflip(vflip(a)));
  CHECK(px(rot90(a, 1), 0, 0, 0) == px(a, 0, 0, 7));
  Image t = translate(a, 2, 1);
  CHECK(px(t, 0, 3, 5) == px(a, 0, 2, 3));
  CHECK(px(t, 0, 0, 0) == px(a, 0, 0, 0));
}

TEST_CASE("ShadowOut blends the rectangle only") {
  Image a = ramp_image(10, 12);
  Image b = a;
  shadow_out(b, Rect{2, 3, 7, 6}, 0.5, -1.0f);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 10; ++y)
      for (int64_t x = 0; x < 12; ++x) {
        const bool inside = x >= 2 && x < 7 && y >= 3 && y < 6;
        const float expect = inside ? 0.5f * px(a, c, y, x) + 0.5f * -1.0f : px(a, c, y, x);
        CHECK(px(b, c, y, x) == doctest::Approx(expect).epsilon(1e-6));
      }
}

TEST_CASE("geometric augmentation is shared by input and reference") {
  Image a = ramp_image(16, 16);
  AugmentConfig cfg;
  cfg.p_shadow = 0;
  for (uint64_t seed = 0; seed < 30; ++seed) {
    SamplePair p{a, a, {}, {}, "s"};
    augment(p, cfg, seed);
    CHECK(p.x_in == p.x_ref);
  }
  // ShadowOut never touches the reference
  cfg = AugmentConfig::none();
  cfg.p_shadow = 1.0;
  SamplePair p{a, a, {}, {}, "s"};
  augment(p, cfg, 3);
  CHECK(p.x_ref == a);
  CHECK_FALSE(p.x_in == a);
}

TEST_CASE("biomass normaliser uses per-species training statistics") {
  auto recs = fake_records(2, 3);
  BiomassNormalizer n = fit_biomass_normalizer(recs);
  CHECK(n.mean[0] == doctest::Approx(0.1));
  CHECK(n.mean[1] == doctest::Approx(0.2));
  CHECK(n.stddev[0] == doctest::Approx(std::sqrt(2.0 / 3.0) * 0.1));
}

TEST_CASE("synthetic logistic growth and allometry") {
  const SpeciesGrowth g = species_growth(1, 2);
  CHECK(logistic_area(g, 0) == doctest::Approx(g.a_max / (1 + std::exp(g.k * g.t0))));
  CHECK(logistic_area(g, 0) < 0.02 * g.a_max);
  CHECK(logistic_area(g, g.t0) == doctest::Approx(g.a_max / 2));
  CHECK(treatment_info(5).composition == Composition::kMixture);
  CHECK(treatment_info(5).high_density);
  CHECK(density_partner(4) == 5);
  // high density carries more expected biomass for every composition
  for (int c = 0; c < 6; c += 2) {
    auto lo = expected_biomass(c, 42, 64), hi = expected_biomass(c + 1, 42, 64);
    CHECK(hi[0] + hi[1] > lo[0] + lo[1]);
  }
}

TEST_CASE("synthetic frames: monotone PLA, mask area matches analytic area") {
  SynthConfig cfg;
  cfg.n_sequences = 12;
  cfg.image_size = 256;
  auto seqs = synth_sequences(cfg);
  for (const auto& s : seqs) {
    int64_t prev = -1;
    for (int t = 7; t <= 56; t += 7) {
      SynthFrame f = render_frame(s, t, 256);
      CHECK(f.pla_px >= prev);
      prev = f.pla_px;
      for (const auto& inst : f.masks.instances) {
        // match instance to its plant by mask containment of the centre
        for (const auto& p : s.plants) {
          const int cx = static_cast<int>(p.cx), cy = static_cast<int>(p.cy);
          if (!inst.mask[static_cast<size_t>(cy * 256 + cx)]) continue;
          const double analytic = p.area_px(t, 256);
          if (analytic >= 400) CHECK(std::abs(static_cast<double>(inst.area()) - analytic) <= 0.02 * analytic);
        }
      }
      const auto px_range = f.image.span();
      CHECK(std::all_of(px_range.begin(), px_range.end(), [](float v) { return v >= -1.0f && v <= 1.0f; }));
    }
  }
}

TEST_CASE("synth_generate is deterministic and round-trips through the manifest") {
  cropsim::testing::TempDir a, b;
  SynthConfig cfg;
  cfg.n_sequences = 8;
  cfg.n_times = 3;
  cfg.image_size = 32;
  auto ma = synth_generate(cfg, a.path());
  auto mb = synth_generate(cfg, b.path());
  auto ra = load_manifest(ma, true);
  REQUIRE(ra.size() == 8);
  for (const auto& r : ra) {
    CHECK(r.size() == 3);
    for (size_t i = 0; i < r.size(); ++i) {
      const auto rel = fs::relative(r.images[i], a.path());
      std::ifstream fa(r.images[i], std::ios::binary), fb(b.path() / rel, std::ios::binary);
      std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
      CHECK(sa == sb);
    }
  }
  // manifest written back from the records is byte-identical
  std::vector<ManifestEntry> entries;
  for (const auto& r : ra)
    for (size_t i = 0; i < r.size(); ++i)
      entries.push_back({r.sequence_id, r.times[i], fs::relative(r.images[i], a.path()).string(), r.treatment_id,
                         (*r.biomass[i])[0], (*r.biomass[i])[1], r.split});
  write_manifest(a.path() / "again.jsonl", entries);
  auto rb = load_manifest(a.path() / "again.jsonl", true);
  REQUIRE(rb.size() == ra.size());
  for (size_t s = 0; s < ra.size(); ++s) {
    CHECK(rb[s].times == ra[s].times);
    CHECK(rb[s].images == ra[s].images);
    CHECK(rb[s].biomass == ra[s].biomass);
    CHECK(rb[s].split == ra[s].split);
  }
  // split hygiene
  std::map<std::string, std::string> split_of;
  for (const auto& r : ra) CHECK(split_of.emplace(r.sequence_id, r.split).second);
  // PNG round trip is exact on the 8-bit grid
  Image img = read_png(ra[0].images[0]);
  CHECK(quantize_u8(img) == img);
}
