#include "cropsim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "cropsim/dataset.hpp"
#include "json.hpp"

namespace cropsim {

namespace fs = std::filesystem;

TreatmentInfo treatment_info(int c) {
  if (c < 0) throw std::invalid_argument("negative treatment id");
  TreatmentInfo info{static_cast<Composition>((c / 2) % 3), c % 2 == 1, ""};
  static const char* comp_names[] = {"wheat", "bean", "mixture"};
  info.name = std::string(comp_names[static_cast<int>(info.composition)]) + (info.high_density ? "-high" : "-low");
  return info;
}

int density_partner(int c) { return c % 2 == 0 ? c + 1 : c - 1; }

SpeciesGrowth species_growth(int species, int treatment) {
  SpeciesGrowth g = species == 0 ? SpeciesGrowth{0.17, 27.0, 0.028} : SpeciesGrowth{0.13, 31.0, 0.036};
  if (treatment_info(treatment).high_density) g.a_max *= 0.9;
  return g;
}

double logistic_area(const SpeciesGrowth& g, double t) { return g.a_max / (1.0 + std::exp(-g.k * (t - g.t0))); }

namespace {

double shape_factor(double depth) { return std::numbers::pi * (1.0 + 0.5 * depth * depth); }

// Grid slots and species for a treatment, in units of the image side.
struct Slot {
  double x, y;
  int species;
};

std::vector<Slot> layout(int treatment) {
  const TreatmentInfo info = treatment_info(treatment);
  const int n = info.high_density ? 3 : 2;
  std::vector<Slot> slots;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      int species = 0;
      if (info.composition == Composition::kBean) species = 1;
      if (info.composition == Composition::kMixture) species = (i + j) % 2;
      slots.push_back({(j + 0.5) / n, (i + 0.5) / n, species});
    }
  return slots;
}

PlantSpec make_plant(const Slot& s, int treatment, int size) {
  PlantSpec p;
  p.species = s.species;
  p.cx = s.x * size;
  p.cy = s.y * size;
  p.growth = species_growth(s.species, treatment);
  p.lobes = s.species == 0 ? 6 : 4;
  p.lobe_depth = 0.15;
  return p;
}

std::array<float, 3> species_colour(int species) {
  return species == 0 ? std::array<float, 3>{0.62f, 0.74f, 0.22f} : std::array<float, 3>{0.16f, 0.46f, 0.16f};
}

// Smooth soil texture: bilinear interpolation of a coarse random lattice.
std::vector<float> soil_texture(uint64_t seed, int size) {
  constexpr int kGrid = 6;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  float lattice[kGrid][kGrid];
  for (auto& row : lattice)
    for (float& v : row) v = u(rng);
  std::vector<float> tex(static_cast<size_t>(size) * static_cast<size_t>(size));
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float gx = (x + 0.5f) / size * (kGrid - 1), gy = (y + 0.5f) / size * (kGrid - 1);
      const int ix = std::min(static_cast<int>(gx), kGrid - 2), iy = std::min(static_cast<int>(gy), kGrid - 2);
      const float fx = gx - ix, fy = gy - iy;
      const float top = lattice[iy][ix] * (1 - fx) + lattice[iy][ix + 1] * fx;
      const float bot = lattice[iy + 1][ix] * (1 - fx) + lattice[iy + 1][ix + 1] * fx;
      tex[static_cast<size_t>(y * size + x)] = top * (1 - fy) + bot * fy;
    }
  return tex;
}

}  // namespace

double PlantSpec::area_px(double t, int size) const {
  return logistic_area(growth, t) * static_cast<double>(size) * static_cast<double>(size);
}

std::vector<SynthSequence> synth_sequences(const SynthConfig& cfg) {
  if (cfg.n_sequences < 1 || cfg.n_times < 1 || cfg.n_treatments < 1 || cfg.image_size < 16)
    throw std::invalid_argument("synthetic config needs >= 1 sequence, time, treatment and size >= 16");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  std::vector<int> order(static_cast<size_t>(cfg.n_sequences));
  for (int i = 0; i < cfg.n_sequences; ++i) order[static_cast<size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const int n_test = static_cast<int>(std::lround(cfg.test_fraction * cfg.n_sequences));
  const int n_val = static_cast<int>(std::lround(cfg.val_fraction * cfg.n_sequences));
  std::vector<std::string> split(static_cast<size_t>(cfg.n_sequences), "train");
  for (int k = 0; k < n_test + n_val && k < cfg.n_sequences; ++k)
    split[static_cast<size_t>(order[static_cast<size_t>(k)])] = k < n_test ? "test" : "val";

  const double jitter = 0.023 * cfg.image_size;
  std::vector<SynthSequence> seqs;
  for (int i = 0; i < cfg.n_sequences; ++i) {
    SynthSequence s;
    char id[32];
    std::snprintf(id, sizeof(id), "seq%04d", i);
    s.sequence_id = id;
    s.treatment = i % cfg.n_treatments;
    s.split = split[static_cast<size_t>(i)];
    std::normal_distribution<double> soil_jit(0.0, 0.02);
    s.soil = {static_cast<float>(0.45 + soil_jit(rng)), static_cast<float>(0.33 + soil_jit(rng)),
              static_cast<float>(0.22 + soil_jit(rng))};
    s.texture_seed = rng();
    for (const Slot& slot : layout(s.treatment)) {
      PlantSpec p = make_plant(slot, s.treatment, cfg.image_size);
      p.cx += (2 * u(rng) - 1) * jitter;
      p.cy += (2 * u(rng) - 1) * jitter;
      p.growth.a_max *= 0.85 + 0.2 * u(rng);
      p.growth.k *= 0.9 + 0.2 * u(rng);
      p.growth.t0 += (2 * u(rng) - 1) * 2.0;
      p.phase = u(rng) * 2 * std::numbers::pi;
      s.plants.push_back(p);
    }
    seqs.push_back(std::move(s));
  }
  return seqs;
}

std::array<double, 2> sequence_biomass(const SynthSequence& seq, double t, int size) {
  std::array<double, 2> bm{0, 0};
  for (const auto& p : seq.plants) {
    const double a = p.area_px(t, size) / (static_cast<double>(size) * size);
    bm[static_cast<size_t>(p.species)] += kBiomassBeta * std::pow(a, 1.5);
  }
  return bm;
}

std::array<double, 2> expected_biomass(int treatment, double t, int size) {
  SynthSequence nominal;
  nominal.treatment = treatment;
  for (const Slot& slot : layout(treatment)) {
    PlantSpec p = make_plant(slot, treatment, size);
    p.growth.a_max *= 0.95;  // mean of the per-plant spread
    nominal.plants.push_back(p);
  }
  return sequence_biomass(nominal, t, size);
}

SynthFrame render_frame(const SynthSequence& seq, int t, int size) {
  SynthFrame f;
  f.image = Image(Shape{3, size, size});
  f.masks.height = size;
  f.masks.width = size;
  std::vector<float> tex = soil_texture(seq.texture_seed, size);
  std::mt19937_64 light_rng(seq.texture_seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(t + 1000)));
  const float light = 0.97f + 0.06f * std::uniform_real_distribution<float>(0.0f, 1.0f)(light_rng);

  std::vector<float> rgb(static_cast<size_t>(3 * size * size));
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < size * size; ++i)
      rgb[static_cast<size_t>(c * size * size + i)] = seq.soil[static_cast<size_t>(c)] + 0.03f * tex[static_cast<size_t>(i)];

  for (const auto& p : seq.plants) {
    const double area = p.area_px(t, size);
    const double r0 = std::sqrt(area / shape_factor(p.lobe_depth));
    Instance inst;
    inst.label = p.species;
    inst.mask.assign(static_cast<size_t>(size * size), 0);
    const auto col = species_colour(p.species);
    const double reach = r0 * (1 + p.lobe_depth) + 1;
    const int y0 = std::max(0, static_cast<int>(p.cy - reach)), y1 = std::min(size - 1, static_cast<int>(p.cy + reach));
    const int x0 = std::max(0, static_cast<int>(p.cx - reach)), x1 = std::min(size - 1, static_cast<int>(p.cx + reach));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - p.cx, dy = y + 0.5 - p.cy;
        const double rho = std::hypot(dx, dy);
        const double r = r0 * (1 + p.lobe_depth * std::cos(p.lobes * std::atan2(dy, dx) + p.phase));
        if (rho > r) continue;
        const size_t i = static_cast<size_t>(y * size + x);
        inst.mask[i] = 1;
        const float shade = static_cast<float>(1.0 - 0.25 * (rho / r) * (rho / r));
        for (int c = 0; c < 3; ++c) rgb[static_cast<size_t>(c * size * size) + i] = col[static_cast<size_t>(c)] * shade;
      }
    if (inst.area() == 0) continue;
    update_bbox(inst, size);
    f.masks.instances.push_back(std::move(inst));
  }
  for (uint8_t v : union_mask(f.masks)) f.pla_px += v;
  for (int64_t i = 0; i < f.image.numel(); ++i)
    f.image[i] = std::clamp(rgb[static_cast<size_t>(i)] * light, 0.0f, 1.0f) * 2.0f - 1.0f;
  f.biomass = sequence_biomass(seq, t, size);
  return f;
}

fs::path synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  std::ofstream gt(out_dir / "ground_truth.jsonl");
  if (!gt) throw std::runtime_error("cannot write into " + out_dir.string());
  for (const auto& seq : synth_sequences(cfg)) {
    for (int k = 0; k < cfg.n_times; ++k) {
      const int t = cfg.first_day + k * cfg.day_step;
      SynthFrame f = render_frame(seq, t, cfg.image_size);
      const std::string stem = seq.sequence_id + "_t" + std::to_string(t);
      write_png(out_dir / "images" / (stem + ".png"), f.image);
      write_masks_json(out_dir / "masks" / (stem + ".json"), f.masks);
      entries.push_back({seq.sequence_id, t, "images/" + stem + ".png", seq.treatment, f.biomass[0], f.biomass[1],
                         seq.split});
      nlohmann::json j = {{"sequence_id", seq.sequence_id}, {"time", t},
                          {"pla_px", f.pla_px},             {"masks", "masks/" + stem + ".json"},
                          {"bm_sw", f.biomass[0]},          {"bm_fb", f.biomass[1]}};
      gt << j.dump() << "\n";
    }
  }
  const fs::path manifest = out_dir / "manifest.jsonl";
  write_manifest(manifest, entries);
  return manifest;
}

std::map<std::pair<std::string, int>, GroundTruth> load_ground_truth(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open ground truth " + path.string());
  std::map<std::pair<std::string, int>, GroundTruth> out;
  std::string line;
  for (int n = 1; std::getline(f, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      GroundTruth g;
      g.sequence_id = j.at("sequence_id").get<std::string>();
      g.time = j.at("time").get<int>();
      g.pla_px = j.at("pla_px").get<int64_t>();
      g.masks = path.parent_path() / j.at("masks").get<std::string>();
      g.biomass = {j.at("bm_sw").get<double>(), j.at("bm_fb").get<double>()};
      out[{g.sequence_id, g.time}] = g;
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace cropsim
