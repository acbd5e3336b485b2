#pragma once

// Procedural crop sequences with analytically known traits.
//
// Each sequence is one plot seen from above: lobed rosettes of two species
// (spring wheat, faba bean) on a grid over lightly textured soil. Plants grow
// in place following a logistic area curve; treatment = species composition
// x sowing density. Simulated biomass per species is beta * sum_p a_p^1.5,
// with a_p the plant's area as a fraction of the image.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cropsim/image.hpp"
#include "cropsim/masks.hpp"

namespace cropsim {

struct SynthConfig {
  int n_sequences = 200;
  int n_times = 8;
  int first_day = 7;
  int day_step = 7;
  int image_size = 64;
  int n_treatments = 6;
  double val_fraction = 0.125;
  double test_fraction = 0.125;
  uint64_t seed = 1;
};

enum class Composition { kWheat = 0, kBean = 1, kMixture = 2 };

struct TreatmentInfo {
  Composition composition;
  bool high_density;
  std::string name;
};

/// Treatment c -> composition (c / 2 mod 3) and density (c mod 2).
TreatmentInfo treatment_info(int c);
/// The treatment with the same composition and the other density.
int density_partner(int c);

inline constexpr double kBiomassBeta = 20.0;  // t/ha per unit a^1.5

struct SpeciesGrowth {
  double k;       // 1/day
  double t0;      // day of half-maximal area
  double a_max;   // maximal area, fraction of the image
};

/// Nominal growth parameters of a species under a treatment.
SpeciesGrowth species_growth(int species, int treatment);

/// A(t) = a_max / (1 + exp(-k (t - t0))).
double logistic_area(const SpeciesGrowth& g, double t);

struct PlantSpec {
  int species = 0;
  double cx = 0, cy = 0;  // pixel centre
  SpeciesGrowth growth;
  int lobes = 5;
  double lobe_depth = 0.15;
  double phase = 0;

  /// Analytic area in pixels at day t for an image of side `size`.
  double area_px(double t, int size) const;
};

struct SynthSequence {
  std::string sequence_id;
  int treatment = 0;
  std::string split;
  std::vector<PlantSpec> plants;
  std::array<float, 3> soil{0, 0, 0};
  uint64_t texture_seed = 0;
};

struct SynthFrame {
  Image image;
  InstanceMasks masks;
  int64_t pla_px = 0;
  std::array<double, 2> biomass{0, 0};  // t/ha, SW then FB
};

/// Builds the sequence layouts (deterministic in the config).
std::vector<SynthSequence> synth_sequences(const SynthConfig& cfg);

/// Renders one sequence at day t.
SynthFrame render_frame(const SynthSequence& seq, int t, int size);

/// Biomass of a sequence at day t from the analytic plant areas.
std::array<double, 2> sequence_biomass(const SynthSequence& seq, double t, int size);

/// Process-model stand-in: biomass of a nominal plot of treatment c at day t.
std::array<double, 2> expected_biomass(int treatment, double t, int size);

/// Writes images/, masks/, manifest.jsonl and ground_truth.jsonl under
/// out_dir; returns the manifest path.
std::filesystem::path synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

struct GroundTruth {
  std::string sequence_id;
  int time = 0;
  int64_t pla_px = 0;
  std::filesystem::path masks;  // resolved against the sidecar directory
  std::array<double, 2> biomass{0, 0};
};

/// ground_truth.jsonl keyed by (sequence_id, time).
std::map<std::pair<std::string, int>, GroundTruth> load_ground_truth(const std::filesystem::path& path);

}  // namespace cropsim
