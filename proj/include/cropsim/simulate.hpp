#pragma once

// Inference-side experiments: test-set evaluation, time sweeps, variability
// images, treatment-change and biomass-ratio simulations.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cropsim/dataset.hpp"
#include "cropsim/generator.hpp"
#include "cropsim/metrics.hpp"
#include "cropsim/traits.hpp"

namespace cropsim {

/// Noise for each sample comes from its own seed, so results do not depend on batching.
Tensor<float> predict_images(Generator<float>& gen, const std::vector<Image>& x_in, const std::vector<ConditionSet>& y_in,
                             const std::vector<ConditionSet>& y_gen, const std::vector<uint64_t>& noise_seeds,
                             size_t batch = 16);

uint64_t mix_seed(uint64_t a, uint64_t b);

/// Biomass at any day: linear between labelled days, held constant outside.
std::optional<std::array<double, 2>> biomass_at(const SequenceRecord& r, int t);
/// Condition set at day t (biomass interpolated when t has no image).
ConditionSet conditions_at(const SequenceRecord& r, int t);

// ---------------------------------------------------------------- eval

struct EvalConfig {
  uint64_t seed = 0;
  bool fid = true;
  size_t batch = 16;
  std::function<bool(int)> is_mixture;  // treatment -> mixture plot; empty = none
};

struct TraitErrorSet {
  int64_t n = 0;
  MaeMe sw, fb;
  double mean_mae() const { return 0.5 * (sw.mae + fb.mae); }
};

struct TraitSummary {
  TraitErrorSet all, mixture;
};

struct EvalResult {
  MetricReport report;
  std::optional<TraitSummary> generated;  // regressor on generated images vs reference labels
  std::optional<TraitSummary> real;       // regressor on the real reference images
};

/// Every ordered (input, reference) pair within each sequence.
EvalResult evaluate(Generator<float>& gen, const std::vector<SequenceRecord>& records, ImageStore& store,
                    const FeatureExtractor& fx, BiomassRegressor* regressor, const EvalConfig& cfg);
void write_eval_json(const std::filesystem::path& path, const EvalResult& r, const nlohmann::json& extra = {});

// ---------------------------------------------------------------- variability

struct Variability {
  int64_t draws = 0;
  Tensor<double> stddev;  // H x W, channel mean of per-pixel std on [0, 1] intensities
  Image visual;           // stddev x 4, clipped, grey
  double mean = 0;
  double max = 0;
  int64_t argmax = 0;  // row-major pixel index of the maximum
};

Variability variability(Generator<float>& gen, const Image& x_in, const ConditionSet& y_in, const ConditionSet& y_gen,
                        int draws, uint64_t seed);
void write_stddev_csv(const std::filesystem::path& path, const Tensor<double>& stddev);

// ---------------------------------------------------------------- time sweep

struct TimeSweepConfig {
  std::vector<int> times;
  int draws = 10;
  uint64_t seed = 0;
  double gsd_mm = 0.23;
};

struct TimeSweepRow {
  std::string sequence_id;
  int t_in = 0;
  int t_gen = 0;
  bool ood = false;
  bool has_reference = false;
  double ms_ssim = 0;
  double perceptual = 0;
  double pla_gen = 0;
  double pla_ref = 0;
  std::optional<std::array<double, 2>> bm_gen, bm_ref;
  double std_mean = 0;
};

struct TimeSweep {
  std::vector<TimeSweepRow> rows;
  Image grid;  // rows: reference, generated, variability; one column per time
};

/// Days outside the sequence's observed range are out of distribution: drawn
/// with an orange border and reported without metrics.
TimeSweep sweep_time(Generator<float>& gen, const SequenceRecord& r, size_t input, ImageStore& store,
                     const FeatureExtractor& fx, BiomassRegressor* regressor, const TimeSweepConfig& cfg);
void write_time_sweep_csv(const std::filesystem::path& path, const std::vector<TimeSweepRow>& rows, bool append = false);

// ---------------------------------------------------------------- treatment change

struct TreatmentSweepConfig {
  /// c_in -> c_gen. Empty: low-density treatments to their high-density partner.
  std::map<int, int> change;
  int t_gen = 0;  // 0 = last day of each sequence
  uint64_t seed = 0;
  int image_size = 64;
};

struct TreatmentReplicate {
  std::string sequence_id;
  int t_in = 0;
  int t_gen = 0;
  int c_in = 0;
  int c_gen = 0;
  std::array<double, 2> original{0, 0}, changed{0, 0};
  double diff() const { return changed[0] + changed[1] - original[0] - original[1]; }
};

struct TreatmentRow {
  int treatment = 0;
  std::string variant;  // original | changed
  int c_gen = 0;
  int64_t n = 0;
  std::array<double, 2> mean{0, 0}, sd{0, 0};
  double total_mean = 0, total_sd = 0;
  std::array<double, 2> target{0, 0};  // mean biomass condition (process-model value)
};

struct TreatmentSweep {
  std::vector<TreatmentReplicate> replicates;
  std::vector<TreatmentRow> rows;
  Image grid;  // per treatment: input, original prediction, changed prediction
};

/// The changed variant's biomass condition is the sequence's biomass scaled
/// by the expected-biomass ratio of the two treatments.
TreatmentSweep sweep_treatment(Generator<float>& gen, BiomassRegressor& regressor,
                               const std::vector<SequenceRecord>& records, ImageStore& store,
                               const TreatmentSweepConfig& cfg);
void write_treatment_csv(const std::filesystem::path& path, const std::vector<TreatmentRow>& rows);
void write_replicates_csv(const std::filesystem::path& path, const std::vector<TreatmentReplicate>& reps);

/// One-sided sign test: P(X >= positives) for X ~ Binomial(n, 1/2), zeros dropped.
double sign_test_p(const std::vector<double>& diffs);

// ---------------------------------------------------------------- biomass ratios

struct BiomassSweepConfig {
  std::vector<int> scales = {50, 75, 100, 125, 150};  // percent, applied per species
  size_t max_pairs = 200;
  uint64_t seed = 0;
};

struct BiomassSweepRow {
  int scale_sw = 100;
  int scale_fb = 100;
  int64_t n = 0;
  MaeMe sw, fb;
};

struct BiomassSweep {
  std::vector<BiomassSweepRow> rows;
  std::vector<std::string> warnings;
};

BiomassSweep sweep_biomass(Generator<float>& gen, BiomassRegressor& regressor, const std::vector<SequenceRecord>& records,
                           ImageStore& store, const BiomassSweepConfig& cfg);
void write_biomass_csv(const std::filesystem::path& path, const std::vector<BiomassSweepRow>& rows);

/// Fraction of adjacent grid pairs (same other-species scale) along which the
/// species' ME does not decrease.
double me_monotone_fraction(const std::vector<BiomassSweepRow>& rows, int species);

}  // namespace cropsim
