#pragma once

// Manifest ingestion, the input/reference sampling protocol and augmentation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cropsim/conditions.hpp"
#include "cropsim/image.hpp"

namespace cropsim {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One manifest line.
struct ManifestEntry {
  std::string sequence_id;
  int time = 0;
  std::string image;  // relative to the manifest directory
  int treatment = 0;
  std::optional<double> bm_sw, bm_fb;
  std::string split;
};

struct SequenceRecord {
  std::string sequence_id;
  int treatment_id = 0;
  std::string split;
  // Parallel arrays sorted by time.
  std::vector<int> times;
  std::vector<std::filesystem::path> images;
  std::vector<std::optional<std::array<double, 2>>> biomass;

  size_t size() const { return times.size(); }
  ConditionSet conditions(size_t i) const { return {times[i], treatment_id, biomass[i]}; }
  /// Index of an image time, or -1.
  int index_of(int time) const;
};

/// Reads a JSONL manifest. Image paths are resolved against the manifest's
/// directory; images are not loaded.
std::vector<SequenceRecord> load_manifest(const std::filesystem::path& path, bool require_biomass = false);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

std::vector<SequenceRecord> filter_split(const std::vector<SequenceRecord>& records, const std::string& split);

/// Per-species z-score statistics over every image of the given records.
BiomassNormalizer fit_biomass_normalizer(const std::vector<SequenceRecord>& records);

/// Largest treatment id + 1.
int treatment_count(const std::vector<SequenceRecord>& records);

/// (sequence, input image, reference image) indices of one training pair.
struct PairIndex {
  size_t seq = 0;
  size_t in = 0;
  size_t ref = 0;

  friend bool operator==(const PairIndex&, const PairIndex&) = default;
};

/// One epoch of the sampling protocol: every image once as input (seeded
/// order), its reference drawn uniformly from the same sequence (itself
/// included).
std::vector<PairIndex> sample_epoch(const std::vector<SequenceRecord>& records, uint64_t seed);

struct SamplePair {
  Image x_in, x_ref;
  ConditionSet y_in, y_gen;
  std::string sequence_id;
};

/// Lazily loaded, cached images.
class ImageStore {
 public:
  const Image& get(const std::filesystem::path& path);
  size_t size() const { return cache_.size(); }

 private:
  std::map<std::string, Image> cache_;
};

SamplePair make_pair(const std::vector<SequenceRecord>& records, const PairIndex& idx, ImageStore& store);

struct AugmentConfig {
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_rot90 = 0.5;
  double p_translate = 0.5;
  double max_translate = 0.05;  // fraction of the image side
  double p_shadow = 0.25;
  double shadow_min_area = 0.05;
  double shadow_max_area = 0.25;
  double shadow_min_alpha = 0.3;
  double shadow_max_alpha = 0.7;
  float shadow_fill = -1.0f;

  static AugmentConfig none() { return {0, 0, 0, 0, 0.05, 0, 0.05, 0.25, 0.3, 0.7, -1.0f}; }
};

Image hflip(const Image& img);
Image vflip(const Image& img);
/// Rotates by k * 90 degrees counter-clockwise (square images).
Image rot90(const Image& img, int k);
/// Shifts content by (dx, dy) pixels, replicating the border.
Image translate(const Image& img, int dx, int dy);

struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // exclusive upper bounds
};
/// Blends the rectangle toward `fill` with opacity alpha: (1-alpha) x + alpha fill.
void shadow_out(Image& img, const Rect& r, double alpha, float fill);

/// Applies the same random geometric transform to x_in and x_ref, and
/// ShadowOut to x_in only.
void augment(SamplePair& pair, const AugmentConfig& cfg, uint64_t seed);

}  // namespace cropsim
