#pragma once

// Image-quality metrics and delta-t bucketed reports.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cropsim/image.hpp"
#include "cropsim/nn.hpp"

namespace cropsim {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Number of dyadic scales usable at the given image side (at most 5).
int ms_ssim_scales(int64_t min_side);

/// MS-SSIM of two 3 x H x W images in [-1, 1], compared on [0, 1] luminance
/// with data range 1. Uses fewer scales below 176 px, renormalising weights.
double ms_ssim(const Image& x, const Image& y);

/// Single-scale SSIM (mean of the SSIM map, averaged over channels).
double ssim(const Image& x, const Image& y);

/// Fixed image -> features network with 5 conv stages, tapped after each.
class FeatureExtractor {
 public:
  static constexpr uint64_t kDefaultSeed = 20240617;

  /// Seeded-random weights (He-normal), deterministic in the seed.
  explicit FeatureExtractor(uint64_t seed = kDefaultSeed);

  /// Stage activations of an N x 3 x H x W batch.
  std::vector<Tensor<float>> taps(const Tensor<float>& batch) const;
  /// Spatially averaged last-stage activations, N x D (FID features).
  Tensor<double> pooled_features(const Tensor<float>& batch) const;
  int feature_dim() const;

  /// Provenance tag recorded in every report, e.g. "seeded-random:20240617".
  const std::string& provenance() const { return tag_; }

 private:
  std::vector<nn::Conv2d<float>> stages_;
  std::string tag_;
};

/// Sum over taps of the spatial mean of squared differences between
/// channel-unit-normalised activations.
double perceptual_distance(const Image& x, const Image& y, const FeatureExtractor& fx);
/// Batched variant: distance of each pair (a[i], b[i]) for N x 3 x H x W batches.
std::vector<double> perceptual_distance_batch(const Tensor<float>& a, const Tensor<float>& b,
                                              const FeatureExtractor& fx);

/// Frechet distance between Gaussian fits of two feature sets (rows = samples).
double fid(const Tensor<double>& real, const Tensor<double>& gen, double eps = 1e-12);

enum class Bucket { kT0, kST, kLT };
Bucket bucket_of(int delta_t);
const char* bucket_name(Bucket b);

struct PairMetrics {
  std::string sequence_id;
  int t_in = 0;
  int t_gen = 0;
  double ms_ssim = 0;
  double perceptual = 0;

  int delta_t() const { return t_gen - t_in; }
};

struct BucketStats {
  int64_t count = 0;
  double ms_ssim = 0;
  double perceptual = 0;
};

struct MetricReport {
  std::vector<PairMetrics> pairs;
  std::map<std::string, BucketStats> buckets;  // absent bucket = no pairs
  BucketStats overall;
  std::optional<double> fid;
  std::string extractor;
};

/// Aggregates pairs by bucket and overall; fid is attached as given.
MetricReport bucket_report(std::vector<PairMetrics> pairs, std::optional<double> fid_value,
                           const std::string& extractor_tag);

/// Throws MetricError if two reports were computed with different extractors.
void require_same_provenance(const MetricReport& a, const MetricReport& b);

void write_pairs_csv(const std::filesystem::path& path, const std::vector<PairMetrics>& pairs);
void write_report_json(const std::filesystem::path& path, const MetricReport& report);

}  // namespace cropsim
