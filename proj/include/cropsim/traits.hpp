#pragma once

// Plant traits from images: projected leaf area, biomass regression,
// trait errors and instance-segmentation AP/AR.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cropsim/dataset.hpp"
#include "cropsim/image.hpp"
#include "cropsim/masks.hpp"
#include "cropsim/nn.hpp"
#include "json.hpp"

namespace cropsim {

enum class TraitKind { kPLA, kBM };
const char* trait_kind_name(TraitKind k);

struct TraitEstimate {
  TraitKind kind = TraitKind::kPLA;
  double pla = 0;          // mm^2
  double pla_percent = 0;  // % of image
  double gsd_mm = 0;
  int64_t pixels = 0;
  std::array<double, 2> bm{0, 0};  // spring wheat, faba bean (t/ha)
  bool no_plant = false;
};

/// Centre plant: the instance containing the centre pixel, else the one whose
/// centroid is closest to it.
TraitEstimate pla_from_masks(const InstanceMasks& masks, double gsd_mm);
/// Pixel sum over all instances (union).
TraitEstimate total_pla_from_masks(const InstanceMasks& masks, double gsd_mm);

/// Plant pixels have G - R above `min_excess` on [0, 1] colour; components are
/// 4-connected, labelled by majority R/G ratio (wheat above `species_ratio`).
struct ColorSegmenter {
  double min_excess = 0.04;
  double species_ratio = 0.6;
  int min_pixels = 3;

  InstanceMasks operator()(const Image& img) const;
};

/// Mask dilation minus erosion (3x3 cross), row-major H x W.
std::vector<uint8_t> boundary_mask(const std::vector<uint8_t>& mask, int height, int width);

struct RegressorConfig {
  int width = 8;  // residual-18 stage widths width x {1, 1, 2, 4, 8}
  int batch_size = 32;
  int max_epochs = 60;
  int patience = 8;
  double lr = 1e-3;
  uint64_t seed = 0;
  bool augment = true;  // flips and rotations only
};

/// Residual-18 layout image regressor with a two-output ReLU head.
class BiomassRegressor {
 public:
  BiomassRegressor() = default;
  BiomassRegressor(int width, std::mt19937_64& rng);

  /// N x 3 x H x W -> N x 2, non-negative.
  nn::Var<float> forward(const nn::Var<float>& x, bool training);
  std::vector<std::array<double, 2>> predict(const Tensor<float>& x);
  TraitEstimate estimate(const Image& img);

  void collect(nn::ParamSet<float>& ps, const std::string& prefix = "reg");
  /// Starts the head at a given output (e.g. the label mean) so no unit begins dead.
  void set_head_bias(const std::array<double, 2>& b);
  int width() const { return width_; }

  void save(const std::filesystem::path& path, const nlohmann::json& extra_meta = {});
  static BiomassRegressor load(const std::filesystem::path& path);

 private:
  struct Block {
    nn::Conv2d<float> conv1, conv2, proj;
    nn::BatchNormStats<float> bn1, bn2, bn_proj;
    nn::Var<float> g1, b1, g2, b2, gp, bp;
    bool has_proj = false;
  };
  nn::Var<float> affine_bn(nn::BatchNormStats<float>& bn, const nn::Var<float>& g, const nn::Var<float>& b,
                           const nn::Var<float>& x, bool training);

  int width_ = 0;
  nn::Conv2d<float> stem_;
  nn::BatchNormStats<float> stem_bn_;
  nn::Var<float> stem_g_, stem_b_;
  std::vector<Block> blocks_;
  nn::Linear<float> head_;
};

struct RegressorSample {
  Image image;
  std::array<double, 2> bm;
};

/// Every image of the records with its biomass label; throws ManifestError on a missing label.
std::vector<RegressorSample> regressor_samples(const std::vector<SequenceRecord>& records, ImageStore& store);

struct RegressorFit {
  std::vector<double> train_mse, val_mse;
  int best_epoch = 0;
};

/// Adam on MSE with early stopping on validation MSE; restores the best epoch.
RegressorFit train_biomass_regressor(BiomassRegressor& reg, const std::vector<RegressorSample>& train,
                                     const std::vector<RegressorSample>& val, const RegressorConfig& cfg,
                                     const std::function<void(int, double, double)>& on_epoch = {});

struct MaeMe {
  double mae = 0;
  double me = 0;
};
/// MAE = mean |gen - ref|, ME = mean (gen - ref).
MaeMe trait_mae_me(const std::vector<double>& gen, const std::vector<double>& ref);

enum class IouType { kBox, kMask };

struct ApAr {
  double ap = 0;
  double ap50 = 0;
  double ap75 = 0;
  double ar = 0;
};

double mask_iou(const Instance& a, const Instance& b);
double box_iou(const Instance& a, const Instance& b);

/// COCO-style evaluation: greedy score-ordered matching per image and label,
/// 101-point interpolated precision, IoU thresholds 0.50:0.05:0.95, averaged
/// over labels that have ground truth. At most 100 detections per image.
ApAr ap_ar(const std::vector<InstanceMasks>& pred, const std::vector<InstanceMasks>& truth, IouType type);

struct TraitRow {
  std::string image_id;
  TraitEstimate est;
};
void write_traits_csv(const std::filesystem::path& path, const std::vector<TraitRow>& rows);

}  // namespace cropsim
