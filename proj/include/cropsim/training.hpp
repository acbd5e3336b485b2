#pragma once

// CWGAN-GP optimisation, validation-based model selection and checkpoints.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cropsim/critic.hpp"
#include "cropsim/dataset.hpp"
#include "cropsim/generator.hpp"
#include "cropsim/metrics.hpp"

namespace cropsim {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  int batch_size = 64;
  int epochs = 5000;
  double lambda_gp = 10.0;
  int n_critic = 5;
  std::string conditions = "t";
  int image_size = 256;
  uint64_t seed = 0;
  int gen_width = 64;
  int critic_width = 64;
  int val_interval = 1;
  bool augment = true;
  AugmentConfig augmentation;

  /// Paper-scale defaults shrunk for CPU runs: 64 px, batch 16, 200 epochs,
  /// channel widths 16, lr 2e-4.
  static TrainConfig toy();
  void validate() const;
  ModelConfig model_config(int n_treatments, const BiomassNormalizer& norm) const;
};

/// key = value lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = TrainConfig::toy());
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = TrainConfig::toy());
std::string format_train_config(const TrainConfig& cfg);

struct Batch {
  Tensor<float> x_in, x_ref;  // N x 3 x H x W
  std::vector<ConditionSet> y_in, y_gen;
  std::vector<std::string> sequence_ids;

  int64_t size() const { return static_cast<int64_t>(y_in.size()); }
};

/// Stacks pairs into a batch, augmenting pair i with seed (seed, i) when cfg is given.
Batch make_batch(const std::vector<SequenceRecord>& records, std::span<const PairIndex> idx, ImageStore& store,
                 const AugmentConfig* aug, uint64_t seed);

/// Stacks C x H x W images into N x C x H x W.
Tensor<float> stack_images(const std::vector<Image>& images);
Image unstack_image(const Tensor<float>& batch, int64_t i);

/// Interpolation x_hat = eps * x_ref + (1 - eps) * x_gen, eps one value per sample.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& x_ref, const Tensor<T>& x_gen, const std::vector<T>& eps);

/// mean_i (||d critic(x_hat_i) / d x_hat_i||_2 - 1)^2. The critic closure
/// returns one score per sample. With create_graph the result is
/// differentiable w.r.t. the critic's parameters.
template <typename T>
ag::Var<T> gradient_penalty(const std::function<ag::Var<T>(const ag::Var<T>&)>& critic, const Tensor<T>& x_ref,
                            const Tensor<T>& x_gen, const std::vector<T>& eps, bool create_graph = true);

struct StepStats {
  double loss_d = 0;
  double wasserstein = 0;  // mean score(fake) - mean score(real)
  double gp = 0;
  double score_real = 0;
  double score_fake = 0;
};

struct EpochLog {
  int epoch = 0;
  double loss_d = 0;
  double loss_g = 0;
  double gp = 0;
  double val_perceptual = 0;
};

struct FitOptions {
  std::filesystem::path log_csv;
  std::filesystem::path checkpoint;  // best checkpoint, written on improvement
  std::function<void(const EpochLog&)> on_epoch;
  double time_budget_s = 0;  // 0 = unlimited; stops after the epoch that exceeds it
};

/// Index of the smallest value (first on ties).
size_t select_best(const std::vector<double>& history);

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const ModelConfig& model);
  // Parameter sets point into the owned modules.
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  StepStats critic_step(const Batch& b);
  double generator_step(const Batch& b);

  /// Mean perceptual distance of generated vs reference images over a fixed
  /// seeded pairing of the validation sequences (inference mode).
  double validate(const std::vector<SequenceRecord>& val, ImageStore& store);

  /// Runs the full schedule, keeps the parameters of the epoch with the
  /// lowest validation distance and restores them at the end.
  std::vector<EpochLog> fit(const std::vector<SequenceRecord>& train, const std::vector<SequenceRecord>& val,
                            ImageStore& store, const FitOptions& opt = {});

  Generator<float>& generator() { return gen_; }
  Critic<float>& critic() { return critic_; }
  nn::ParamSet<float>& gen_params() { return gen_ps_; }
  nn::ParamSet<float>& critic_params() { return critic_ps_; }
  const TrainConfig& config() const { return cfg_; }
  const ModelConfig& model_config() const { return model_; }

  int epoch() const { return epoch_; }
  int best_epoch() const { return best_epoch_; }
  const std::vector<double>& val_history() const { return val_history_; }
  std::mt19937_64& rng() { return rng_; }
  int64_t generator_steps() const { return g_steps_; }
  int64_t critic_steps() const { return d_steps_; }

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<Trainer> load(const std::filesystem::path& path);

 private:
  void check_finite(double v, const char* what);

  TrainConfig cfg_;
  ModelConfig model_;
  std::mt19937_64 rng_;
  Generator<float> gen_;
  Critic<float> critic_;
  nn::ParamSet<float> gen_ps_, critic_ps_;
  nn::Adam<float> gen_opt_, critic_opt_;
  FeatureExtractor extractor_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  std::vector<double> val_history_;
  int64_t g_steps_ = 0, d_steps_ = 0;
  int bad_steps_ = 0;
  double saved_metric_ = 0;
};

/// Inference-mode generation without gradient tracking.
Tensor<float> generate_images(Generator<float>& gen, const Tensor<float>& x_in, std::span<const ConditionSet> y_in,
                              std::span<const ConditionSet> y_gen, const Tensor<float>& z);

/// Loads only what inference needs from a checkpoint.
struct LoadedModel {
  TrainConfig train;
  ModelConfig model;
  Generator<float> gen;
  int epoch = 0;
  std::vector<double> val_history;
};
LoadedModel load_generator(const std::filesystem::path& path);

}  // namespace cropsim
