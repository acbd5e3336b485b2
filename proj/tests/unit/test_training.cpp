#include <cmath>
#include <fstream>
#include <random>

#include "cropsim/checkpoint.hpp"
#include "cropsim/synth.hpp"
#include "cropsim/training.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace cropsim;
using cropsim::testing::random_tensor;
using cropsim::testing::VarD;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_train_config() {
  TrainConfig c = TrainConfig::toy();
  c.image_size = 32;
  c.gen_width = 4;
  c.critic_width = 4;
  c.batch_size = 4;
  c.epochs = 1;
  c.conditions = "t,c,b";
  c.n_critic = 2;
  c.seed = 3;
  return c;
}

struct TinyData {
  cropsim::testing::TempDir dir;
  std::vector<SequenceRecord> all, train, val;
  ImageStore store;

  TinyData() {
    SynthConfig s;
    s.n_sequences = 8;
    s.n_times = 3;
    s.image_size = 32;
    s.val_fraction = 0.25;
    s.test_fraction = 0.25;
    all = load_manifest(synth_generate(s, dir.path()), true);
    train = filter_split(all, "train");
    val = filter_split(all, "val");
  }

  ModelConfig model(const TrainConfig& c) const {
    return c.model_config(treatment_count(all), fit_biomass_normalizer(train));
  }

  Batch batch(size_t n) {
    auto pairs = sample_epoch(train, 1);
    pairs.resize(n);
    return make_batch(train, pairs, store, nullptr, 0);
  }
};

std::map<std::string, Tensor<float>> snapshot(const nn::ParamSet<float>& ps) {
  std::map<std::string, Tensor<float>> m;
  for (const auto& p : ps.params) m[p.name] = p.var->value();
  return m;
}

bool same(const std::map<std::string, Tensor<float>>& a, const nn::ParamSet<float>& ps) {
  for (const auto& p : ps.params)
    if (!(a.at(p.name) == p.var->value())) return false;
  return true;
}

}  // namespace

TEST_CASE("interpolation is per-sample convex combination") {
  std::mt19937_64 rng(1);
  auto a = random_tensor(Shape{2, 1, 2, 3}, rng), b = random_tensor(Shape{2, 1, 2, 3}, rng);
  auto x = interpolate<double>(a, b, {0.25, 1.0});
  for (int64_t j = 0; j < 6; ++j) {
    CHECK(x[j] == doctest::Approx(0.25 * a[j] + 0.75 * b[j]));
    CHECK(x[6 + j] == doctest::Approx(a[6 + j]));
  }
  CHECK_THROWS_AS(interpolate<double>(a, b, {0.5}), ShapeError);
}

TEST_CASE("gradient penalty of linear critics has a closed form") {
  std::mt19937_64 rng(2);
  const int64_t d = 12;
  Tensor<double> w(Shape{d, 1});
  double n2 = 0;
  for (auto& v : w.span()) n2 += (v = std::normal_distribution<double>()(rng)) * v;
  for (auto& v : w.span()) v /= std::sqrt(n2);
  auto x_ref = random_tensor(Shape{4, 3, 2, 2}, rng), x_gen = random_tensor(Shape{4, 3, 2, 2}, rng);
  const std::vector<double> eps = {0.1, 0.5, 0.7, 0.9};
  for (double scale : {1.0, 2.0, 3.0}) {
    std::function<VarD(const VarD&)> critic = [&](const VarD& x) {
      return ag::reshape(ag::matmul(ag::reshape(x, Shape{4, d}), ag::scale(VarD(w), scale)), Shape{4});
    };
    const double gp = gradient_penalty<double>(critic, x_ref, x_gen, eps, false).item();
    CHECK(gp == doctest::Approx((scale - 1) * (scale - 1)).epsilon(1e-9));
  }
}

TEST_CASE("gradient penalty gradient w.r.t. critic weights matches finite differences") {
  std::mt19937_64 rng(3);
  const int64_t n = 3, d = 5, h = 4;
  auto x_ref = random_tensor(Shape{n, d}, rng), x_gen = random_tensor(Shape{n, d}, rng);
  auto w1 = random_tensor(Shape{h, d}, rng), w2 = random_tensor(Shape{h, h}, rng), w3 = random_tensor(Shape{h, 1}, rng);
  const std::vector<double> eps = {0.2, 0.6, 0.9};
  auto penalty = [&](const std::vector<VarD>& p) {
    std::function<VarD(const VarD&)> critic = [&](const VarD& x) {
      VarD a = ag::tanh(ag::matmul(x, p[0], false, true));
      VarD b = ag::tanh(ag::matmul(a, p[1], false, true));
      return ag::reshape(ag::matmul(b, p[2]), Shape{n});
    };
    return gradient_penalty<double>(critic, x_ref, x_gen, eps, ag::grad_enabled());
  };
  auto res = cropsim::testing::grad_check(penalty, {w1, w2, w3});
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("gradient penalty rejects non-finite critic gradients") {
  std::function<VarD(const VarD&)> critic = [](const VarD& x) {
    return ag::reshape(ag::sum_to(ag::scale(x, std::nan("")), Shape{2, 1}), Shape{2});
  };
  std::mt19937_64 rng(4);
  CHECK_THROWS_AS(gradient_penalty<double>(critic, random_tensor(Shape{2, 3}, rng), random_tensor(Shape{2, 3}, rng),
                                           {0.5, 0.5}),
                  TrainingError);
}

TEST_CASE("best epoch selection") {
  CHECK(select_best({3.0, 1.0, 2.0, 1.0}) == 1);
  CHECK(select_best({0.5}) == 0);
  CHECK_THROWS(select_best({}));
}

TEST_CASE("training config parsing") {
  TrainConfig c = parse_train_config("# comment\nlr = 3e-4\n\nn_critic=2  # inline\nconditions = t,b\naugment = off\n");
  CHECK(c.lr == doctest::Approx(3e-4));
  CHECK(c.n_critic == 2);
  CHECK(c.conditions == "t,b");
  CHECK_FALSE(c.augment);
  CHECK(c.batch_size == TrainConfig::toy().batch_size);
  CHECK_THROWS(parse_train_config("learning_rate = 1"));
  CHECK_THROWS(parse_train_config("lr"));
  CHECK_THROWS(parse_train_config("n_critic = 0"));
  CHECK_THROWS(parse_train_config("conditions = t,q"));
  const TrainConfig back = parse_train_config(format_train_config(c), TrainConfig());
  CHECK(format_train_config(back) == format_train_config(c));
  const TrainConfig defaults;
  CHECK(defaults.lr == 1e-4);
  CHECK(defaults.beta1 == 0.0);
  CHECK(defaults.beta2 == 0.9);
  CHECK(defaults.lambda_gp == 10.0);
  CHECK(defaults.n_critic == 5);
  CHECK(defaults.batch_size == 64);
}

TEST_CASE("each optimiser step touches only its own network") {
  TinyData data;
  const TrainConfig cfg = tiny_train_config();
  Trainer tr(cfg, data.model(cfg));
  Batch b = data.batch(4);
  auto g0 = snapshot(tr.gen_params()), d0 = snapshot(tr.critic_params());
  StepStats st = tr.critic_step(b);
  CHECK(std::isfinite(st.loss_d));
  CHECK(st.gp >= 0);
  CHECK(st.loss_d == doctest::Approx(st.wasserstein + cfg.lambda_gp * st.gp).epsilon(1e-5));
  CHECK(same(g0, tr.gen_params()));
  CHECK_FALSE(same(d0, tr.critic_params()));
  auto d1 = snapshot(tr.critic_params());
  CHECK(std::isfinite(tr.generator_step(b)));
  CHECK(same(d1, tr.critic_params()));
  CHECK_FALSE(same(g0, tr.gen_params()));
  CHECK(tr.critic_steps() == 1);
  CHECK(tr.generator_steps() == 1);
}

TEST_CASE("three consecutive non-finite steps abort training") {
  TinyData data;
  const TrainConfig cfg = tiny_train_config();
  Trainer tr(cfg, data.model(cfg));
  for (auto& p : tr.critic_params().params)
    for (auto& v : p.var->mutable_value().span()) v = NAN;
  Batch b = data.batch(4);
  CHECK_NOTHROW(tr.critic_step(b));
  CHECK_NOTHROW(tr.critic_step(b));
  CHECK_THROWS_AS(tr.critic_step(b), TrainingError);
}

TEST_CASE("fit follows the critic/generator schedule and writes its log") {
  TinyData data;
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 2;
  Trainer tr(cfg, data.model(cfg));
  FitOptions opt;
  opt.log_csv = data.dir.path() / "log.csv";
  opt.checkpoint = data.dir.path() / "best.ckpt";
  auto logs = tr.fit(data.train, data.val, data.store, opt);
  REQUIRE(logs.size() == 2);
  const int64_t per_epoch = static_cast<int64_t>((data.train.size() * 3 + 3) / 4);
  CHECK(tr.critic_steps() == 2 * per_epoch);
  CHECK(tr.generator_steps() == tr.critic_steps() / cfg.n_critic);
  CHECK(tr.val_history().size() == 2);
  CHECK(tr.best_epoch() == static_cast<int>(select_best(tr.val_history())) + 1);
  std::ifstream f(opt.log_csv);
  std::string header;
  std::getline(f, header);
  CHECK(header == "epoch,loss_D,loss_G,GP,val_perceptual");
  int rows = 0;
  for (std::string line; std::getline(f, line);) rows += !line.empty();
  CHECK(rows == 2);
  CHECK(fs::exists(opt.checkpoint));
  // parameters are restored to the best epoch
  CHECK(tr.validate(data.val, data.store) ==
        doctest::Approx(tr.val_history()[select_best(tr.val_history())]).epsilon(1e-5));
}

TEST_CASE("checkpoints round-trip the full training state") {
  TinyData data;
  const TrainConfig cfg = tiny_train_config();
  Trainer tr(cfg, data.model(cfg));
  auto logs = tr.fit(data.train, data.val, data.store);
  const fs::path path = data.dir.path() / "ck.bin";
  tr.save(path);
  CHECK_FALSE(fs::exists(data.dir.path() / "ck.bin.tmp"));

  auto back = Trainer::load(path);
  CHECK(back->epoch() == tr.epoch());
  CHECK(back->val_history() == tr.val_history());
  CHECK(back->critic_steps() == tr.critic_steps());
  CHECK(same(snapshot(tr.gen_params()), back->gen_params()));
  CHECK(back->validate(data.val, data.store) == doctest::Approx(tr.validate(data.val, data.store)).epsilon(1e-5));

  // identical continuation: same rng, moments and weights
  Batch b = data.batch(4);
  StepStats s1 = tr.critic_step(b), s2 = back->critic_step(b);
  CHECK(s1.loss_d == s2.loss_d);
  CHECK(tr.generator_step(b) == back->generator_step(b));

  auto inf = load_generator(path);
  CHECK(inf.model.image_size == 32);
  CHECK(inf.model.cond.active.str() == "t,c,b");
  CHECK(inf.epoch == 1);
  auto meta = read_checkpoint(path).meta;
  CHECK(meta.at("extractor") == "seeded-random:20240617");

  // corrupt files are rejected
  {
    std::ofstream bad(data.dir.path() / "bad.bin", std::ios::binary);
    bad << "not a checkpoint";
  }
  CHECK_THROWS_AS(Trainer::load(data.dir.path() / "bad.bin"), CheckpointError);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream cut(data.dir.path() / "cut.bin", std::ios::binary);
    cut << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(Trainer::load(data.dir.path() / "cut.bin"), CheckpointError);
}
