#include <algorithm>
#include <cmath>
#include <random>

#include "cropsim/critic.hpp"
#include "cropsim/generator.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace cropsim;
using cropsim::testing::random_tensor;
using cropsim::testing::VarD;

namespace {

ModelConfig tiny_config() {
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

std::vector<ConditionSet> conds(int n, int t0) {
  std::vector<ConditionSet> ys;
  for (int i = 0; i < n; ++i) ys.push_back({t0 + 7 * i, i % 6, std::array<double, 2>{0.1 * i, 0.05 * i}});
  return ys;
}

// Rows of an N-major tensor reordered by perm.
Tensor<double> permute_rows(const Tensor<double>& t, const std::vector<int>& perm) {
  Tensor<double> out(t.shape());
  const int64_t row = t.numel() / t.dim(0);
  for (size_t i = 0; i < perm.size(); ++i)
    std::copy_n(t.data() + perm[i] * row, row, out.data() + static_cast<int64_t>(i) * row);
  return out;
}

template <typename T>
std::vector<T> permute(const std::vector<T>& v, const std::vector<int>& perm) {
  std::vector<T> out;
  for (int p : perm) out.push_back(v[static_cast<size_t>(p)]);
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Central differences of scalar f at a random subset of coordinates of x.
double sampled_fd_error(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                        const Tensor<double>& analytic, int samples, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
  double worst = 0;
  const double h = 1e-6;
  for (int s = 0; s < samples; ++s) {
    const int64_t i = pick(rng);
    Tensor<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double numeric = (f(xp) - f(xm)) / (2 * h);
    const double err = std::abs(numeric - analytic[i]) / std::max({1e-2, std::abs(numeric), std::abs(analytic[i])});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("generator shapes, output range and parameter layout") {
  const ModelConfig m = tiny_config();
  std::mt19937_64 rng(1);
  Generator<double> g(m, rng);
  auto x = VarD(random_tensor(Shape{2, 3, 32, 32}, rng));
  auto ys = conds(2, 7);
  auto z = VarD(g.sample_noise(2, rng));
  CHECK(z.shape() == Shape{2, 16});
  auto xi = g.encode(x, ys, true);
  CHECK(xi.shape() == Shape{2, 32, 1, 1});
  CHECK(g.map_noise(z).shape() == Shape{2, 32});
  auto out = g.decode(xi, conds(2, 14), g.map_noise(z), true);
  CHECK(out.shape() == Shape{2, 3, 32, 32});
  for (double v : out.value().span()) CHECK((v > -1.0 && v < 1.0));

  nn::ParamSet<double> ps;
  g.collect(ps);
  CHECK(ps.count() > 0);
  for (const auto& p : ps.params) CHECK(p.name.rfind("gen", 0) == 0);
  CHECK_FALSE(ps.buffers.empty());

  ModelConfig bad = m;
  bad.image_size = 48;
  CHECK_THROWS(Generator<double>(bad, rng));
}

TEST_CASE("generator is deterministic in seed and input") {
  const ModelConfig m = tiny_config();
  std::mt19937_64 r1(5), r2(5), rx(9);
  Generator<double> a(m, r1), b(m, r2);
  auto x = VarD(random_tensor(Shape{3, 3, 32, 32}, rx));
  auto z = VarD(random_tensor(Shape{3, 16}, rx));
  auto ys = conds(3, 7), yg = conds(3, 21);
  auto oa = a.generate(x, ys, yg, z, false), ob = b.generate(x, ys, yg, z, false);
  CHECK(max_abs_diff(oa.value(), ob.value()) == 0.0);
}

TEST_CASE("noise path: different z gives different images, disabled path ignores z") {
  const ModelConfig m = tiny_config();
  std::mt19937_64 rng(2);
  Generator<double> g(m, rng);
  auto x = VarD(random_tensor(Shape{2, 3, 32, 32}, rng));
  auto ys = conds(2, 7), yg = conds(2, 28);
  auto z1 = VarD(random_tensor(Shape{2, 16}, rng)), z2 = VarD(random_tensor(Shape{2, 16}, rng));
  auto o1 = g.generate(x, ys, yg, z1, false), o2 = g.generate(x, ys, yg, z2, false);
  CHECK(max_abs_diff(o1.value(), o2.value()) > 1e-6);

  auto xi = g.encode(x, ys, false);
  auto d1 = g.decode(xi, yg, VarD(), false), d2 = g.decode(xi, yg, VarD(), false);
  CHECK(max_abs_diff(d1.value(), d2.value()) == 0.0);
  CHECK(max_abs_diff(d1.value(), o1.value()) > 1e-6);
}

TEST_CASE("generator output depends on the target condition") {
  const ModelConfig m = tiny_config();
  std::mt19937_64 rng(3);
  Generator<double> g(m, rng);
  // move the conditional-norm maps off their identity initialisation
  nn::ParamSet<double> ps;
  g.collect(ps);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& p : ps.params)
    for (auto& v : p.var->mutable_value().span()) v += n(rng);
  auto x = VarD(random_tensor(Shape{2, 3, 32, 32}, rng));
  auto z = VarD(random_tensor(Shape{2, 16}, rng));
  auto ys = conds(2, 7);
  auto a = g.generate(x, ys, conds(2, 14), z, false), b = g.generate(x, ys, conds(2, 49), z, false);
  CHECK(max_abs_diff(a.value(), b.value()) > 1e-6);
}

TEST_CASE("generator and critic are equivariant to batch permutation") {
  const ModelConfig m = tiny_config();
  std::mt19937_64 rng(4);
  Generator<double> g(m, rng);
  Critic<double> d(m, rng);
  const std::vector<int> perm = {2, 0, 3, 1};
  auto x = random_tensor(Shape{4, 3, 32, 32}, rng), z = random_tensor(Shape{4, 16}, rng);
  auto ys = conds(4, 7), yg = conds(4, 14);
  for (bool training : {false, true}) {
    auto out = g.generate(VarD(x), ys, yg, VarD(z), training).value();
    auto outp = g.generate(VarD(permute_rows(x, perm)), permute(ys, perm), permute(yg, perm), VarD(permute_rows(z, perm)),
                           training)
                    .value();
    CHECK(max_abs_diff(permute_rows(out, perm), outp) < 1e-10);
  }
  auto cand = random_tensor(Shape{4, 3, 32, 32}, rng);
  auto s = d.score(VarD(cand), VarD(x), ys, yg).value();
  CHECK(s.shape() == Shape{4});
  auto sp = d.score(VarD(permute_rows(cand, perm)), VarD(permute_rows(x, perm)), permute(ys, perm), permute(yg, perm))
                .value();
  for (size_t i = 0; i < perm.size(); ++i) CHECK(sp[static_cast<int64_t>(i)] == doctest::Approx(s[perm[i]]).epsilon(1e-10));
}

TEST_CASE("critic scores depend on the candidate, the input image and the conditions") {
  const ModelConfig m = tiny_config();
  std::mt19937_64 rng(6);
  Critic<double> d(m, rng);
  auto cand = VarD(random_tensor(Shape{2, 3, 32, 32}, rng)), x = VarD(random_tensor(Shape{2, 3, 32, 32}, rng));
  auto ys = conds(2, 7), yg = conds(2, 14);
  const auto base = d.score(cand, x, ys, yg).value();
  auto differs = [&](const Tensor<double>& s) { return max_abs_diff(s, base) > 1e-9; };
  CHECK(differs(d.score(VarD(random_tensor(Shape{2, 3, 32, 32}, rng)), x, ys, yg).value()));
  CHECK(differs(d.score(cand, VarD(random_tensor(Shape{2, 3, 32, 32}, rng)), ys, yg).value()));
  CHECK(differs(d.score(cand, x, ys, conds(2, 42)).value()));
  auto maps = d.condition_maps(ys, yg);
  CHECK(maps.shape() == Shape{2, 6, 2, 2});
  CHECK(max_abs_diff(d.score_with_maps(cand, x, maps).value(), base) == 0.0);

  nn::ParamSet<double> ps;
  d.collect(ps);
  for (const auto& p : ps.params) CHECK(p.name.rfind("critic", 0) == 0);
  CHECK(ps.buffers.empty());
}

TEST_CASE("generator input gradient matches finite differences") {
  const ModelConfig m = tiny_config();
  std::mt19937_64 rng(7);
  Generator<double> g(m, rng);
  // batch 4: with two samples the 1x1 bottleneck batch norm is nearly singular
  auto x = random_tensor(Shape{4, 3, 32, 32}, rng), z = random_tensor(Shape{4, 16}, rng);
  auto w = random_tensor(Shape{4, 3, 32, 32}, rng);
  auto ys = conds(4, 7), yg = conds(4, 21);
  for (bool training : {false, true}) {
    auto loss = [&](const VarD& xv) { return ag::sum(ag::mul(g.generate(xv, ys, yg, VarD(z), training), VarD(w))); };
    VarD xv(x, true);
    auto gx = ag::grad(loss(xv), xv);
    auto f = [&](const Tensor<double>& t) {
      ag::NoGradGuard ng;
      return loss(VarD(t)).item();
    };
    CHECK(sampled_fd_error(f, x, gx.value(), 40, 11) <= 1e-4);
  }
}

TEST_CASE("critic input and parameter gradients match finite differences") {
  const ModelConfig m = tiny_config();
  std::mt19937_64 rng(8);
  Critic<double> d(m, rng);
  auto cand = random_tensor(Shape{2, 3, 32, 32}, rng), x = random_tensor(Shape{2, 3, 32, 32}, rng);
  auto ys = conds(2, 7), yg = conds(2, 21);
  auto loss = [&](const VarD& cv) { return ag::sum(d.score(cv, VarD(x), ys, yg)); };
  VarD cv(cand, true);
  auto gc = ag::grad(loss(cv), cv);
  auto f = [&](const Tensor<double>& t) {
    ag::NoGradGuard ng;
    return loss(VarD(t)).item();
  };
  CHECK(sampled_fd_error(f, cand, gc.value(), 40, 12) <= 1e-4);

  nn::ParamSet<double> ps;
  d.collect(ps);
  auto params = nn::param_pointers(ps);
  std::vector<VarD> pv;
  for (auto* p : params) pv.push_back(*p);
  auto grads = ag::grad<double>(std::vector<VarD>{loss(VarD(cand))}, {}, pv, false);
  // every parameter receives gradient
  for (size_t k = 0; k < grads.size(); ++k) {
    double norm = 0;
    for (double v : grads[k].value().span()) norm += v * v;
    CHECK_MESSAGE(norm > 0, ps.params[k].name);
  }
  // spot-check one head weight against finite differences
  auto& head = *params.front();
  auto fp = [&](const Tensor<double>& t) {
    Tensor<double> saved = head.value();
    head.mutable_value() = t;
    double v;
    {
      ag::NoGradGuard ng;
      v = loss(VarD(cand)).item();
    }
    head.mutable_value() = saved;
    return v;
  };
  CHECK(sampled_fd_error(fp, head.value(), grads.front().value(), 20, 13) <= 1e-4);
}
