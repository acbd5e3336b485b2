#include <cmath>
#include <random>

#include "cropsim/nn.hpp"
#include "cropsim/ops.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace cropsim;
using cropsim::testing::grad_check;
using cropsim::testing::random_tensor;
using cropsim::testing::VarD;

namespace {

// Wraps f so the checked scalar is a random projection <r, f(x)>, which
// exercises every output element.
std::function<VarD(const std::vector<VarD>&)> projected(std::function<VarD(const std::vector<VarD>&)> f,
                                                        uint64_t seed) {
  return [f, seed](const std::vector<VarD>& xs) {
    VarD y = f(xs);
    std::mt19937_64 rng(seed);
    VarD r(random_tensor(y.shape(), rng));
    return ag::sum(ag::mul(y, r));
  };
}

// Second-order check: differentiates sum(dF/dx_0 ^2) built with create_graph.
std::function<VarD(const std::vector<VarD>&)> grad_norm_of(std::function<VarD(const std::vector<VarD>&)> f) {
  return [f](const std::vector<VarD>& xs) {
    ag::GradModeGuard on(true);
    std::vector<VarD> leaf = xs;
    // Probe evaluations pass constants; re-wrap them so grad() has a target.
    if (!leaf[0].requires_grad()) leaf[0] = VarD(leaf[0].value(), true);
    VarD y = f(leaf);
    VarD g = ag::grad(y, leaf[0], true);
    return ag::sum(ag::mul(g, g));
  };
}

}  // namespace

TEST_CASE("broadcasting binary ops and reductions") {
  std::mt19937_64 rng(1);
  auto f = projected(
      [](const std::vector<VarD>& x) {
        VarD s = ag::add(x[0], x[1]);      // (2,3,4,5) + (1,3,1,1)
        VarD p = ag::mul(s, x[2]);         // * (4,5)
        VarD q = ag::sub(p, x[1]);
        return ag::mean_to(q, Shape{2, 1, 4, 1});
      },
      3);
  auto r = grad_check(f, {random_tensor(Shape{2, 3, 4, 5}, rng), random_tensor(Shape{1, 3, 1, 1}, rng),
                          random_tensor(Shape{4, 5}, rng)});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("broadcast shape rules") {
  CHECK(ag::broadcast_shape(Shape{2, 1, 4}, Shape{3, 1}) == Shape{2, 3, 4});
  CHECK(ag::broadcast_shape(Shape{}, Shape{5}) == Shape{5});
  CHECK_THROWS_AS(ag::broadcast_shape(Shape{2, 3}, Shape{4, 3, 2}), ShapeError);
}

TEST_CASE("unary ops gradients") {
  std::mt19937_64 rng(2);
  Tensor<double> x = random_tensor(Shape{3, 7}, rng, -2.0, 2.0);
  for (double& v : x.span())
    if (std::abs(v) < 0.05) v = 0.3;  // keep away from kinks
  auto f = projected(
      [](const std::vector<VarD>& v) {
        VarD a = ag::tanh(v[0]);
        VarD b = ag::silu(v[0]);
        VarD c = ag::leaky_relu(v[0], 0.2);
        VarD d = ag::relu(v[0]);
        VarD e = ag::pow_scalar(ag::add_scalar(ag::mul(v[0], v[0]), 0.5), -0.5);
        return ag::add(ag::add(ag::add(a, b), ag::add(c, d)), ag::scale(e, 3.0));
      },
      5);
  CHECK(grad_check(f, {x}).max_rel_err < 1e-6);
}

TEST_CASE("matmul gradients under every transpose combination") {
  std::mt19937_64 rng(3);
  for (int mode = 0; mode < 4; ++mode) {
    const bool ta = mode & 1, tb = mode & 2;
    Tensor<double> a = random_tensor(ta ? Shape{5, 4} : Shape{4, 5}, rng);
    Tensor<double> b = random_tensor(tb ? Shape{3, 5} : Shape{5, 3}, rng);
    auto f = projected([ta, tb](const std::vector<VarD>& v) { return ag::matmul(v[0], v[1], ta, tb); }, 9);
    CHECK(grad_check(f, {a, b}).max_rel_err < 1e-6);
    CHECK(grad_check(grad_norm_of([ta, tb](const std::vector<VarD>& v) {
                       return ag::sum(ag::tanh(ag::matmul(v[0], v[1], ta, tb)));
                     }),
                     {a, b})
              .max_rel_err < 1e-6);
  }
}

TEST_CASE("conv2d gradients match finite differences for stride and padding variants") {
  std::mt19937_64 rng(4);
  struct Case {
    int k, stride, pad;
  };
  for (Case c : {Case{3, 1, 1}, Case{3, 2, 1}, Case{4, 2, 1}, Case{1, 1, 0}, Case{7, 2, 3}}) {
    Tensor<double> x = random_tensor(Shape{2, 3, 9, 8}, rng);
    Tensor<double> w = random_tensor(Shape{4, 3, c.k, c.k}, rng);
    ag::Conv2dGeometry geo{c.stride, c.pad};
    auto f = projected([geo](const std::vector<VarD>& v) { return ag::conv2d(v[0], v[1], geo); }, 13);
    CHECK_MESSAGE(grad_check(f, {x, w}).max_rel_err < 1e-6, "k=", c.k, " s=", c.stride);
  }
}

TEST_CASE("conv2d double backward (input-gradient norm wrt weights)") {
  std::mt19937_64 rng(5);
  Tensor<double> x = random_tensor(Shape{2, 2, 6, 6}, rng);
  Tensor<double> w1 = random_tensor(Shape{3, 2, 3, 3}, rng);
  Tensor<double> w2 = random_tensor(Shape{2, 3, 4, 4}, rng);
  auto f = grad_norm_of([](const std::vector<VarD>& v) {
    VarD h = ag::leaky_relu(ag::conv2d(v[0], v[1], {1, 1}), 0.2);
    h = nn::instance_norm(h);
    h = ag::conv2d(h, v[2], {2, 1});
    return ag::sum(ag::tanh(h));
  });
  CHECK(grad_check(f, {x, w1, w2}).max_rel_err < 1e-6);
}

TEST_CASE("resampling, pooling, gather and concat gradients") {
  std::mt19937_64 rng(6);
  Tensor<double> x = random_tensor(Shape{2, 3, 6, 6}, rng);
  auto f = projected(
      [](const std::vector<VarD>& v) {
        VarD up = ag::upsample_nearest2x(v[0]);
        VarD pooled = ag::max_pool2d(up, 3, 2, 1);
        VarD down = ag::sum_pool2x2(v[0]);
        VarD cat = ag::concat(std::vector<VarD>{pooled, ag::upsample_nearest2x(down)}, 1);
        cat = ag::reshape(cat, Shape{2, 6, 36});
        return ag::slice(cat, 1, 2, 3);
      },
      17);
  CHECK(grad_check(f, {x}).max_rel_err < 1e-6);

  Tensor<double> table = random_tensor(Shape{5, 4}, rng);
  auto g = projected([](const std::vector<VarD>& v) { return ag::embedding_lookup(v[0], {3, 0, 3, 4}); }, 19);
  CHECK(grad_check(g, {table}).max_rel_err < 1e-6);
}

TEST_CASE("normalisation is differentiable to second order") {
  std::mt19937_64 rng(7);
  Tensor<double> x = random_tensor(Shape{3, 2, 4, 4}, rng);
  auto f = projected([](const std::vector<VarD>& v) { return nn::normalize(v[0], Shape{1, 2, 1, 1}, 1e-5); }, 23);
  CHECK(grad_check(f, {x}).max_rel_err < 1e-6);
  auto g = grad_norm_of([](const std::vector<VarD>& v) { return ag::sum(ag::tanh(nn::instance_norm(v[0]))); });
  CHECK(grad_check(g, {x}).max_rel_err < 1e-5);
}

TEST_CASE("grad of unused input is zero; backward accumulates on leaves") {
  VarD a(Tensor<double>(Shape{2}, 1.5), true);
  VarD b(Tensor<double>(Shape{2}, 2.0), true);
  VarD y = ag::sum(ag::mul(a, a));
  auto g = ag::grad<double>(std::vector<VarD>{y}, {}, std::vector<VarD>{a, b}, false);
  CHECK(g[0].value()[0] == doctest::Approx(3.0));
  CHECK(g[1].value()[0] == 0.0);
  ag::backward(y);
  ag::backward(y);
  CHECK(a.grad()[1] == doctest::Approx(6.0));
  CHECK(b.grad().empty());
}

TEST_CASE("no-grad mode records nothing") {
  VarD a(Tensor<double>(Shape{2}, 1.0), true);
  ag::NoGradGuard ng;
  VarD y = ag::mul(a, a);
  CHECK_FALSE(y.requires_grad());
}
