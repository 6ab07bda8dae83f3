#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dcil/gradcheck.hpp"
#include "dcil/ops.hpp"
#include "dcil/random.hpp"

using dcil::Rng;
using dcil::Tensor;
namespace ops = dcil::ops;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

double project(const Tensor<double>& out, const Tensor<double>& proj) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * proj[i];
  return s;
}

}  // namespace

TEST_CASE("linear gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(1000 + seed);
    const Tensor<double> x = random_tensor({3, 4}, rng);
    const Tensor<double> w = random_tensor({2, 4}, rng);
    const Tensor<double> b = random_tensor({2}, rng);
    const Tensor<double> proj = random_tensor({3, 2}, rng);

    auto [out, ctx] = ops::linear_forward(x, w, b);
    auto grads = ops::linear_backward(ctx, proj);

    auto r_in = dcil::check_gradient([&](const Tensor<double>& v) { return project(ops::linear_eval(v, w, b), proj); },
                                     x, grads.input);
    auto r_w = dcil::check_gradient([&](const Tensor<double>& v) { return project(ops::linear_eval(x, v, b), proj); },
                                    w, grads.weight);
    auto r_b = dcil::check_gradient([&](const Tensor<double>& v) { return project(ops::linear_eval(x, w, v), proj); },
                                    b, grads.bias);
    CHECK(r_in.max_rel_error < 1e-6);
    CHECK(r_w.max_rel_error < 1e-6);
    CHECK(r_b.max_rel_error < 1e-6);
  }
}

TEST_CASE("conv2d gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(2000 + seed);
    const ops::Conv2dGeom geom{1, 1};
    const Tensor<double> x = random_tensor({1, 2, 4, 4}, rng);
    const Tensor<double> w = random_tensor({2, 2, 3, 3}, rng);
    const Tensor<double> b = random_tensor({2}, rng);
    const Tensor<double> proj = random_tensor({1, 2, 4, 4}, rng);

    auto [out, ctx] = ops::conv2d_forward(x, w, b, geom);
    REQUIRE(out.shape() == proj.shape());
    auto grads = ops::conv2d_backward(ctx, proj);

    auto r_in = dcil::check_gradient(
        [&](const Tensor<double>& v) { return project(ops::conv2d_eval(v, w, b, geom), proj); }, x, grads.input);
    auto r_w = dcil::check_gradient(
        [&](const Tensor<double>& v) { return project(ops::conv2d_eval(x, v, b, geom), proj); }, w, grads.weight);
    auto r_b = dcil::check_gradient(
        [&](const Tensor<double>& v) { return project(ops::conv2d_eval(x, w, v, geom), proj); }, b, grads.bias);
    CHECK(r_in.max_rel_error < 1e-5);
    CHECK(r_w.max_rel_error < 1e-5);
    CHECK(r_b.max_rel_error < 1e-5);
  }
}

TEST_CASE("strided padded conv gradients") {
  Rng rng(77);
  const ops::Conv2dGeom geom{2, 1};
  const Tensor<double> x = random_tensor({2, 3, 5, 5}, rng);
  const Tensor<double> w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor<double> b = random_tensor({4}, rng);
  auto [out, ctx] = ops::conv2d_forward(x, w, b, geom);
  const Tensor<double> proj = random_tensor(out.shape(), rng);
  auto grads = ops::conv2d_backward(ctx, proj);
  auto r_in = dcil::check_gradient(
      [&](const Tensor<double>& v) { return project(ops::conv2d_eval(v, w, b, geom), proj); }, x, grads.input);
  auto r_w = dcil::check_gradient(
      [&](const Tensor<double>& v) { return project(ops::conv2d_eval(x, v, b, geom), proj); }, w, grads.weight);
  CHECK(r_in.max_rel_error < 1e-5);
  CHECK(r_w.max_rel_error < 1e-5);
}

TEST_CASE("batchnorm gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(3000 + seed);
    const Tensor<double> x = random_tensor({4, 3, 2, 2}, rng);
    const Tensor<double> gamma = random_tensor({3}, rng, 0.5);
    const Tensor<double> beta = random_tensor({3}, rng, 0.5);
    const Tensor<double> proj = random_tensor({4, 3, 2, 2}, rng);

    auto loss_fn = [&](const Tensor<double>& xin, const Tensor<double>& g, const Tensor<double>& bt) {
      ops::RunningStats<double> scratch(3);
      return project(ops::batchnorm_forward(xin, g, bt, scratch, dcil::Mode::Train, 0.1, 1e-5), proj);
    };

    ops::RunningStats<double> stats(3);
    ops::BatchNormCtx<double> ctx;
    ops::batchnorm_forward(x, gamma, beta, stats, dcil::Mode::Train, 0.1, 1e-5, &ctx);
    auto grads = ops::batchnorm_backward(ctx, proj);

    auto r_in = dcil::check_gradient([&](const Tensor<double>& v) { return loss_fn(v, gamma, beta); }, x, grads.input);
    auto r_g = dcil::check_gradient([&](const Tensor<double>& v) { return loss_fn(x, v, beta); }, gamma, grads.gamma);
    auto r_b = dcil::check_gradient([&](const Tensor<double>& v) { return loss_fn(x, gamma, v); }, beta, grads.beta);
    CHECK(r_in.max_rel_error < 1e-4);
    CHECK(r_g.max_rel_error < 1e-4);
    CHECK(r_b.max_rel_error < 1e-4);
  }
}

TEST_CASE("relu gradient away from the kink") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(4000 + seed);
    Tensor<double> x({2, 6});
    for (std::size_t i = 0; i < x.numel(); ++i) {
      double v;
      do {
        v = rng.normal();
      } while (std::abs(v) < 1e-3);  // oracle excludes the nondifferentiable point
      x[i] = v;
    }
    const Tensor<double> proj = random_tensor({2, 6}, rng);
    auto [out, ctx] = ops::relu_forward(x);
    const Tensor<double> analytic = ops::relu_backward(ctx, proj);
    auto r = dcil::check_gradient([&](const Tensor<double>& v) { return project(ops::relu_eval(v), proj); }, x,
                                  analytic);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("avgpool gradient matches central differences") {
  Rng rng(5005);
  const Tensor<double> x = random_tensor({2, 2, 4, 4}, rng);
  auto [out, ctx] = ops::avgpool2d_forward(x, 2);
  const Tensor<double> proj = random_tensor(out.shape(), rng);
  const Tensor<double> analytic = ops::avgpool2d_backward(ctx, proj);
  auto r = dcil::check_gradient([&](const Tensor<double>& v) { return project(ops::avgpool2d_eval(v, 2), proj); }, x,
                                analytic);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("softmax cross entropy gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(6000 + seed);
    const Tensor<double> logits = random_tensor({3, 5}, rng);
    const std::vector<int> labels = {static_cast<int>(rng.below(5)), static_cast<int>(rng.below(5)),
                                     static_cast<int>(rng.below(5))};
    auto res = ops::softmax_cross_entropy(logits, labels);
    auto r = dcil::check_gradient(
        [&](const Tensor<double>& v) { return ops::softmax_cross_entropy(v, labels).loss; }, logits, res.grad_logits);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("kd loss gradient (student side) matches central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(7000 + seed);
    const Tensor<double> teacher = random_tensor({2, 4}, rng);
    const Tensor<double> student = random_tensor({2, 4}, rng);
    auto res = ops::kd_kl_loss(teacher, student, 2.0);
    auto r = dcil::check_gradient([&](const Tensor<double>& v) { return ops::kd_kl_loss(teacher, v, 2.0).loss; },
                                  student, res.grad_logits);
    CHECK(r.max_rel_error < 1e-6);
  }
}
