#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dcil/gradcheck.hpp"
#include "dcil/model.hpp"
#include "dcil/ops.hpp"
#include "dcil/random.hpp"

using dcil::DualPathNetwork;
using dcil::LayerKind;
using dcil::Mode;
using dcil::NetworkSpec;
using dcil::PathId;
using dcil::Tensor;

namespace {

Tensor<double> random_batch(std::vector<std::size_t> shape, std::uint64_t seed) {
  dcil::Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

NetworkSpec tiny_conv_spec() {
  NetworkSpec spec;
  spec.layers = dcil::parse_layer_chain("conv:2:3:1:1,bn,relu,avgpool:0,classifier");
  spec.input_shape = {1, 4, 4};
  spec.num_classes = 3;
  return spec;
}

}  // namespace

TEST_CASE("layer chain parsing") {
  auto layers = dcil::parse_layer_chain("conv:12:3:2:1,bn,relu,avgpool:0,flatten,linear:8,classifier");
  REQUIRE(layers.size() == 7);
  CHECK(layers[0].kind == LayerKind::Conv);
  CHECK(layers[0].channels == 12);
  CHECK(layers[0].stride == 2);
  CHECK(layers[0].pad == 1);
  CHECK(layers[3].kind == LayerKind::AvgPool);
  CHECK(layers[5].units == 8);
  CHECK_THROWS_AS(dcil::parse_layer_chain("conv"), dcil::config_error);
  CHECK_THROWS_AS(dcil::parse_layer_chain("dropout:0.5"), dcil::config_error);
  CHECK_THROWS_AS(dcil::parse_layer_chain("linear:abc"), dcil::config_error);
  CHECK_NOTHROW(dcil::parse_layer_chain(dcil::model_preset("mnist_cnn")));
  CHECK_NOTHROW(dcil::parse_layer_chain(dcil::model_preset("mnist_mlp")));
  CHECK_NOTHROW(dcil::parse_layer_chain(dcil::model_preset("cifar_cnn")));
  CHECK_THROWS_AS(dcil::model_preset("resnet50"), dcil::config_error);
}

TEST_CASE("build validates the layer chain") {
  NetworkSpec empty;
  empty.input_shape = {2};
  CHECK_THROWS_AS(DualPathNetwork<double>::build(empty, 1), dcil::config_error);

  NetworkSpec no_cls;
  no_cls.layers = dcil::parse_layer_chain("flatten,linear:4");
  no_cls.input_shape = {2};
  CHECK_THROWS_AS(DualPathNetwork<double>::build(no_cls, 1), dcil::config_error);

  NetworkSpec conv_on_flat;
  conv_on_flat.layers = dcil::parse_layer_chain("conv:4:3:1:1,classifier");
  conv_on_flat.input_shape = {16};
  CHECK_THROWS_AS(DualPathNetwork<double>::build(conv_on_flat, 1), dcil::config_error);
}

TEST_CASE("paths coincide bit-exactly with all-ones masks and cloned heads") {
  NetworkSpec spec;
  spec.layers = dcil::parse_layer_chain("linear:2,classifier");
  spec.input_shape = {2};
  spec.num_classes = 2;
  auto net = DualPathNetwork<double>::build(spec, 3);
  const Tensor<double> x = random_batch({5, 2}, 11);
  const Tensor<double> p = net.forward(PathId::P, x, Mode::Eval);
  const Tensor<double> s = net.forward(PathId::S, x, Mode::Eval);
  CHECK(std::memcmp(p.data(), s.data(), p.numel() * sizeof(double)) == 0);
}

TEST_CASE("desk-scale CNN prunable count from spec arithmetic") {
  NetworkSpec spec;
  spec.layers = dcil::parse_layer_chain(dcil::model_preset("mnist_cnn"));
  spec.input_shape = {1, 28, 28};
  spec.num_classes = 10;
  auto net = DualPathNetwork<float>::build(spec, 1);
  auto [total, per_layer] = net.count_prunable();
  // conv chains 1->12->24->48->48, all 3x3
  const std::size_t expected = 12 * 1 * 9 + 24 * 12 * 9 + 48 * 24 * 9 + 48 * 48 * 9;
  CHECK(total == expected);
  CHECK(total == 33804);
  CHECK(total >= 20000);
  CHECK(total <= 50000);
  CHECK(per_layer.size() == 4);

  std::size_t sum = 0;
  for (const auto& [id, n] : per_layer) sum += n;
  CHECK(sum == total);
}

TEST_CASE("single linear count_prunable") {
  NetworkSpec spec;
  spec.layers = dcil::parse_layer_chain("linear:2,classifier");
  spec.input_shape = {2};
  spec.num_classes = 2;
  auto net = DualPathNetwork<double>::build(spec, 1);
  CHECK(net.count_prunable().first == 4);
}

TEST_CASE("all-zero masks with zero bias silence the P path") {
  auto net = DualPathNetwork<double>::build(tiny_conv_spec(), 5);
  for (auto* p : net.prunable_params()) p->set_mask(Tensor<double>::zeros(p->weight.shape()));
  // conv bias is zero-initialized, classifier bias too; logits collapse to 0
  const Tensor<double> x = random_batch({2, 1, 4, 4}, 9);
  const Tensor<double> logits = net.forward(PathId::P, x, Mode::Eval);
  for (std::size_t i = 0; i < logits.numel(); ++i) CHECK(logits[i] == 0.0);
  // the S path still sees the full weights
  const Tensor<double> s = net.forward(PathId::S, x, Mode::Eval);
  double norm = 0;
  for (std::size_t i = 0; i < s.numel(); ++i) norm += std::abs(s[i]);
  CHECK(norm > 0.0);
}

TEST_CASE("flipping one mask bit changes P logits but not S logits") {
  auto net = DualPathNetwork<double>::build(tiny_conv_spec(), 5);
  auto params = net.prunable_params();
  Tensor<double> mask = Tensor<double>::ones(params[0]->weight.shape());
  mask[3] = 0.0;
  params[0]->set_mask(mask);

  const Tensor<double> x = random_batch({2, 1, 4, 4}, 13);
  const Tensor<double> p0 = net.forward(PathId::P, x, Mode::Eval);
  const Tensor<double> s0 = net.forward(PathId::S, x, Mode::Eval);

  mask[3] = 1.0;
  params[0]->set_mask(mask);
  const Tensor<double> p1 = net.forward(PathId::P, x, Mode::Eval);
  const Tensor<double> s1 = net.forward(PathId::S, x, Mode::Eval);

  CHECK(std::memcmp(s0.data(), s1.data(), s0.numel() * sizeof(double)) == 0);
  bool changed = false;
  for (std::size_t i = 0; i < p0.numel(); ++i) changed = changed || p0[i] != p1[i];
  CHECK(changed);
}

TEST_CASE("superset property: active weights identical in both paths") {
  auto net = DualPathNetwork<double>::build(tiny_conv_spec(), 8);
  auto params = net.prunable_params();
  dcil::Rng rng(2);
  for (auto* p : params) {
    Tensor<double> mask(p->weight.shape());
    for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.coin() ? 1.0 : 0.0;
    p->set_mask(mask);
    const Tensor<double> masked = p->masked_weight();
    for (std::size_t i = 0; i < mask.numel(); ++i) {
      if (mask[i] == 1.0) {
        CHECK(masked[i] == p->weight[i]);
      } else {
        CHECK(masked[i] == 0.0);
      }
    }
  }
}

TEST_CASE("batch-norm statistics never alias between paths") {
  auto net = DualPathNetwork<double>::build(tiny_conv_spec(), 21);
  const Tensor<double> x = random_batch({4, 1, 4, 4}, 3);

  auto snapshot_stats = [&](int path) {
    std::vector<double> out;
    for (const auto& layer : net.layers()) {
      if (const auto* bn = std::get_if<dcil::net::BatchNormLayer<double>>(&layer)) {
        for (std::size_t i = 0; i < bn->stats[path].mean.numel(); ++i) {
          out.push_back(bn->stats[path].mean[i]);
          out.push_back(bn->stats[path].var[i]);
        }
      }
    }
    return out;
  };

  const auto s_before = snapshot_stats(1);
  const auto p_before = snapshot_stats(0);
  net.forward(PathId::P, x, Mode::Train);
  CHECK(snapshot_stats(1) == s_before);       // S stats untouched
  CHECK(snapshot_stats(0) != p_before);       // P stats moved
  const auto p_after = snapshot_stats(0);
  net.forward(PathId::S, x, Mode::Train);
  CHECK(snapshot_stats(0) == p_after);        // P stats untouched by S pass
}

TEST_CASE("backward produces tagged gradients and enforces pairing") {
  auto net = DualPathNetwork<double>::build(tiny_conv_spec(), 4);
  const Tensor<double> x = random_batch({2, 1, 4, 4}, 6);
  dcil::ForwardTrace<double> trace;
  const Tensor<double> logits = net.forward(PathId::P, x, Mode::Train, &trace);

  SUBCASE("zero grad_logits give an all-zero GradSet") {
    auto g = net.backward(trace, Tensor<double>(logits.shape()));
    CHECK(g.path == PathId::P);
    CHECK(g.all_zero());
  }

  SUBCASE("trace consumed exactly once") {
    net.backward(trace, Tensor<double>(logits.shape()));
    CHECK_THROWS_AS(net.backward(trace, Tensor<double>(logits.shape())), dcil::contract_error);
  }

  SUBCASE("backward without forward trace") {
    dcil::ForwardTrace<double> empty;
    CHECK_THROWS_AS(net.backward(empty, Tensor<double>(logits.shape())), dcil::contract_error);
  }
}

TEST_CASE("full-net finite differences: one trunk weight per layer") {
  NetworkSpec spec;
  spec.layers = dcil::parse_layer_chain("conv:2:3:1:1,bn,relu,conv:3:3:2:1,relu,avgpool:0,classifier");
  spec.input_shape = {1, 6, 6};
  spec.num_classes = 3;
  auto net = DualPathNetwork<double>::build(spec, 17);
  const Tensor<double> x = random_batch({3, 1, 6, 6}, 23);
  const std::vector<int> labels = {0, 2, 1};

  for (PathId path : {PathId::P, PathId::S}) {
    dcil::ForwardTrace<double> trace;
    const Tensor<double> logits = net.forward(path, x, Mode::Train, &trace);
    auto ce = dcil::ops::softmax_cross_entropy(logits, labels);
    auto grads = net.backward(trace, ce.grad_logits);

    for (auto* p : net.prunable_params()) {
      const Tensor<double>& analytic = grads.at(p->id);
      const std::size_t probe = p->weight.numel() / 2;
      const double saved = p->weight[probe];
      const double h = 1e-5;
      auto loss_at = [&](double v) {
        p->weight[probe] = v;
        auto copy = net;  // fresh running stats per evaluation
        const Tensor<double> lg = copy.forward(path, x, Mode::Train);
        return dcil::ops::softmax_cross_entropy(lg, labels).loss;
      };
      const double numeric = (loss_at(saved + h) - loss_at(saved - h)) / (2 * h);
      p->weight[probe] = saved;
      const double denom = std::max({std::abs(numeric), std::abs(analytic[probe]), 1e-6});
      CHECK(std::abs(numeric - analytic[probe]) / denom < 1e-4);
    }
  }
}
