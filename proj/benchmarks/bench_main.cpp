#include <benchmark/benchmark.h>

#include "dcil/model.hpp"
#include "dcil/ops.hpp"
#include "dcil/pruning.hpp"
#include "dcil/random.hpp"
#include "dcil/trainers.hpp"

namespace {

using dcil::Tensor;

Tensor<float> random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  dcil::Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

dcil::TrainConfig bench_config(dcil::TrainerKind trainer) {
  dcil::TrainConfig cfg;
  cfg.trainer = trainer;
  cfg.epochs = 1;
  cfg.batch_size = 128;
  cfg.schedule = {0.0, 0.9, 0.0, 1.0};
  cfg.model.layers = dcil::parse_layer_chain(dcil::model_preset("mnist_cnn"));
  cfg.model.input_shape = {1, 28, 28};
  cfg.warmup_epochs = 0;
  return cfg;
}

void BM_Conv2dForward(benchmark::State& state) {
  const Tensor<float> input = random_tensor({128, 24, 7, 7}, 1);
  const Tensor<float> weight = random_tensor({48, 24, 3, 3}, 2);
  const Tensor<float> bias = random_tensor({48}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dcil::ops::conv2d_eval(input, weight, bias, {1, 1}));
  }
}
BENCHMARK(BM_Conv2dForward);

void BM_Conv2dBackward(benchmark::State& state) {
  const Tensor<float> input = random_tensor({128, 24, 7, 7}, 1);
  const Tensor<float> weight = random_tensor({48, 24, 3, 3}, 2);
  const Tensor<float> bias = random_tensor({48}, 3);
  const Tensor<float> grad = random_tensor({128, 48, 7, 7}, 4);
  for (auto _ : state) {
    auto [out, ctx] = dcil::ops::conv2d_forward(input, weight, bias, {1, 1});
    benchmark::DoNotOptimize(dcil::ops::conv2d_backward(ctx, grad));
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_MaskRefresh(benchmark::State& state) {
  auto net = dcil::DualPathNetwork<float>::build(
      {dcil::parse_layer_chain(dcil::model_preset("mnist_cnn")), {1, 28, 28}, 10}, 1);
  auto params = net.prunable_params();
  for (auto _ : state) {
    dcil::compute_masks(params, 0.9, dcil::Granularity::Weight);
  }
}
BENCHMARK(BM_MaskRefresh);

void BM_TrainStepDpf(benchmark::State& state) {
  dcil::Trainer<float> trainer(bench_config(dcil::TrainerKind::Dpf));
  const Tensor<float> images = random_tensor({128, 1, 28, 28}, 5);
  std::vector<int> labels(128);
  for (int i = 0; i < 128; ++i) labels[i] = i % 10;
  for (auto _ : state) {
    benchmark::DoNotOptimize(trainer.train_step(images, labels, 0.1, 0.0));
  }
}
BENCHMARK(BM_TrainStepDpf);

void BM_TrainStepDcil(benchmark::State& state) {
  dcil::Trainer<float> trainer(bench_config(dcil::TrainerKind::Dcil));
  const Tensor<float> images = random_tensor({128, 1, 28, 28}, 5);
  std::vector<int> labels(128);
  for (int i = 0; i < 128; ++i) labels[i] = i % 10;
  for (auto _ : state) {
    benchmark::DoNotOptimize(trainer.train_step(images, labels, 0.1, 1.0));
  }
}
BENCHMARK(BM_TrainStepDcil);

}  // namespace

BENCHMARK_MAIN();
