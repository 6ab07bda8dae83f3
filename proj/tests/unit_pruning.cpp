#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "dcil/pruning.hpp"
#include "dcil/random.hpp"
#include "dcil/schedule.hpp"

using dcil::Granularity;
using dcil::PrunableParam;
using dcil::Rng;
using dcil::SparsitySchedule;
using dcil::Tensor;

TEST_CASE("sparsity schedule endpoints and hand values") {
  SparsitySchedule s{0.0, 0.95, 0.0, 225.0};
  CHECK(s.at(0.0) == 0.0);
  CHECK(s.at(225.0) == 0.95);
  CHECK(s.at(300.0) == 0.95);  // clamped past the ramp
  CHECK(s.at(-5.0) == 0.0);    // clamped before the start

  SparsitySchedule h{0.0, 0.9, 0.0, 100.0};
  // 0.9 + (0 - 0.9) * (1 - 0.5)^3 = 0.9 - 0.9 * 0.125
  CHECK(h.at(50.0) == doctest::Approx(0.7875).epsilon(1e-12));

  SparsitySchedule bad{0.5, 0.3, 0.0, 10.0};
  CHECK_THROWS_AS(bad.validate(), dcil::config_error);
}

TEST_CASE("sparsity schedule is monotone when target >= initial") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    SparsitySchedule s;
    s.initial = rng.uniform(0.0, 0.5);
    s.target = s.initial + rng.uniform(0.0, 0.99 - s.initial - 1e-6);
    s.start_epoch = rng.uniform(0.0, 10.0);
    s.ramp_epochs = 1.0 + rng.uniform(0.0, 50.0);
    double prev = -1.0;
    for (double c = -2.0; c < s.start_epoch + s.ramp_epochs + 5.0; c += 0.37) {
      const double v = s.at(c);
      CHECK(v >= prev - 1e-15);
      prev = v;
    }
  }
}

TEST_CASE("target_count floors and validates") {
  CHECK(dcil::target_count(0.95, 100) == 95);
  CHECK(dcil::target_count(0.5, 7) == 3);
  CHECK(dcil::target_count(0.0, 123456) == 0);
  CHECK_THROWS_AS(dcil::target_count(1.0, 10), dcil::config_error);
  CHECK_THROWS_AS(dcil::target_count(-0.1, 10), dcil::config_error);
}

TEST_CASE("should_refresh fires every F iterations after the first") {
  dcil::MaskUpdatePolicy policy;
  policy.frequency = 16;
  CHECK(dcil::should_refresh(16, policy));
  CHECK_FALSE(dcil::should_refresh(15, policy));
  CHECK(dcil::should_refresh(32, policy));
  CHECK_FALSE(dcil::should_refresh(0, policy));
  policy.enabled = false;
  CHECK_FALSE(dcil::should_refresh(16, policy));
  policy.frequency = 0;
  CHECK_THROWS_AS(policy.validate(), dcil::config_error);
}

TEST_CASE("weight-granularity masks zero the k smallest magnitudes") {
  PrunableParam<double> p("p0", Tensor<double>({4}, {0.5, -0.1, 0.3, 0.05}));
  std::vector<PrunableParam<double>*> params{&p};
  dcil::compute_masks(params, 0.5, Granularity::Weight);
  CHECK(p.mask[0] == 1.0);
  CHECK(p.mask[1] == 0.0);  // |-0.1|
  CHECK(p.mask[2] == 1.0);
  CHECK(p.mask[3] == 0.0);  // |0.05|
  CHECK(p.mask_zeros() == dcil::target_count(0.5, 4));

  dcil::compute_masks(params, 0.0, Granularity::Weight);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.mask[i] == 1.0);
}

TEST_CASE("equal weights prune in (layer, flat index) order") {
  PrunableParam<double> a("a", Tensor<double>::full({3}, 0.2));
  PrunableParam<double> b("b", Tensor<double>::full({3}, 0.2));
  std::vector<PrunableParam<double>*> params{&a, &b};
  dcil::compute_masks(params, 0.5, Granularity::Weight);  // k = 3 of 6
  CHECK(a.mask[0] == 0.0);
  CHECK(a.mask[1] == 0.0);
  CHECK(a.mask[2] == 0.0);
  CHECK(b.mask[0] == 1.0);
  CHECK(b.mask[1] == 1.0);
  CHECK(b.mask[2] == 1.0);
}

TEST_CASE("masks agree with an independent sort oracle") {
  Rng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    PrunableParam<double> a("a", Tensor<double>({5, 3}));
    PrunableParam<double> b("b", Tensor<double>({4}));
    for (std::size_t i = 0; i < a.weight.numel(); ++i) a.weight[i] = rng.normal();
    for (std::size_t i = 0; i < b.weight.numel(); ++i) b.weight[i] = rng.normal();
    std::vector<PrunableParam<double>*> params{&a, &b};
    const double s_c = rng.uniform(0.0, 0.95);
    dcil::compute_masks(params, s_c, Granularity::Weight);

    // Oracle: full sort by (|w|, layer, index), prune the first k.
    std::vector<std::tuple<double, int, int>> units;
    for (std::size_t i = 0; i < a.weight.numel(); ++i) units.emplace_back(std::abs(a.weight[i]), 0, int(i));
    for (std::size_t i = 0; i < b.weight.numel(); ++i) units.emplace_back(std::abs(b.weight[i]), 1, int(i));
    std::sort(units.begin(), units.end());
    const std::size_t k = dcil::target_count(s_c, units.size());
    std::set<std::pair<int, int>> expect_zero;
    for (std::size_t u = 0; u < k; ++u) expect_zero.insert({std::get<1>(units[u]), std::get<2>(units[u])});

    std::size_t zeros = 0;
    for (std::size_t i = 0; i < a.weight.numel(); ++i) {
      const bool z = a.mask[i] == 0.0;
      CHECK(z == (expect_zero.count({0, int(i)}) > 0));
      zeros += z;
    }
    for (std::size_t i = 0; i < b.weight.numel(); ++i) {
      const bool z = b.mask[i] == 0.0;
      CHECK(z == (expect_zero.count({1, int(i)}) > 0));
      zeros += z;
    }
    CHECK(zeros == k);
  }
}

TEST_CASE("mask computation is idempotent") {
  Rng rng(7);
  PrunableParam<double> p("p", Tensor<double>({6, 4}));
  for (std::size_t i = 0; i < p.weight.numel(); ++i) p.weight[i] = rng.normal();
  std::vector<PrunableParam<double>*> params{&p};
  dcil::compute_masks(params, 0.4, Granularity::Weight);
  const Tensor<double> first = p.mask;
  dcil::compute_masks(params, 0.4, Granularity::Weight);
  for (std::size_t i = 0; i < first.numel(); ++i) CHECK(first[i] == p.mask[i]);
}

TEST_CASE("pruned weights revive when their magnitude grows") {
  PrunableParam<double> p("p", Tensor<double>({4}, {1.0, 0.01, 0.8, 0.9}));
  std::vector<PrunableParam<double>*> params{&p};
  dcil::compute_masks(params, 0.25, Granularity::Weight);  // k=1: index 1 pruned
  CHECK(p.mask[1] == 0.0);
  p.weight[1] = 5.0;  // trained past the threshold via the real-weight update
  dcil::compute_masks(params, 0.25, Granularity::Weight);
  CHECK(p.mask[1] == 1.0);
  CHECK(p.mask[2] == 0.0);  // now the smallest magnitude
}

TEST_CASE("masked view applies the mask exactly") {
  PrunableParam<double> p("p", Tensor<double>({4}, {1, 2, 3, 4}));
  p.set_mask(Tensor<double>({4}, {1, 0, 1, 0}));
  const Tensor<double> masked = p.masked_weight();
  CHECK(masked[0] == 1.0);
  CHECK(masked[1] == 0.0);
  CHECK(masked[2] == 3.0);
  CHECK(masked[3] == 0.0);
  CHECK_THROWS_AS(p.set_mask(Tensor<double>({4}, {1, 0.5, 1, 0})), dcil::shape_error);
}

TEST_CASE("filter granularity zeroes whole slabs, ranked by RMS") {
  // Two conv layers, 2 filters each; slab RMS per filter is explicit.
  PrunableParam<double> a("a", Tensor<double>({2, 1, 2, 2}));
  PrunableParam<double> b("b", Tensor<double>({2, 1, 1, 1}));
  // a filter 0: all 0.1 (rms 0.1); a filter 1: all 1.0 (rms 1.0)
  for (int i = 0; i < 4; ++i) a.weight[i] = 0.1;
  for (int i = 4; i < 8; ++i) a.weight[i] = 1.0;
  b.weight[0] = 0.5;   // rms 0.5
  b.weight[1] = 0.05;  // rms 0.05
  std::vector<PrunableParam<double>*> params{&a, &b};

  dcil::compute_masks(params, 0.5, Granularity::Filter);  // k = 2 of 4 filters
  // lowest RMS: b.filter1 (0.05), a.filter0 (0.1)
  for (int i = 0; i < 4; ++i) CHECK(a.mask[i] == 0.0);
  for (int i = 4; i < 8; ++i) CHECK(a.mask[i] == 1.0);
  CHECK(b.mask[0] == 1.0);
  CHECK(b.mask[1] == 0.0);

  // no partially-zero slab exists
  for (const auto* p : params) {
    const std::size_t filters = p->mask.dim(0);
    const std::size_t slab = p->mask.numel() / filters;
    for (std::size_t f = 0; f < filters; ++f) {
      double sum = 0;
      for (std::size_t i = 0; i < slab; ++i) sum += p->mask[f * slab + i];
      CHECK((sum == 0.0 || sum == double(slab)));
    }
  }
}

TEST_CASE("keep-one-filter guard prevents severed layers") {
  PrunableParam<double> small("small", Tensor<double>({2, 1, 1, 1}));
  small.weight[0] = 0.01;
  small.weight[1] = 0.02;
  PrunableParam<double> big("big", Tensor<double>({4, 1, 1, 1}));
  for (int i = 0; i < 4; ++i) big.weight[i] = 1.0 + i;
  std::vector<PrunableParam<double>*> params{&small, &big};
  dcil::compute_masks(params, 0.5, Granularity::Filter);  // k=3, would kill both small filters
  CHECK(small.mask_zeros() == 1);
  CHECK(small.mask[1] == 1.0);  // the higher-RMS filter survives
}

TEST_CASE("filter granularity leaves non-conv tensors dense") {
  PrunableParam<double> lin("lin", Tensor<double>({4, 4}));
  for (std::size_t i = 0; i < 16; ++i) lin.weight[i] = 0.001;
  PrunableParam<double> conv("conv", Tensor<double>({2, 1, 2, 2}));
  for (std::size_t i = 0; i < 8; ++i) conv.weight[i] = 1.0;
  std::vector<PrunableParam<double>*> params{&lin, &conv};
  dcil::compute_masks(params, 0.5, Granularity::Filter);
  CHECK(lin.mask_zeros() == 0);
  CHECK(dcil::count_units(params, Granularity::Filter) == 2);
  CHECK(dcil::count_units(params, Granularity::Weight) == 24);
}

TEST_CASE("lr schedule steps divide from their epoch on") {
  dcil::LrSchedule lr;
  lr.initial = 0.2;
  lr.steps = {{10, 10.0}, {15, 10.0}};
  lr.validate();
  CHECK(lr.at(0) == doctest::Approx(0.2));
  CHECK(lr.at(9) == doctest::Approx(0.2));
  CHECK(lr.at(10) == doctest::Approx(0.02));
  CHECK(lr.at(15) == doctest::Approx(0.002));
  dcil::LrSchedule bad;
  bad.steps = {{5, 10.0}, {5, 2.0}};
  CHECK_THROWS_AS(bad.validate(), dcil::config_error);
}
