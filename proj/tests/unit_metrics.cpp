#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "dcil/metrics.hpp"
#include "dcil/model.hpp"
#include "dcil/pruning.hpp"
#include "dcil/trainers.hpp"

namespace fs = std::filesystem;
using dcil::Dataset;
using dcil::DualPathNetwork;
using dcil::NetworkSpec;
using dcil::PathId;
using dcil::RunRecord;
using dcil::Tensor;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("dcil_metrics_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Minimal XML well-formedness: tags balance, no stray '<' or '&'.
bool xml_well_formed(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  if (text.rfind("<?xml", 0) != 0) return false;
  while (i < text.size()) {
    if (text[i] == '&') {
      const auto semi = text.find(';', i);
      if (semi == std::string::npos || semi - i > 6) return false;
      i = semi + 1;
      continue;
    }
    if (text[i] != '<') {
      ++i;
      continue;
    }
    const auto close = text.find('>', i);
    if (close == std::string::npos) return false;
    std::string tag = text.substr(i + 1, close - i - 1);
    i = close + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;
    if (tag[0] == '/') {
      if (stack.empty()) return false;
      if (stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    const bool self_closing = tag.back() == '/';
    if (self_closing) tag.pop_back();
    const std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
    if (!self_closing) stack.push_back(name);
  }
  return stack.empty();
}

}  // namespace

TEST_CASE("stability std hand values and properties") {
  CHECK(dcil::stability_std({0.9, 0.9, 0.9}) == 0.0);
  CHECK(dcil::stability_std({0.8, 0.9}) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK_THROWS_AS(dcil::stability_std({0.5}), std::invalid_argument);

  // scale consistency
  dcil::Rng rng(5);
  std::vector<double> accs;
  for (int i = 0; i < 12; ++i) accs.push_back(rng.uniform(0.0, 1.0));
  const double base = dcil::stability_std(accs);
  std::vector<double> scaled = accs;
  for (double& v : scaled) v *= 3.5;
  CHECK(dcil::stability_std(scaled) == doctest::Approx(3.5 * base).epsilon(1e-12));
}

TEST_CASE("stability report window and best/last accounting") {
  RunRecord record;
  const std::vector<double> accs = {0.1, 0.5, 0.8, 0.9, 0.7, 0.6, 0.85, 0.8, 0.82, 0.81,
                                    0.6, 0.82, 0.83, 0.81, 0.8, 0.8, 0.81, 0.8, 0.79, 0.8};
  for (int e = 0; e < 20; ++e) {
    dcil::EpochRow row;
    row.epoch = e;
    row.acc_p = accs[static_cast<std::size_t>(e)];
    record.rows.push_back(row);
  }
  const dcil::StabilityReport rep = dcil::stability_report(record);
  CHECK(rep.window == 2);  // ceil(0.1 * 20)
  CHECK(rep.std_dev == doctest::Approx(dcil::stability_std({0.79, 0.8})));
  CHECK(rep.best_acc == doctest::Approx(0.9));
  CHECK(rep.best_epoch == 3);
  CHECK(rep.last_acc == doctest::Approx(0.8));
  CHECK(rep.gap == doctest::Approx(0.1));

  RunRecord one;
  one.rows.push_back({});
  CHECK_THROWS_AS(dcil::stability_report(one), std::invalid_argument);
}

TEST_CASE("evaluate on handcrafted networks") {
  NetworkSpec spec;
  spec.layers = dcil::parse_layer_chain("classifier");
  spec.input_shape = {10};
  spec.num_classes = 10;
  auto net = DualPathNetwork<double>::build(spec, 1);

  Dataset<double> ds;
  const std::size_t n = 20;
  ds.images = Tensor<double>({n, 1, 1, 10});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(i % 10);
    ds.images[i * 10 + i % 10] = 1.0;  // one-hot along the feature axis
  }

  SUBCASE("identity head memorizes the toy set") {
    for (auto& layer : net.layers()) {
      if (auto* cls = std::get_if<dcil::net::ClassifierLayer<double>>(&layer)) {
        for (int p = 0; p < 2; ++p) {
          cls->weight[p].value = Tensor<double>::zeros({10, 10});
          for (std::size_t c = 0; c < 10; ++c) cls->weight[p].value[c * 10 + c] = 1.0;
          cls->bias[p].value = Tensor<double>::zeros({10});
        }
      }
    }
    CHECK(dcil::evaluate(net, PathId::P, ds) == 1.0);
    CHECK(dcil::evaluate(net, PathId::S, ds) == 1.0);
  }

  SUBCASE("constant logits land at chance level under the first-index tie break") {
    for (auto& layer : net.layers()) {
      if (auto* cls = std::get_if<dcil::net::ClassifierLayer<double>>(&layer)) {
        for (int p = 0; p < 2; ++p) {
          cls->weight[p].value = Tensor<double>::zeros({10, 10});
          cls->bias[p].value = Tensor<double>::zeros({10});
        }
      }
    }
    CHECK(dcil::evaluate(net, PathId::P, ds) == doctest::Approx(0.1));
  }

  SUBCASE("empty dataset is an error") {
    Dataset<double> empty;
    empty.images = Tensor<double>({1, 1, 1, 10});
    empty.labels.clear();
    CHECK_THROWS_AS(dcil::evaluate(net, PathId::P, empty), dcil::data_error);
  }
}

TEST_CASE("sparsity audit counts weights and filter slabs") {
  NetworkSpec spec;
  spec.layers = dcil::parse_layer_chain("conv:4:3:1:1,relu,avgpool:0,classifier");
  spec.input_shape = {1, 6, 6};
  spec.num_classes = 3;
  auto net = DualPathNetwork<double>::build(spec, 2);
  auto params = net.prunable_params();
  REQUIRE(params.size() == 1);
  REQUIRE(params[0]->weight.numel() == 36);

  SUBCASE("all-ones masks audit to zero sparsity") {
    const dcil::SparsityAudit audit = dcil::sparsity_audit(net);
    CHECK(audit.global == 0.0);
    CHECK(audit.total == 36);
    CHECK(audit.layers[0].filters == 4);
    CHECK(audit.layers[0].filters_zero == 0);
  }

  SUBCASE("weight-granularity refresh hits the floor exactly") {
    dcil::compute_masks(params, 0.5, dcil::Granularity::Weight);
    const dcil::SparsityAudit audit = dcil::sparsity_audit(net);
    CHECK(audit.total_zeros == 18);
    CHECK(audit.global == doctest::Approx(0.5).epsilon(1e-15));
  }

  SUBCASE("structured audit counts whole slabs") {
    dcil::compute_masks(params, 0.5, dcil::Granularity::Filter);
    const dcil::SparsityAudit audit = dcil::sparsity_audit(net);
    CHECK(audit.layers[0].filters_zero == 2);
    CHECK(audit.total_zeros == 18);  // two 1x3x3 slabs
  }
}

TEST_CASE("csv emitters and round trip") {
  const fs::path dir = temp_dir("csv");

  SUBCASE("empty record emits the header only") {
    RunRecord record;
    dcil::emit_csv(record, (dir / "empty.csv").string());
    std::ifstream in(dir / "empty.csv");
    std::string line;
    REQUIRE(std::getline(in, line));
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    CHECK(line == "epoch,iter,lr,S_c,realized_sparsity,loss_P,loss_S,kd_loss,acc_P,acc_S");
    CHECK_FALSE(std::getline(in, line));
  }

  SUBCASE("values round-trip through the file") {
    RunRecord record;
    dcil::Rng rng(8);
    for (int e = 0; e < 5; ++e) {
      dcil::EpochRow row;
      row.epoch = e;
      row.iter = 10 * e + 3;
      row.lr = rng.uniform(0.0, 0.2);
      row.s_c = rng.uniform(0.0, 0.95);
      row.realized_sparsity = rng.uniform(0.0, 0.95);
      row.loss_p = rng.uniform(0.0, 3.0);
      row.loss_s = rng.uniform(0.0, 3.0);
      row.kd_loss = rng.uniform(0.0, 1.0);
      row.acc_p = rng.uniform(0.0, 1.0);
      row.acc_s = rng.uniform(0.0, 1.0);
      record.rows.push_back(row);
    }
    dcil::emit_csv(record, (dir / "run.csv").string());
    const RunRecord parsed = dcil::parse_run_csv((dir / "run.csv").string());
    REQUIRE(parsed.rows.size() == record.rows.size());
    for (std::size_t i = 0; i < record.rows.size(); ++i) {
      CHECK(parsed.rows[i].epoch == record.rows[i].epoch);
      CHECK(parsed.rows[i].iter == record.rows[i].iter);
      CHECK(std::abs(parsed.rows[i].lr - record.rows[i].lr) < 1e-9);
      CHECK(std::abs(parsed.rows[i].loss_p - record.rows[i].loss_p) < 1e-9);
      CHECK(std::abs(parsed.rows[i].acc_s - record.rows[i].acc_s) < 1e-9);
    }
  }
}

TEST_CASE("svg charts are well-formed xml") {
  const fs::path dir = temp_dir("svg");
  RunRecord record;
  for (int e = 0; e < 8; ++e) {
    dcil::EpochRow row;
    row.epoch = e;
    row.acc_p = 0.5 + 0.05 * e;
    row.acc_s = 0.6 + 0.04 * e;
    row.realized_sparsity = 0.1 * e;
    record.rows.push_back(row);
    record.probe.push_back({e, e, 0.3 + 0.01 * e, e % 3 == 0});
  }
  dcil::emit_run_svg(record, (dir / "run.svg").string());
  dcil::emit_probe_svg(record, (dir / "probe.svg").string());
  for (const char* name : {"run.svg", "probe.svg"}) {
    std::ifstream in(dir / name);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CAPTURE(name);
    CHECK(xml_well_formed(text));
    CHECK(text.find("<svg") != std::string::npos);
    CHECK(text.find("</svg>") != std::string::npos);
  }
}

TEST_CASE("sawtooth probe flags align with the refresh rule") {
  Dataset<double> train;
  dcil::Rng rng(13);
  train.images = Tensor<double>({24, 1, 4, 4});
  for (std::size_t i = 0; i < train.images.numel(); ++i) train.images[i] = rng.normal();
  train.labels.resize(24);
  for (std::size_t i = 0; i < 24; ++i) train.labels[i] = static_cast<int>(i % 3);
  train.num_classes = 3;
  const Dataset<double> test = train;

  dcil::TrainConfig cfg;
  cfg.trainer = dcil::TrainerKind::Dpf;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.schedule = {0.0, 0.5, 0.0, 1.0};
  cfg.policy.frequency = 4;
  cfg.lr.initial = cfg.optimizer.lr = 0.05;
  cfg.model.layers = dcil::parse_layer_chain("conv:2:3:1:1,relu,avgpool:0,classifier");
  cfg.model.input_shape = {1, 4, 4};
  cfg.model.num_classes = 3;

  dcil::FitOptions<double> opts;
  opts.probe_epoch = 1;
  const RunRecord record = fit(cfg, train, test, opts);
  REQUIRE(record.probe.size() == 6);  // 6 iterations in epoch 1
  for (const dcil::ProbeRow& row : record.probe) {
    CHECK(row.epoch == 1);
    CHECK(row.refreshed == dcil::should_refresh(row.iter, cfg.policy));
    CHECK(row.acc >= 0.0);
    CHECK(row.acc <= 1.0);
  }
  // dense probes carry no refresh structure
  cfg.trainer = dcil::TrainerKind::Dense;
  const RunRecord dense = fit(cfg, train, test, opts);
  for (const dcil::ProbeRow& row : dense.probe) CHECK_FALSE(row.refreshed);
}
