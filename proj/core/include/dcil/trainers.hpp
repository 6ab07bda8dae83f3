#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dcil/checkpoint.hpp"
#include "dcil/data.hpp"
#include "dcil/metrics.hpp"
#include "dcil/model.hpp"
#include "dcil/optimizer.hpp"
#include "dcil/pruning.hpp"
#include "dcil/schedule.hpp"

namespace dcil {

enum class TrainerKind { Dense, StaticIncremental, Dpf, Dcil };
enum class Precision { F32, F64 };

inline const char* trainer_name(TrainerKind k) {
  switch (k) {
    case TrainerKind::Dense: return "dense";
    case TrainerKind::StaticIncremental: return "static";
    case TrainerKind::Dpf: return "dpf";
    case TrainerKind::Dcil: return "dcil";
  }
  return "?";
}

inline TrainerKind trainer_from_name(const std::string& name) {
  if (name == "dense") return TrainerKind::Dense;
  if (name == "static") return TrainerKind::StaticIncremental;
  if (name == "dpf") return TrainerKind::Dpf;
  if (name == "dcil") return TrainerKind::Dcil;
  throw config_error("unknown trainer '" + name + "' (expected dense, static, dpf or dcil)");
}

struct TrainConfig {
  TrainerKind trainer = TrainerKind::Dcil;
  int epochs = 20;
  int batch_size = 128;
  std::uint64_t seed = 1;
  Precision precision = Precision::F32;
  double lambda = 1.0;       // KD weight
  double temperature = 2.0;  // KD temperature
  int warmup_epochs = 0;     // epochs with the KD term disabled
  SparsitySchedule schedule;
  MaskUpdatePolicy policy;
  Granularity granularity = Granularity::Weight;
  OptimizerConfig optimizer;
  LrSchedule lr;
  NetworkSpec model;
  std::string arch;  // chain string, kept for the config echo
  AugmentPolicy augment = AugmentPolicy::None;
  int eval_batch = 512;
  bool instrument = false;  // capture per-step gradient routing (small nets)

  void validate() const {
    if (epochs < 0) throw config_error("epochs must be >= 0");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (lambda < 0.0) throw config_error("lambda must be >= 0");
    if (temperature <= 0.0) throw config_error("temperature must be > 0");
    if (warmup_epochs < 0 || warmup_epochs > epochs) {
      throw config_error("warmup_epochs must lie in [0, epochs]");
    }
    if (eval_batch < 1) throw config_error("eval_batch must be >= 1");
    schedule.validate();
    policy.validate();
    optimizer.validate();
    lr.validate();
    if (model.layers.empty()) throw config_error("model spec is empty");
  }
};

inline std::vector<std::pair<std::string, std::string>> echo_config(const TrainConfig& cfg) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::vector<std::pair<std::string, std::string>> echo;
  echo.emplace_back("train.trainer", trainer_name(cfg.trainer));
  echo.emplace_back("train.epochs", std::to_string(cfg.epochs));
  echo.emplace_back("train.batch_size", std::to_string(cfg.batch_size));
  echo.emplace_back("train.seed", std::to_string(cfg.seed));
  echo.emplace_back("train.precision", cfg.precision == Precision::F32 ? "f32" : "f64");
  echo.emplace_back("train.lambda", num(cfg.lambda));
  echo.emplace_back("train.temperature", num(cfg.temperature));
  echo.emplace_back("train.warmup_epochs", std::to_string(cfg.warmup_epochs));
  echo.emplace_back("train.eval_batch", std::to_string(cfg.eval_batch));
  echo.emplace_back("optimizer.lr", num(cfg.lr.initial));
  {
    std::string decay;
    for (const LrStep& s : cfg.lr.steps) {
      if (!decay.empty()) decay += ',';
      decay += std::to_string(s.epoch) + ':' + num(s.divisor);
    }
    echo.emplace_back("optimizer.lr_decay", decay);
  }
  echo.emplace_back("optimizer.momentum", num(cfg.optimizer.momentum));
  echo.emplace_back("optimizer.nesterov", cfg.optimizer.nesterov ? "true" : "false");
  echo.emplace_back("optimizer.weight_decay", num(cfg.optimizer.weight_decay));
  echo.emplace_back("sparsity.initial", num(cfg.schedule.initial));
  echo.emplace_back("sparsity.target", num(cfg.schedule.target));
  echo.emplace_back("sparsity.start_epoch", num(cfg.schedule.start_epoch));
  echo.emplace_back("sparsity.ramp_epochs", num(cfg.schedule.ramp_epochs));
  echo.emplace_back("mask.frequency", cfg.policy.enabled ? std::to_string(cfg.policy.frequency) : "none");
  echo.emplace_back("mask.granularity", cfg.granularity == Granularity::Weight ? "weight" : "filter");
  echo.emplace_back("model.arch", cfg.arch.empty() ? "(programmatic)" : cfg.arch);
  echo.emplace_back("data.augment", cfg.augment == AugmentPolicy::None ? "none" : "cifar");
  return echo;
}

/// Per-step losses, plus optional captures of the gradient routing for
/// instrumented runs: g_P (wrt the masked view), g_S (wrt the full weights)
/// and the combined gradient handed to the optimizer, per trunk parameter.
template <class S>
struct StepMetrics {
  double loss_p = 0.0;
  double loss_s = 0.0;
  double kd = 0.0;
  std::map<std::string, Tensor<S>> dbg_grad_p, dbg_grad_s, dbg_applied;
};

template <class S>
class Trainer {
public:
  explicit Trainer(const TrainConfig& cfg) : cfg_(cfg), net_(DualPathNetwork<S>::build(cfg.model, cfg.seed)) {
    cfg_.validate();
    if (cfg_.trainer != TrainerKind::Dense) {
      refresh_masks(cfg_.schedule.at(cfg_.schedule.start_epoch));
    }
  }

  DualPathNetwork<S>& network() { return net_; }
  const TrainConfig& config() const { return cfg_; }
  long long global_iter() const { return global_iter_; }
  void set_global_iter(long long it) { global_iter_ = it; }
  double last_refresh_sparsity() const { return last_refresh_sparsity_; }

  /// Recompute all masks from the current weight magnitudes at sparsity s_c.
  void refresh_masks(double s_c) {
    auto params = net_.prunable_params();
    compute_masks(params, s_c, cfg_.granularity);
    last_refresh_sparsity_ = s_c;
  }

  /// True when the iteration about to run (1-based global count) starts with
  /// a mask refresh. Dense training never refreshes.
  bool refresh_due() const {
    if (cfg_.trainer == TrainerKind::Dense) return false;
    return should_refresh(global_iter_ + 1, cfg_.policy);
  }

  /// One optimizer step on one batch. Mask refreshes are the epoch loop's job.
  StepMetrics<S> train_step(const Tensor<S>& images, const std::vector<int>& labels, double lr, double lambda_t) {
    ++global_iter_;
    switch (cfg_.trainer) {
      case TrainerKind::Dense:
      case TrainerKind::Dpf:
        return step_p_path(images, labels, lr, /*freeze_inactive=*/false);
      case TrainerKind::StaticIncremental:
        return step_p_path(images, labels, lr, /*freeze_inactive=*/true);
      case TrainerKind::Dcil:
        return step_dcil(images, labels, lr, lambda_t);
    }
    throw contract_error("unreachable trainer kind");
  }

private:
  // Dense, DPF and static-incremental all descend the P-path loss; they differ
  // only in where the gradient lands. DPF applies the masked-view gradient to
  // every real weight (the straight-through update), static freezes inactive
  // weights bit-exactly, dense runs with all-ones masks.
  StepMetrics<S> step_p_path(const Tensor<S>& images, const std::vector<int>& labels, double lr,
                             bool freeze_inactive) {
    ForwardTrace<S> trace;
    const Tensor<S> logits = net_.forward(PathId::P, images, Mode::Train, &trace);
    auto ce = ops::softmax_cross_entropy(logits, labels);
    GradSet<S> g = net_.backward(trace, ce.grad_logits);

    StepMetrics<S> m;
    m.loss_p = ce.loss;
    for (auto& layer : net_.layers()) {
      if (auto* conv = std::get_if<net::ConvLayer<S>>(&layer)) {
        apply_trunk(conv->weight, conv->bias, g, lr, freeze_inactive, m);
      } else if (auto* lin = std::get_if<net::LinearLayer<S>>(&layer)) {
        apply_trunk(lin->weight, lin->bias, g, lr, freeze_inactive, m);
      } else if (auto* bn = std::get_if<net::BatchNormLayer<S>>(&layer)) {
        const int p = static_cast<int>(PathId::P);
        sgd_update(bn->gamma[p].value, g.at(bn->gamma[p].id), bn->gamma[p].momentum, cfg_.optimizer, lr);
        sgd_update(bn->beta[p].value, g.at(bn->beta[p].id), bn->beta[p].momentum, cfg_.optimizer, lr);
      } else if (auto* cls = std::get_if<net::ClassifierLayer<S>>(&layer)) {
        const int p = static_cast<int>(PathId::P);
        sgd_update(cls->weight[p].value, g.at(cls->weight[p].id), cls->weight[p].momentum, cfg_.optimizer, lr);
        sgd_update(cls->bias[p].value, g.at(cls->bias[p].id), cls->bias[p].momentum, cfg_.optimizer, lr);
      }
    }
    return m;
  }

  void apply_trunk(PrunableParam<S>& w, Param<S>& bias, const GradSet<S>& g, double lr, bool freeze_inactive,
                   StepMetrics<S>& m) {
    const Tensor<S>& gw = g.at(w.id);
    if (cfg_.instrument) {
      m.dbg_grad_p.emplace(w.id, gw);
      m.dbg_applied.emplace(w.id, freeze_inactive ? hadamard(w.mask, gw) : gw);
    }
    sgd_update(w.weight, gw, w.momentum, cfg_.optimizer, lr, freeze_inactive ? &w.mask : nullptr);
    sgd_update(bias.value, g.at(bias.id), bias.momentum, cfg_.optimizer, lr);
  }

  // DCIL: both paths forward the same batch; the trunk gradient combines the
  // P path at active entries with the S path at inactive entries. Shared trunk
  // biases are never masked, so they follow the active-entry rule and take the
  // P-path gradient.
  StepMetrics<S> step_dcil(const Tensor<S>& images, const std::vector<int>& labels, double lr, double lambda_t) {
    ForwardTrace<S> trace_p, trace_s;
    const Tensor<S> logits_p = net_.forward(PathId::P, images, Mode::Train, &trace_p);
    const Tensor<S> logits_s = net_.forward(PathId::S, images, Mode::Train, &trace_s);
    auto ce_p = ops::softmax_cross_entropy(logits_p, labels);
    auto ce_s = ops::softmax_cross_entropy(logits_s, labels);

    Tensor<S> gl_p = ce_p.grad_logits;
    Tensor<S> gl_s = ce_s.grad_logits;
    double kd_p = 0.0, kd_s = 0.0;
    if (lambda_t > 0.0) {
      auto kdp = ops::kd_kl_loss(logits_s, logits_p, cfg_.temperature);  // soft target from S
      auto kds = ops::kd_kl_loss(logits_p, logits_s, cfg_.temperature);  // soft target from P
      axpy(static_cast<S>(lambda_t), kdp.grad_logits, gl_p);
      axpy(static_cast<S>(lambda_t), kds.grad_logits, gl_s);
      kd_p = kdp.loss;
      kd_s = kds.loss;
    }
    GradSet<S> gp = net_.backward(trace_p, gl_p);
    GradSet<S> gs = net_.backward(trace_s, gl_s);

    StepMetrics<S> m;
    m.loss_p = ce_p.loss + lambda_t * kd_p;
    m.loss_s = ce_s.loss + lambda_t * kd_s;
    m.kd = lambda_t * 0.5 * (kd_p + kd_s);

    for (auto& layer : net_.layers()) {
      if (auto* conv = std::get_if<net::ConvLayer<S>>(&layer)) {
        apply_trunk_dcil(conv->weight, conv->bias, gp, gs, lr, m);
      } else if (auto* lin = std::get_if<net::LinearLayer<S>>(&layer)) {
        apply_trunk_dcil(lin->weight, lin->bias, gp, gs, lr, m);
      } else if (auto* bn = std::get_if<net::BatchNormLayer<S>>(&layer)) {
        for (int p = 0; p < 2; ++p) {
          const GradSet<S>& g = p == static_cast<int>(PathId::P) ? gp : gs;
          sgd_update(bn->gamma[p].value, g.at(bn->gamma[p].id), bn->gamma[p].momentum, cfg_.optimizer, lr);
          sgd_update(bn->beta[p].value, g.at(bn->beta[p].id), bn->beta[p].momentum, cfg_.optimizer, lr);
        }
      } else if (auto* cls = std::get_if<net::ClassifierLayer<S>>(&layer)) {
        for (int p = 0; p < 2; ++p) {
          const GradSet<S>& g = p == static_cast<int>(PathId::P) ? gp : gs;
          sgd_update(cls->weight[p].value, g.at(cls->weight[p].id), cls->weight[p].momentum, cfg_.optimizer, lr);
          sgd_update(cls->bias[p].value, g.at(cls->bias[p].id), cls->bias[p].momentum, cfg_.optimizer, lr);
        }
      }
    }
    return m;
  }

  void apply_trunk_dcil(PrunableParam<S>& w, Param<S>& bias, const GradSet<S>& gp, const GradSet<S>& gs, double lr,
                        StepMetrics<S>& m) {
    const Tensor<S>& g_p = gp.at(w.id);
    const Tensor<S>& g_s = gs.at(w.id);
    Tensor<S> combined(w.weight.shape());
    for (std::size_t i = 0; i < combined.numel(); ++i) {
      combined[i] = w.mask[i] * g_p[i] + (S(1) - w.mask[i]) * g_s[i];
    }
    if (cfg_.instrument) {
      m.dbg_grad_p.emplace(w.id, g_p);
      m.dbg_grad_s.emplace(w.id, g_s);
      m.dbg_applied.emplace(w.id, combined);
    }
    sgd_update(w.weight, combined, w.momentum, cfg_.optimizer, lr);
    sgd_update(bias.value, gp.at(bias.id), bias.momentum, cfg_.optimizer, lr);
  }

  TrainConfig cfg_;
  DualPathNetwork<S> net_;
  long long global_iter_ = 0;
  double last_refresh_sparsity_ = 0.0;
};

template <class S>
struct FitOptions {
  std::string out_dir;       // empty: keep everything in memory
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  bool svg = true;
  int probe_epoch = -1;                  // per-iteration probe during this epoch
  const Dataset<S>* probe_set = nullptr; // defaults to the full test split
  std::string init_checkpoint;           // resume weights/masks from this file
  std::vector<std::pair<std::string, std::string>> extra_echo;
  std::function<void(double, DualPathNetwork<S>&)> on_refresh;  // (s_c, net)
  std::function<void(long long, DualPathNetwork<S>&, const StepMetrics<S>&)> on_step;
};

/// Full training loop: mask refresh every F iterations at the scheduled
/// (fractional-epoch) sparsity, one train step per batch, per-epoch evaluation
/// of both paths, CSV/SVG logging and checkpointing.
template <class S>
RunRecord fit(const TrainConfig& cfg, const Dataset<S>& train, const Dataset<S>& test,
              const FitOptions<S>& opts = {}) {
  cfg.validate();
  if (train.size() == 0) throw data_error("fit: empty training set");
  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);

  Trainer<S> trainer(cfg);
  int start_epoch = 0;
  if (!opts.init_checkpoint.empty()) {
    const CkptMeta meta = load_checkpoint(trainer.network(), opts.init_checkpoint);
    start_epoch = meta.epoch + 1;
    trainer.set_global_iter(meta.global_iter);
  }

  RunRecord record;
  record.config_echo = echo_config(cfg);
  for (const auto& kv : opts.extra_echo) record.config_echo.push_back(kv);

  const Dataset<S>* probe_set = opts.probe_set ? opts.probe_set : &test;

  if (cfg.epochs == 0) {
    EpochRow row;
    row.epoch = 0;
    row.iter = 0;
    row.lr = cfg.lr.at(0);
    row.s_c = cfg.trainer == TrainerKind::Dense ? 0.0 : cfg.schedule.at(0.0);
    row.realized_sparsity = realized_sparsity(trainer.network().prunable_params());
    row.acc_p = evaluate(trainer.network(), PathId::P, test, cfg.eval_batch);
    row.acc_s = evaluate(trainer.network(), PathId::S, test, cfg.eval_batch);
    record.rows.push_back(row);
  }

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr.at(epoch);
    const double lambda_t = (cfg.trainer == TrainerKind::Dcil && epoch >= cfg.warmup_epochs) ? cfg.lambda : 0.0;
    BatchIterator batches(train.size(), static_cast<std::size_t>(cfg.batch_size), cfg.seed,
                          static_cast<std::uint64_t>(epoch));
    Rng aug_rng = Rng::derive(cfg.seed, "augment", static_cast<std::uint64_t>(epoch));
    const double iters_per_epoch = static_cast<double>(batches.batches());

    double sum_loss_p = 0.0, sum_loss_s = 0.0, sum_kd = 0.0;
    std::size_t steps = 0;
    std::vector<std::size_t> idx;
    std::size_t in_epoch = 0;
    while (batches.next(idx)) {
      bool refreshed = false;
      if (trainer.refresh_due()) {
        const double frac_epoch = static_cast<double>(epoch) + static_cast<double>(in_epoch) / iters_per_epoch;
        const double s_c = cfg.schedule.at(frac_epoch);
        trainer.refresh_masks(s_c);
        refreshed = true;
        if (opts.on_refresh) opts.on_refresh(s_c, trainer.network());
      }
      auto [images, labels] = gather_batch(train, idx);
      augment_batch(images, cfg.augment, aug_rng);
      const StepMetrics<S> m = trainer.train_step(images, labels, lr, lambda_t);
      if (!std::isfinite(m.loss_p) || !std::isfinite(m.loss_s)) {
        throw numeric_error("non-finite loss at iteration " + std::to_string(trainer.global_iter()));
      }
      sum_loss_p += m.loss_p;
      sum_loss_s += m.loss_s;
      sum_kd += m.kd;
      ++steps;
      if (opts.on_step) opts.on_step(trainer.global_iter(), trainer.network(), m);
      if (epoch == opts.probe_epoch) {
        if (probe_set->size() == 0) throw data_error("sawtooth probe: empty probe set");
        ProbeRow pr;
        pr.epoch = epoch;
        pr.iter = trainer.global_iter();
        pr.acc = evaluate(trainer.network(), PathId::P, *probe_set, cfg.eval_batch);
        pr.refreshed = refreshed;
        record.probe.push_back(pr);
      }
      ++in_epoch;
    }

    EpochRow row;
    row.epoch = epoch;
    row.iter = trainer.global_iter();
    row.lr = lr;
    row.s_c = cfg.trainer == TrainerKind::Dense ? 0.0 : cfg.schedule.at(static_cast<double>(epoch) + 1.0);
    row.realized_sparsity = realized_sparsity(trainer.network().prunable_params());
    row.loss_p = steps ? sum_loss_p / static_cast<double>(steps) : 0.0;
    row.loss_s = steps ? sum_loss_s / static_cast<double>(steps) : 0.0;
    row.kd_loss = steps ? sum_kd / static_cast<double>(steps) : 0.0;
    row.acc_p = evaluate(trainer.network(), PathId::P, test, cfg.eval_batch);
    row.acc_s = evaluate(trainer.network(), PathId::S, test, cfg.eval_batch);
    record.rows.push_back(row);

    if (!opts.out_dir.empty() && opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      save_checkpoint(trainer.network(), opts.out_dir + "/checkpoint_epoch" + std::to_string(epoch) + ".ckpt",
                      CkptMeta{epoch, trainer.global_iter()});
    }
  }

  if (!opts.out_dir.empty()) {
    emit_csv(record, opts.out_dir + "/run.csv");
    if (opts.svg) emit_run_svg(record, opts.out_dir + "/run.svg");
    if (!record.probe.empty()) {
      emit_probe_csv(record, opts.out_dir + "/sawtooth.csv");
      if (opts.svg) emit_probe_svg(record, opts.out_dir + "/sawtooth.svg");
    }
    std::ofstream echo(opts.out_dir + "/config.txt", std::ios::trunc);
    for (const auto& [k, v] : record.config_echo) echo << k << '=' << v << '\n';
    save_checkpoint(trainer.network(), opts.out_dir + "/checkpoint_final.ckpt",
                    CkptMeta{cfg.epochs - 1, trainer.global_iter()});
    if (record.rows.size() >= 2) {
      emit_stability_txt(stability_report(record), opts.out_dir + "/stability.txt");
    }
    emit_audit_csv(sparsity_audit(trainer.network()), opts.out_dir + "/sparsity_audit.csv");
  }
  return record;
}

}  // namespace dcil
