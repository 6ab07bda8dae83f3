#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dcil/data.hpp"
#include "dcil/errors.hpp"
#include "dcil/model.hpp"
#include "dcil/pruning.hpp"

namespace dcil {

struct EpochRow {
  int epoch = 0;
  long long iter = 0;
  double lr = 0.0;
  double s_c = 0.0;
  double realized_sparsity = 0.0;
  double loss_p = 0.0;
  double loss_s = 0.0;
  double kd_loss = 0.0;
  double acc_p = 0.0;
  double acc_s = 0.0;
};

struct ProbeRow {
  int epoch = 0;
  long long iter = 0;
  double acc = 0.0;
  bool refreshed = false;
};

/// Per-run metric log: one row per epoch, optional per-iteration probe rows,
/// and the echoed effective configuration.
struct RunRecord {
  std::vector<EpochRow> rows;
  std::vector<ProbeRow> probe;
  std::vector<std::pair<std::string, std::string>> config_echo;
};

struct StabilityReport {
  std::size_t window = 0;      // last ceil(0.1 * epochs) epochs
  double std_dev = 0.0;        // population std of top-1 accuracy over the window
  double best_acc = 0.0;
  int best_epoch = 0;
  double last_acc = 0.0;
  double gap = 0.0;            // best - last
};

/// Population standard deviation (divide by the window size).
inline double stability_std(const std::vector<double>& window) {
  if (window.size() < 2) throw std::invalid_argument("stability_std: window must have at least 2 entries");
  double mean = 0.0;
  for (double v : window) mean += v;
  mean /= static_cast<double>(window.size());
  double var = 0.0;
  for (double v : window) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(window.size()));
}

inline std::size_t stability_window(std::size_t epochs) {
  return static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(epochs)));
}

inline StabilityReport stability_report(const RunRecord& record) {
  if (record.rows.size() < 2) throw std::invalid_argument("stability_report: need at least 2 epochs");
  StabilityReport rep;
  rep.window = std::max<std::size_t>(2, stability_window(record.rows.size()));
  std::vector<double> tail;
  for (std::size_t i = record.rows.size() - rep.window; i < record.rows.size(); ++i)
    tail.push_back(record.rows[i].acc_p);
  rep.std_dev = stability_std(tail);
  rep.last_acc = record.rows.back().acc_p;
  rep.best_acc = record.rows[0].acc_p;
  rep.best_epoch = record.rows[0].epoch;
  for (const EpochRow& r : record.rows) {
    if (r.acc_p > rep.best_acc) {
      rep.best_acc = r.acc_p;
      rep.best_epoch = r.epoch;
    }
  }
  rep.gap = rep.best_acc - rep.last_acc;
  return rep;
}

/// Eval-mode top-1 accuracy of the chosen path. Ties in the argmax resolve to
/// the lowest class index.
template <class S>
double evaluate(DualPathNetwork<S>& net, PathId path, const Dataset<S>& ds, std::size_t eval_batch = 512) {
  if (ds.size() == 0) throw data_error("evaluate: empty dataset");
  std::size_t correct = 0;
  BatchIterator it(ds.size(), eval_batch, 0, 0, /*shuffle=*/false);
  std::vector<std::size_t> idx;
  while (it.next(idx)) {
    auto [images, labels] = gather_batch(ds, idx);
    const Tensor<S> logits = net.forward(path, images, Mode::Eval);
    const std::size_t classes = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const S* row = logits.data() + b * classes;
      std::size_t arg = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (row[c] > row[arg]) arg = c;
      }
      if (static_cast<int>(arg) == labels[b]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

struct SparsityAuditRow {
  std::string id;
  std::size_t numel = 0;
  std::size_t zeros = 0;
  double sparsity = 0.0;
  std::size_t filters = 0;       // conv tensors only
  std::size_t filters_zero = 0;  // fully masked-out slabs
};

struct SparsityAudit {
  std::vector<SparsityAuditRow> layers;
  std::size_t total = 0;
  std::size_t total_zeros = 0;
  double global = 0.0;
};

template <class S>
SparsityAudit sparsity_audit(const DualPathNetwork<S>& net) {
  SparsityAudit audit;
  for (const PrunableParam<S>* p : net.prunable_params()) {
    SparsityAuditRow row;
    row.id = p->id;
    row.numel = p->mask.numel();
    row.zeros = p->mask_zeros();
    row.sparsity = row.numel ? static_cast<double>(row.zeros) / static_cast<double>(row.numel) : 0.0;
    if (p->is_conv()) {
      row.filters = p->mask.dim(0);
      const std::size_t slab = p->mask.numel() / row.filters;
      for (std::size_t f = 0; f < row.filters; ++f) {
        bool all_zero = true;
        for (std::size_t i = 0; i < slab && all_zero; ++i) all_zero = p->mask[f * slab + i] == S(0);
        if (all_zero) ++row.filters_zero;
      }
    }
    audit.total += row.numel;
    audit.total_zeros += row.zeros;
    audit.layers.push_back(std::move(row));
  }
  audit.global = audit.total ? static_cast<double>(audit.total_zeros) / static_cast<double>(audit.total) : 0.0;
  return audit;
}

// ---------------------------------------------------------------------------
// report emitters (CSV per RFC 4180, static SVG 1.1 line charts)
// ---------------------------------------------------------------------------

void emit_csv(const RunRecord& record, const std::string& path);
void emit_probe_csv(const RunRecord& record, const std::string& path);
RunRecord parse_run_csv(const std::string& path);
void emit_audit_csv(const SparsityAudit& audit, const std::string& path);
void emit_stability_txt(const StabilityReport& report, const std::string& path);

struct SvgSeries {
  std::string name;
  std::vector<double> x, y;
};

void emit_svg(const std::vector<SvgSeries>& series, const std::string& path, const std::string& title,
              const std::string& x_label, const std::string& y_label);
void emit_run_svg(const RunRecord& record, const std::string& path);
void emit_probe_svg(const RunRecord& record, const std::string& path);

}  // namespace dcil
