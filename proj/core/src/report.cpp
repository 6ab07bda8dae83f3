#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dcil/errors.hpp"
#include "dcil/metrics.hpp"

namespace dcil {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw data_error(path + ": cannot open for writing");
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) fields.push_back(cur);
  return fields;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void emit_csv(const RunRecord& record, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "epoch,iter,lr,S_c,realized_sparsity,loss_P,loss_S,kd_loss,acc_P,acc_S\r\n";
  for (const EpochRow& r : record.rows) {
    out << r.epoch << ',' << r.iter << ',' << fmt(r.lr) << ',' << fmt(r.s_c) << ',' << fmt(r.realized_sparsity) << ','
        << fmt(r.loss_p) << ',' << fmt(r.loss_s) << ',' << fmt(r.kd_loss) << ',' << fmt(r.acc_p) << ','
        << fmt(r.acc_s) << "\r\n";
  }
  if (!out) throw data_error(path + ": write failed");
}

void emit_probe_csv(const RunRecord& record, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "epoch,iter,acc_P,refreshed\r\n";
  for (const ProbeRow& r : record.probe) {
    out << r.epoch << ',' << r.iter << ',' << fmt(r.acc) << ',' << (r.refreshed ? 1 : 0) << "\r\n";
  }
  if (!out) throw data_error(path + ": write failed");
}

RunRecord parse_run_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error(path + ": cannot open file");
  RunRecord record;
  std::string line;
  if (!std::getline(in, line)) throw data_error(path + ": empty file");
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 10) throw data_error(path + ": expected 10 fields, got " + std::to_string(f.size()));
    EpochRow r;
    r.epoch = std::stoi(f[0]);
    r.iter = std::stoll(f[1]);
    r.lr = std::stod(f[2]);
    r.s_c = std::stod(f[3]);
    r.realized_sparsity = std::stod(f[4]);
    r.loss_p = std::stod(f[5]);
    r.loss_s = std::stod(f[6]);
    r.kd_loss = std::stod(f[7]);
    r.acc_p = std::stod(f[8]);
    r.acc_s = std::stod(f[9]);
    record.rows.push_back(r);
  }
  return record;
}

void emit_audit_csv(const SparsityAudit& audit, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "layer,numel,zeros,sparsity,filters,filters_zero\r\n";
  for (const SparsityAuditRow& r : audit.layers) {
    out << r.id << ',' << r.numel << ',' << r.zeros << ',' << fmt(r.sparsity) << ',' << r.filters << ','
        << r.filters_zero << "\r\n";
  }
  out << "TOTAL," << audit.total << ',' << audit.total_zeros << ',' << fmt(audit.global) << ",,\r\n";
  if (!out) throw data_error(path + ": write failed");
}

void emit_stability_txt(const StabilityReport& report, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "window=" << report.window << '\n'
      << "std=" << fmt(report.std_dev) << '\n'
      << "best_acc=" << fmt(report.best_acc) << '\n'
      << "best_epoch=" << report.best_epoch << '\n'
      << "last_acc=" << fmt(report.last_acc) << '\n'
      << "gap=" << fmt(report.gap) << '\n';
}

void emit_svg(const std::vector<SvgSeries>& series, const std::string& path, const std::string& title,
              const std::string& x_label, const std::string& y_label) {
  const int width = 720, height = 420;
  const int ml = 64, mr = 140, mt = 40, mb = 48;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool has_data = false;
  for (const SvgSeries& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!has_data) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        has_data = true;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * plot_w; };
  auto py = [&](double y) { return mt + plot_h - (y - ymin) / (ymax - ymin) * plot_h; };

  static const char* kColors[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ofstream out = open_out(path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n";
  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\"" << mt + plot_h
      << "\" stroke=\"black\"/>\n";
  const int ticks = 5;
  for (int t = 0; t <= ticks; ++t) {
    const double fx = xmin + (xmax - xmin) * t / ticks;
    const double fy = ymin + (ymax - ymin) * t / ticks;
    char label[40];
    out << "<line x1=\"" << px(fx) << "\" y1=\"" << mt + plot_h << "\" x2=\"" << px(fx) << "\" y2=\""
        << mt + plot_h + 5 << "\" stroke=\"black\"/>\n";
    std::snprintf(label, sizeof(label), "%.4g", fx);
    out << "<text x=\"" << px(fx) << "\" y=\"" << mt + plot_h + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << label << "</text>\n";
    out << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(fy) << "\" x2=\"" << ml << "\" y2=\"" << py(fy)
        << "\" stroke=\"black\"/>\n";
    std::snprintf(label, sizeof(label), "%.4g", fy);
    out << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << label << "</text>\n";
  }
  out << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 8
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(x_label)
      << "</text>\n";
  out << "<text x=\"16\" y=\"" << mt + plot_h / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"12\" transform=\"rotate(-90 16 " << mt + plot_h / 2 << ")\">" << xml_escape(y_label)
      << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const SvgSeries& s = series[si];
    const char* color = kColors[si % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i) out << ' ';
      out << px(s.x[i]) << ',' << py(s.y[i]);
    }
    out << "\"/>\n";
    const double ly = mt + 16 + 18 * static_cast<double>(si);
    out << "<line x1=\"" << ml + plot_w + 10 << "\" y1=\"" << ly << "\" x2=\"" << ml + plot_w + 30 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << ml + plot_w + 36 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(s.name) << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw data_error(path + ": write failed");
}

void emit_run_svg(const RunRecord& record, const std::string& path) {
  SvgSeries acc_p{"acc_P", {}, {}}, acc_s{"acc_S", {}, {}}, sparsity{"sparsity", {}, {}};
  for (const EpochRow& r : record.rows) {
    acc_p.x.push_back(r.epoch);
    acc_p.y.push_back(r.acc_p);
    acc_s.x.push_back(r.epoch);
    acc_s.y.push_back(r.acc_s);
    sparsity.x.push_back(r.epoch);
    sparsity.y.push_back(r.realized_sparsity);
  }
  emit_svg({acc_p, acc_s, sparsity}, path, "test accuracy per epoch", "epoch", "top-1 accuracy");
}

void emit_probe_svg(const RunRecord& record, const std::string& path) {
  SvgSeries acc{"acc_P", {}, {}}, refresh{"refresh", {}, {}};
  for (const ProbeRow& r : record.probe) {
    acc.x.push_back(static_cast<double>(r.iter));
    acc.y.push_back(r.acc);
    if (r.refreshed) {
      refresh.x.push_back(static_cast<double>(r.iter));
      refresh.y.push_back(r.acc);
    }
  }
  emit_svg({acc, refresh}, path, "per-iteration test accuracy", "iteration", "top-1 accuracy");
}

}  // namespace dcil
