#include "dcil/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dcil/checkpoint.hpp"
#include "dcil/config.hpp"
#include "dcil/metrics.hpp"
#include "dcil/trainers.hpp"

namespace dcil {

namespace {

RunSetup load_setup(const std::string& config_path, const std::vector<std::string>& overrides) {
  ConfigFile cfg = ConfigFile::parse_file(config_path);
  for (const std::string& o : overrides) cfg.apply_override(o);
  return make_run_setup(cfg);
}

template <class S>
struct LoadedData {
  Dataset<S> train, test;
};

template <class S>
LoadedData<S> load_data(const RunSetup& setup) {
  LoadedData<S> d;
  if (setup.data.dataset == "mnist") {
    d.train = load_mnist<S>(setup.data.dir, Split::Train);
    d.test = load_mnist<S>(setup.data.dir, Split::Test);
  } else {
    d.train = load_cifar10<S>(setup.data.dir, Split::Train);
    d.test = load_cifar10<S>(setup.data.dir, Split::Test);
  }
  if (setup.data.train_subset > 0 && setup.data.train_subset < d.train.size()) {
    d.train = subset(d.train, setup.data.train_subset, setup.train.seed);
  }
  return d;
}

std::vector<std::pair<std::string, std::string>> data_echo(const RunSetup& setup) {
  return {{"data.dataset", setup.data.dataset},
          {"data.dir", setup.data.dir},
          {"data.train_subset", std::to_string(setup.data.train_subset)},
          {"data.probe_subset", std::to_string(setup.data.probe_subset)},
          {"output.dir", setup.output.dir}};
}

template <class S>
RunRecord run_fit(const RunSetup& setup, const std::string& out_dir, int probe_epoch,
                  const std::string& init_checkpoint) {
  LoadedData<S> data = load_data<S>(setup);
  FitOptions<S> opts;
  opts.out_dir = out_dir;
  opts.checkpoint_every = setup.output.checkpoint_every;
  opts.svg = setup.output.svg;
  opts.probe_epoch = probe_epoch;
  opts.init_checkpoint = init_checkpoint;
  opts.extra_echo = data_echo(setup);
  Dataset<S> probe;
  if (probe_epoch >= 0 && setup.data.probe_subset > 0 && setup.data.probe_subset < data.test.size()) {
    probe = subset(data.test, setup.data.probe_subset, setup.train.seed);
    opts.probe_set = &probe;
  }
  return fit(setup.train, data.train, data.test, opts);
}

RunRecord run_dispatch(const RunSetup& setup, const std::string& out_dir, int probe_epoch = -1,
                       const std::string& init_checkpoint = "") {
  if (setup.train.precision == Precision::F64) {
    return run_fit<double>(setup, out_dir, probe_epoch, init_checkpoint);
  }
  return run_fit<float>(setup, out_dir, probe_epoch, init_checkpoint);
}

int report_error(const std::exception& e) {
  if (dynamic_cast<const config_error*>(&e)) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (dynamic_cast<const data_error*>(&e)) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  if (dynamic_cast<const numeric_error*>(&e)) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  std::cerr << "error: " << e.what() << '\n';
  return 1;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  try {
    const RunSetup setup = load_setup(config_path, overrides);
    const RunRecord record = run_dispatch(setup, setup.output.dir);
    if (!record.rows.empty()) {
      const EpochRow& last = record.rows.back();
      std::printf("done: %d epoch(s), acc_P=%.4f acc_S=%.4f sparsity=%.4f -> %s\n", setup.train.epochs, last.acc_p,
                  last.acc_s, last.realized_sparsity, setup.output.dir.c_str());
    }
    return kExitOk;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

int cmd_compare(const std::string& config_path, const std::vector<std::string>& trainers,
                const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& overrides) {
  try {
    if (trainers.empty()) throw config_error("compare: need at least one trainer");
    const std::vector<std::uint64_t> seed_list = seeds.empty() ? std::vector<std::uint64_t>{1} : seeds;

    const RunSetup base = load_setup(config_path, overrides);
    std::filesystem::create_directories(base.output.dir);

    struct Cell {
      std::string trainer;
      std::vector<double> last, best, stab;
    };
    std::vector<Cell> cells;
    for (const std::string& name : trainers) {
      Cell cell;
      cell.trainer = name;
      for (std::uint64_t seed : seed_list) {
        RunSetup setup = base;
        setup.train.trainer = trainer_from_name(name);
        setup.train.seed = seed;
        const std::string run_dir = base.output.dir + "/" + name + "_seed" + std::to_string(seed);
        const RunRecord record = run_dispatch(setup, run_dir);
        const StabilityReport rep = stability_report(record);
        cell.last.push_back(rep.last_acc);
        cell.best.push_back(rep.best_acc);
        cell.stab.push_back(rep.std_dev);
        std::printf("%-8s seed=%llu last=%.4f best=%.4f stability_std=%.5f\n", name.c_str(),
                    static_cast<unsigned long long>(seed), rep.last_acc, rep.best_acc, rep.std_dev);
      }
      cells.push_back(std::move(cell));
    }

    const std::string csv_path = base.output.dir + "/compare.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    csv << "trainer,seeds,last_mean,last_std,best_mean,best_std,stability_mean,stability_std\r\n";
    std::ostringstream text;
    char line[256];
    std::snprintf(line, sizeof(line), "%-8s %7s %19s %19s %21s\n", "trainer", "seeds", "last", "best",
                  "stability_std");
    text << line;
    for (const Cell& c : cells) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", mean_of(c.last));
      csv << c.trainer << ',' << seed_list.size() << ',' << buf << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", std_of(c.last));
      csv << buf << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", mean_of(c.best));
      csv << buf << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", std_of(c.best));
      csv << buf << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", mean_of(c.stab));
      csv << buf << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", std_of(c.stab));
      csv << buf << "\r\n";
      std::snprintf(line, sizeof(line), "%-8s %7zu %9.4f +-%6.4f %9.4f +-%6.4f %11.5f +-%7.5f\n", c.trainer.c_str(),
                    seed_list.size(), mean_of(c.last), std_of(c.last), mean_of(c.best), std_of(c.best),
                    mean_of(c.stab), std_of(c.stab));
      text << line;
    }
    std::ofstream txt(base.output.dir + "/compare.txt", std::ios::trunc);
    txt << text.str();
    std::fputs(text.str().c_str(), stdout);
    return kExitOk;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

int cmd_sawtooth(const std::string& config_path, int epoch, const std::string& checkpoint,
                 const std::vector<std::string>& overrides) {
  try {
    const RunSetup setup = load_setup(config_path, overrides);
    if (epoch < 0 || epoch >= setup.train.epochs) {
      throw config_error("sawtooth: epoch " + std::to_string(epoch) + " outside [0, " +
                         std::to_string(setup.train.epochs) + ")");
    }
    if (!checkpoint.empty() && !std::filesystem::exists(checkpoint)) {
      throw data_error(checkpoint + ": checkpoint not found");
    }
    const RunRecord record = run_dispatch(setup, setup.output.dir, epoch, checkpoint);
    double drops = 0.0;
    int refreshes = 0;
    for (std::size_t i = 1; i < record.probe.size(); ++i) {
      if (record.probe[i].refreshed) {
        drops += record.probe[i - 1].acc - record.probe[i].acc;
        ++refreshes;
      }
    }
    std::printf("sawtooth: %zu probe points, %d refreshes, mean post-refresh drop %.5f -> %s\n",
                record.probe.size(), refreshes, refreshes ? drops / refreshes : 0.0, setup.output.dir.c_str());
    return kExitOk;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

int cmd_export(const std::string& checkpoint_path, const std::string& out_path) {
  try {
    const ckpt::File in = ckpt::read_file(checkpoint_path);
    const ckpt::File out = ckpt::export_pnet(in);
    ckpt::write_file(out_path, out);

    SparsityAudit audit;
    for (const ckpt::Entry& e : out.entries) {
      if (e.kind != ckpt::kMaskBits) continue;
      SparsityAuditRow row;
      row.id = e.key.substr(0, e.key.size() - 5);  // strip ".mask"
      row.numel = e.numel();
      const std::vector<std::uint8_t> bits = ckpt::unpack_bits(e.bits, row.numel);
      for (std::uint8_t b : bits) row.zeros += b ? 0 : 1;
      row.sparsity = row.numel ? static_cast<double>(row.zeros) / static_cast<double>(row.numel) : 0.0;
      if (e.dims.size() == 4) {
        row.filters = e.dims[0];
        const std::size_t slab = row.numel / row.filters;
        for (std::size_t f = 0; f < row.filters; ++f) {
          bool all_zero = true;
          for (std::size_t i = 0; i < slab && all_zero; ++i) all_zero = bits[f * slab + i] == 0;
          if (all_zero) ++row.filters_zero;
        }
      }
      audit.total += row.numel;
      audit.total_zeros += row.zeros;
      audit.layers.push_back(std::move(row));
    }
    audit.global = audit.total ? static_cast<double>(audit.total_zeros) / static_cast<double>(audit.total) : 0.0;
    emit_audit_csv(audit, out_path + ".audit.csv");
    std::printf("exported P-net: %zu entries, global sparsity %.4f -> %s\n", out.entries.size(), audit.global,
                out_path.c_str());
    return kExitOk;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

int cmd_synth(const std::string& out_dir, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
              double noise_stddev) {
  try {
    make_synthetic_mnist(out_dir, n_train, n_test, seed, noise_stddev);
    std::printf("wrote synthetic IDX dataset (%zu train / %zu test) -> %s\n", n_train, n_test, out_dir.c_str());
    return kExitOk;
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

}  // namespace dcil
