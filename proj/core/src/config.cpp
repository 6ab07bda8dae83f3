#include "dcil/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace dcil {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "train.trainer",       "train.epochs",        "train.batch_size",   "train.seed",
      "train.precision",     "train.lambda",        "train.temperature",  "train.warmup_epochs",
      "train.eval_batch",    "train.instrument",    "optimizer.lr",       "optimizer.momentum",
      "optimizer.nesterov",  "optimizer.weight_decay", "optimizer.lr_decay",
      "sparsity.initial",    "sparsity.target",     "sparsity.start_epoch", "sparsity.ramp_epochs",
      "mask.frequency",      "mask.granularity",    "model.arch",
      "data.dataset",        "data.dir",            "data.train_subset",  "data.probe_subset",
      "data.augment",        "output.dir",          "output.checkpoint_every", "output.svg",
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw config_error(key + ": expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw config_error(key + ": expected an integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw config_error(key + ": expected a boolean, got '" + v + "'");
}

}  // namespace

void ConfigFile::set(const std::string& key, const std::string& value, const std::string& where) {
  if (!known_keys().count(key)) throw config_error(where + ": unknown config key '" + key + "'");
  values_[key] = value;
}

std::string ConfigFile::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw config_error(where + ": malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw config_error(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw config_error(where + ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw config_error(where + ": empty key");
    if (section.empty()) throw config_error(where + ": key '" + key + "' outside any [section]");
    cfg.set(section + "." + key, value, where);
  }
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error(path + ": cannot open config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

void ConfigFile::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw config_error("override '" + assignment + "': expected section.key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  if (key.find('.') == std::string::npos) {
    throw config_error("override '" + assignment + "': key must be section.key");
  }
  set(key, trim(assignment.substr(eq + 1)), "<override>");
}

RunSetup make_run_setup(const ConfigFile& cfg) {
  RunSetup setup;
  TrainConfig& t = setup.train;

  t.trainer = trainer_from_name(cfg.get("train.trainer", "dcil"));
  t.epochs = static_cast<int>(to_int("train.epochs", cfg.get("train.epochs", "20")));
  t.batch_size = static_cast<int>(to_int("train.batch_size", cfg.get("train.batch_size", "128")));
  t.seed = static_cast<std::uint64_t>(to_int("train.seed", cfg.get("train.seed", "1")));
  const std::string precision = cfg.get("train.precision", "f32");
  if (precision == "f32") {
    t.precision = Precision::F32;
  } else if (precision == "f64") {
    t.precision = Precision::F64;
  } else {
    throw config_error("train.precision: expected f32 or f64, got '" + precision + "'");
  }
  t.lambda = to_double("train.lambda", cfg.get("train.lambda", "1"));
  t.temperature = to_double("train.temperature", cfg.get("train.temperature", "2"));
  t.warmup_epochs = static_cast<int>(to_int("train.warmup_epochs", cfg.get("train.warmup_epochs", "0")));
  t.eval_batch = static_cast<int>(to_int("train.eval_batch", cfg.get("train.eval_batch", "512")));
  t.instrument = to_bool("train.instrument", cfg.get("train.instrument", "false"));

  t.optimizer.lr = to_double("optimizer.lr", cfg.get("optimizer.lr", "0.1"));
  t.optimizer.momentum = to_double("optimizer.momentum", cfg.get("optimizer.momentum", "0.9"));
  t.optimizer.nesterov = to_bool("optimizer.nesterov", cfg.get("optimizer.nesterov", "true"));
  t.optimizer.weight_decay = to_double("optimizer.weight_decay", cfg.get("optimizer.weight_decay", "1e-4"));
  t.lr.initial = t.optimizer.lr;
  const std::string decay = cfg.get("optimizer.lr_decay", "");
  if (!decay.empty()) {
    std::istringstream ds(decay);
    std::string item;
    while (std::getline(ds, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) {
        throw config_error("optimizer.lr_decay: expected epoch:divisor list, got '" + decay + "'");
      }
      LrStep step;
      step.epoch = static_cast<int>(to_int("optimizer.lr_decay", item.substr(0, colon)));
      step.divisor = to_double("optimizer.lr_decay", item.substr(colon + 1));
      t.lr.steps.push_back(step);
    }
  }

  t.schedule.initial = to_double("sparsity.initial", cfg.get("sparsity.initial", "0"));
  t.schedule.target = to_double("sparsity.target", cfg.get("sparsity.target", "0.9"));
  t.schedule.start_epoch = to_double("sparsity.start_epoch", cfg.get("sparsity.start_epoch", "0"));
  t.schedule.ramp_epochs = to_double("sparsity.ramp_epochs", cfg.get("sparsity.ramp_epochs", "15"));

  const std::string freq = cfg.get("mask.frequency", "16");
  if (freq == "none" || freq == "inf" || freq == "off") {
    t.policy.enabled = false;
  } else {
    t.policy.frequency = static_cast<int>(to_int("mask.frequency", freq));
    t.policy.enabled = true;
  }
  const std::string gran = cfg.get("mask.granularity", "weight");
  if (gran == "weight") {
    t.granularity = Granularity::Weight;
  } else if (gran == "filter") {
    t.granularity = Granularity::Filter;
  } else {
    throw config_error("mask.granularity: expected weight or filter, got '" + gran + "'");
  }

  t.arch = cfg.get("model.arch", "mnist_cnn");

  setup.data.dataset = cfg.get("data.dataset", "mnist");
  if (setup.data.dataset != "mnist" && setup.data.dataset != "cifar10") {
    throw config_error("data.dataset: expected mnist or cifar10, got '" + setup.data.dataset + "'");
  }
  setup.data.dir = cfg.get("data.dir", "./data");
  setup.data.train_subset = static_cast<std::size_t>(to_int("data.train_subset", cfg.get("data.train_subset", "0")));
  setup.data.probe_subset = static_cast<std::size_t>(to_int("data.probe_subset", cfg.get("data.probe_subset", "0")));
  setup.data.augment = cfg.get("data.augment", "default");
  if (setup.data.augment != "default" && setup.data.augment != "none" && setup.data.augment != "cifar") {
    throw config_error("data.augment: expected default, none or cifar, got '" + setup.data.augment + "'");
  }

  setup.output.dir = cfg.get("output.dir", "./runs/out");
  setup.output.checkpoint_every =
      static_cast<int>(to_int("output.checkpoint_every", cfg.get("output.checkpoint_every", "0")));
  setup.output.svg = to_bool("output.svg", cfg.get("output.svg", "true"));

  resolve_model_for_dataset(setup);
  setup.train.validate();
  return setup;
}

void resolve_model_for_dataset(RunSetup& setup) {
  TrainConfig& t = setup.train;
  std::string chain = t.arch;
  if (chain.find(',') == std::string::npos && chain.find(':') == std::string::npos) {
    chain = model_preset(chain);
  }
  t.model.layers = parse_layer_chain(chain);
  t.model.num_classes = 10;
  if (setup.data.dataset == "mnist") {
    t.model.input_shape = {1, 28, 28};
    if (setup.data.augment == "default") setup.data.augment = "none";
  } else {
    t.model.input_shape = {3, 32, 32};
    if (setup.data.augment == "default") setup.data.augment = "cifar";
  }
  t.augment = setup.data.augment == "cifar" ? AugmentPolicy::Cifar : AugmentPolicy::None;
}

}  // namespace dcil
