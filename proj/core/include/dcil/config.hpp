#pragma once

#include <map>
#include <string>
#include <vector>

#include "dcil/data.hpp"
#include "dcil/trainers.hpp"

namespace dcil {

struct DataOptions {
  std::string dataset = "mnist";  // mnist | cifar10
  std::string dir = "./data";
  std::size_t train_subset = 0;  // 0 = full split
  std::size_t probe_subset = 0;  // sawtooth probe subsample; 0 = full test split
  std::string augment = "default";
};

struct OutputOptions {
  std::string dir = "./runs/out";
  int checkpoint_every = 0;
  bool svg = true;
};

struct RunSetup {
  TrainConfig train;
  DataOptions data;
  OutputOptions output;
};

/// Plain-text key=value config with [section] headers. Unknown sections or
/// keys are rejected so typos never pass silently.
class ConfigFile {
public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

  /// Command-line override "section.key=value"; takes precedence over the file.
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  const std::map<std::string, std::string>& values() const { return values_; }

private:
  void set(const std::string& key, const std::string& value, const std::string& where);

  std::map<std::string, std::string> values_;  // "section.key" -> value
};

/// Validates every key and assembles the full run description. Throws
/// config_error on unknown keys, bad values or violated invariants.
RunSetup make_run_setup(const ConfigFile& cfg);

/// Resolves dataset geometry (input shape, classes, default augmentation)
/// into the train config. Must run before building the network.
void resolve_model_for_dataset(RunSetup& setup);

}  // namespace dcil
