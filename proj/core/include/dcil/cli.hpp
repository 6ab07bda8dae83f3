#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dcil {

/// Exit codes shared by every subcommand:
/// 0 ok, 2 configuration error, 3 I/O or data error, 4 numerical failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides);

int cmd_compare(const std::string& config_path, const std::vector<std::string>& trainers,
                const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& overrides);

int cmd_sawtooth(const std::string& config_path, int epoch, const std::string& checkpoint,
                 const std::vector<std::string>& overrides);

int cmd_export(const std::string& checkpoint_path, const std::string& out_path);

int cmd_synth(const std::string& out_dir, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
              double noise_stddev);

}  // namespace dcil
