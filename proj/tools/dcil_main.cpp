#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcil/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dcil - dynamic pruning training engine (dense / static / dpf / dcil)"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string trainer_override, seed_override, epochs_override, out_override;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "config file (key = value sections)")->required();
    cmd->add_option("-s,--set", overrides, "override, e.g. --set train.epochs=5")->take_all();
    cmd->add_option("--trainer", trainer_override, "shortcut for --set train.trainer=...");
    cmd->add_option("--seed", seed_override, "shortcut for --set train.seed=...");
    cmd->add_option("--epochs", epochs_override, "shortcut for --set train.epochs=...");
    cmd->add_option("--out", out_override, "shortcut for --set output.dir=...");
  };
  auto collect_overrides = [&]() {
    std::vector<std::string> all = overrides;
    if (!trainer_override.empty()) all.push_back("train.trainer=" + trainer_override);
    if (!seed_override.empty()) all.push_back("train.seed=" + seed_override);
    if (!epochs_override.empty()) all.push_back("train.epochs=" + epochs_override);
    if (!out_override.empty()) all.push_back("output.dir=" + out_override);
    return all;
  };

  CLI::App* train = app.add_subcommand("train", "train one model and write run.csv + checkpoints");
  add_common(train);

  CLI::App* compare = app.add_subcommand("compare", "run several trainers on identical data/seeds");
  add_common(compare);
  std::vector<std::string> trainers{"dcil", "dpf"};
  std::vector<std::uint64_t> seeds;
  compare->add_option("--trainers", trainers, "trainers to compare (dense static dpf dcil)")->take_all();
  compare->add_option("--seeds", seeds, "seed sweep, e.g. --seeds 1 2 3")->take_all();

  CLI::App* sawtooth = app.add_subcommand("sawtooth", "per-iteration accuracy probe for one epoch");
  add_common(sawtooth);
  int probe_epoch = 0;
  std::string checkpoint;
  sawtooth->add_option("-e,--epoch", probe_epoch, "epoch to probe")->required();
  sawtooth->add_option("--checkpoint", checkpoint, "resume from this checkpoint first");

  CLI::App* exp = app.add_subcommand("export", "write a P-net-only deployable checkpoint + sparsity audit");
  std::string ckpt_in, ckpt_out;
  exp->add_option("checkpoint", ckpt_in, "input checkpoint")->required();
  exp->add_option("out", ckpt_out, "output checkpoint")->required();

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic IDX dataset (MNIST file format)");
  std::string synth_dir = "./data/synth";
  std::size_t n_train = 10000, n_test = 2000;
  std::uint64_t synth_seed = 7;
  double noise = 0.35;
  synth->add_option("--out", synth_dir, "output directory");
  synth->add_option("--train", n_train, "training sample count");
  synth->add_option("--test", n_test, "test sample count");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--noise", noise, "pixel noise standard deviation");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) return dcil::cmd_train(config_path, collect_overrides());
  if (compare->parsed()) return dcil::cmd_compare(config_path, trainers, seeds, collect_overrides());
  if (sawtooth->parsed()) return dcil::cmd_sawtooth(config_path, probe_epoch, checkpoint, collect_overrides());
  if (exp->parsed()) return dcil::cmd_export(ckpt_in, ckpt_out);
  if (synth->parsed()) return dcil::cmd_synth(synth_dir, n_train, n_test, synth_seed, noise);
  return 1;
}
