#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "clalign/config.hpp"
#include "clalign/runner.hpp"

using namespace clalign;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::string out = "out";
  int workers = 1;
};

void add_common(CLI::App* cmd, Flags& f, bool config_required) {
  auto* opt = cmd->add_option("--config", f.config, "key = value config file");
  if (config_required) opt->required();
  cmd->add_option("--seed", f.seed, "override the master seed");
  cmd->add_option("--out", f.out, "output directory")->capture_default_str();
  cmd->add_option("--workers", f.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--trials", f.trials, "trials per verification check")
      ->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Flags& f, std::optional<Mode> force) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (force) c.mode = *force;
  if (f.seed) c.seed = *f.seed;
  if (f.trials) c.trials = *f.trials;
  c.validate();
  return c;
}

int execute(const ExperimentConfig& c, const Flags& f) {
  if (c.mode == Mode::kSweep) {
    const auto r = sweep_grid(c, f.out, f.workers);
    std::cout << r.aggregate.string() << " (" << r.computed << " computed, " << r.skipped
              << " skipped)\n";
    return 0;
  }
  const auto r = run_experiment(c, f.out, f.workers);
  for (const auto& name : r.outputs) std::cout << (std::filesystem::path(f.out) / name).string() << '\n';
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled CL/NSCL training dynamics laboratory"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  Flags run_flags, sweep_flags, bounds_flags, verify_flags;
  auto* run = app.add_subcommand("run", "run the experiment described by a config");
  add_common(run, run_flags, true);
  auto* sweep = app.add_subcommand("sweep", "run a sweep config");
  add_common(sweep, sweep_flags, true);
  auto* bounds = app.add_subcommand("bounds", "evaluate the closed-form bounds");
  add_common(bounds, bounds_flags, true);
  auto* verify = app.add_subcommand("verify", "run the verification suite");
  add_common(verify, verify_flags, false);

  std::string embed_a, embed_b;
  auto* metrics = app.add_subcommand("metrics", "CKA/RSA report for two embedding CSV files");
  metrics->add_option("first", embed_a, "embeddings, one row per input")->required();
  metrics->add_option("second", embed_b, "embeddings, one row per input")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return execute(resolve(run_flags, std::nullopt), run_flags);
    if (*sweep) {
      const auto c = resolve(sweep_flags, std::nullopt);
      if (c.mode != Mode::kSweep) throw ConfigError("mode", "sweep requires mode = sweep");
      return execute(c, sweep_flags);
    }
    if (*bounds) return execute(resolve(bounds_flags, Mode::kBounds), bounds_flags);
    if (*verify) {
      const int status = execute(resolve(verify_flags, Mode::kVerify), verify_flags);
      std::cerr << (status == 0 ? "all checks passed\n" : "some checks failed\n");
      return status;
    }
    if (*metrics) {
      std::cout << metric_report(read_matrix_csv(embed_a), read_matrix_csv(embed_b)).dump(2)
                << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
