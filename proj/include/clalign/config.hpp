#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "clalign/encoder.hpp"
#include "clalign/schedule.hpp"

namespace clalign {

/// Invalid configuration; `key()` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class Mode { kCoupledSim, kCoupledEncoder, kBounds, kVerify, kSweep };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& name);

/// Step-size multiplier (B / reference_batch)^k for k in {1, 1/2, 1/4, 0}.
enum class EtaScaling { kConstant, kQuarter, kSqrt, kLinear };

std::string to_string(EtaScaling scaling);
EtaScaling parse_eta_scaling(const std::string& name);
double scaling_exponent(EtaScaling scaling);

inline constexpr int kConfigSchema = 1;

struct ExperimentConfig {
  Mode mode = Mode::kCoupledSim;
  int num_classes = 10;
  int per_class = 50;
  int samples = 0;  // > 0 overrides per_class with samples / num_classes
  int dim = 16;
  double class_separation = 2.0;
  double noise_scale = 0.1;
  int batch_size = 128;
  double tau = 0.5;
  double delta = 0.1;
  ScheduleSpec schedule{ScheduleKind::kConstant, 0.1, 0, 100, {}};
  EtaScaling eta_scaling = EtaScaling::kConstant;
  int eta_reference_batch = 32;
  std::vector<Objective> objectives{Objective::kCL, Objective::kNSCL};
  int hidden_dim = 32;
  int output_dim = 16;
  int probe_size = 512;
  std::uint64_t seed = 0;
  int seeds = 1;
  int trials = 1000;

  Mode sweep_target = Mode::kCoupledSim;
  std::vector<int> sweep_num_classes;
  std::vector<int> sweep_batch_size;
  std::vector<double> sweep_tau;
  std::vector<EtaScaling> sweep_eta_scaling;

  std::optional<double> bound_beta;
  std::optional<double> bound_g;
  std::optional<double> bound_gram_norm;
  std::optional<double> bound_sigma_d;
  std::optional<double> bound_num_pairs;
  std::optional<double> bound_l_sigma;
  std::optional<double> bound_m_sigma;
  std::vector<double> bound_xi;

  int effective_per_class() const;
  /// Schedule with the step-size scaling applied to base_eta.
  ScheduleSpec scaled_schedule() const;
  /// Seed of run index s: the master seed for single-seed runs, else a derived child seed.
  std::uint64_t run_seed(int s) const;
  /// Range and consistency checks; throws ConfigError.
  void validate() const;
};

/// Parses `key = value` lines. `#` starts a comment, lists are comma-separated.
/// `schema` is required and must equal kConfigSchema; unknown and repeated keys
/// are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text form: every key in a fixed order, doubles in shortest
/// round-trip form. parse_config(serialize(c)) reproduces c.
std::string serialize(const ExperimentConfig& config);

/// Git blob hash (SHA-1 of "blob <len>\0" + content), lowercase hex.
std::string git_blob_hash(const std::string& content);
std::string config_hash(const ExperimentConfig& config);

}  // namespace clalign
