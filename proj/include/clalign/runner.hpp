#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clalign/config.hpp"
#include "json.hpp"

namespace clalign {

const char* version();

struct RunResult {
  std::string hash;
  std::vector<std::string> outputs;  // file names inside the output directory
  int exit_code = 0;
};

/// Executes a non-sweep config into `out`: traces, summary CSV, bound or verify
/// JSON, and manifest.json (written last). File names carry the first 12 hex
/// digits of the config hash.
///
/// coupled-sim summary:     seed,D_T,CKA_T,RSA_T,clip_events,composition_all
/// coupled-encoder summary: seed,objective,e_T,relative_weight_gap,CKA_T,RSA_T,loss
RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out,
                         int workers = 1);

struct SweepChild {
  ExperimentConfig config;
  std::string hash;
  /// (column, value) pairs in column order C, B, tau, eta_scaling (swept axes only).
  std::vector<std::pair<std::string, std::string>> axes;
  std::vector<double> sort_key;
};

/// Cartesian product of the axis lists times `seeds` child seeds. Child seed s
/// is derive_seed(master, kChild, s) for every axis point.
std::vector<SweepChild> expand_sweep(const ExperimentConfig& config);

struct SweepResult {
  std::string hash;
  std::filesystem::path aggregate;
  int computed = 0;
  int skipped = 0;
};

/// Runs each child into out/children/<hash>, skipping children whose manifest
/// records the same hash as complete, then writes sweep-<hash12>.csv with the
/// axis columns, the child seed and the child summary columns, sorted by
/// (axes, seed).
SweepResult sweep_grid(const ExperimentConfig& config, const std::filesystem::path& out,
                       int workers = 1);

/// Reads a headerless or headed CSV of floats into a matrix (non-numeric first
/// line is treated as a header).
Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path);

/// CKA, RSA, measured rho and r of two embedding matrices (rows = inputs).
nlohmann::json metric_report(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace clalign
