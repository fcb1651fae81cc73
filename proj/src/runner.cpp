#include "clalign/runner.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "clalign/bounds.hpp"
#include "clalign/coupled_sim.hpp"
#include "clalign/datagen.hpp"
#include "clalign/encoder.hpp"
#include "clalign/format.hpp"
#include "clalign/metrics.hpp"
#include "clalign/parallel.hpp"
#include "clalign/rng.hpp"
#include "clalign/verify.hpp"

#ifndef CLALIGN_VERSION
#define CLALIGN_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace clalign {

const char* version() { return CLALIGN_VERSION; }

namespace {

std::string short_hash(const std::string& hash) { return hash.substr(0, 12); }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_manifest(const fs::path& out, const ExperimentConfig& config, const std::string& hash,
                    const std::vector<std::string>& outputs, nlohmann::json extra = {}) {
  nlohmann::json j;
  j["config_hash"] = hash;
  j["config"] = serialize(config);
  j["mode"] = to_string(config.mode);
  j["version"] = version();
  j["created"] = utc_timestamp();
  j["outputs"] = outputs;
  if (!extra.is_null()) j["details"] = std::move(extra);
  j["complete"] = true;
  write_text(out / "manifest.json", j.dump(2) + "\n");
}

std::string nan_safe(double v) { return fmt_double(v); }

double rsa_or_nan(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  try {
    return metrics::rsa_gram(a, b);
  } catch (const metrics::RsaUndefined&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

double cka_or_nan(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  try {
    return metrics::linear_cka_gram(a, b);
  } catch (const metrics::CkaUndefined&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

std::string trace_name(const std::string& tag, int s, int seeds) {
  return seeds == 1 ? "trace-" + tag + ".csv" : "trace-" + tag + "-s" + std::to_string(s) + ".csv";
}

Dataset dataset_for(const ExperimentConfig& c, std::uint64_t seed) {
  return make_dataset(c.num_classes, c.effective_per_class(), c.dim, c.class_separation, seed);
}

// One run per seed; returns the summary rows (without header) per seed.
std::vector<std::string> run_sim(const ExperimentConfig& c, const fs::path& out,
                                 const std::string& tag, int workers,
                                 std::vector<std::string>& outputs) {
  const auto rows = parallel_map<std::string>(c.seeds, workers, [&](std::size_t s) {
    const std::uint64_t seed = c.run_seed(static_cast<int>(s));
    const Dataset data = dataset_for(c, seed);
    CoupledSimConfig sc;
    sc.batch_size = c.batch_size;
    sc.schedule = c.scaled_schedule();
    sc.tau = c.tau;
    sc.master_seed = seed;
    sc.delta = c.delta;
    const auto trace = run_coupled(data, {c.noise_scale, seed}, sc);
    write_trace_csv(trace, out / trace_name(tag, static_cast<int>(s), c.seeds));
    const auto& a = trace.final_cl.entries;
    const auto& b = trace.final_nscl.entries;
    std::ostringstream row;
    row << seed << ',' << fmt_double(trace.terminal_drift()) << ','
        << nan_safe(cka_or_nan(a, b)) << ',' << nan_safe(rsa_or_nan(a, b)) << ','
        << trace.total_clip_events() << ',' << (trace.composition_all ? 1 : 0) << '\n';
    return row.str();
  });
  for (int s = 0; s < c.seeds; ++s) outputs.push_back(trace_name(tag, s, c.seeds));
  return rows;
}

std::vector<std::string> run_encoder(const ExperimentConfig& c, const fs::path& out,
                                     const std::string& tag, int workers,
                                     std::vector<std::string>& outputs) {
  const auto rows = parallel_map<std::string>(c.seeds, workers, [&](std::size_t s) {
    const std::uint64_t seed = c.run_seed(static_cast<int>(s));
    const Dataset data = dataset_for(c, seed);
    const auto probe = make_probe_set(data, c.probe_size, c.class_separation, seed);
    CoupledEncoderConfig ec;
    ec.objectives = c.objectives;
    ec.batch_size = c.batch_size;
    ec.schedule = c.scaled_schedule();
    ec.tau = c.tau;
    ec.master_seed = seed;
    ec.hidden_dim = c.hidden_dim;
    ec.output_dim = c.output_dim;
    const auto trace = run_coupled_encoders(data, {c.noise_scale, seed}, probe.points, ec);
    std::ofstream csv(out / trace_name(tag, static_cast<int>(s), c.seeds), std::ios::binary);
    write_encoder_trace_csv(trace, csv);
    std::ostringstream row;
    for (std::size_t k = 1; k < c.objectives.size(); ++k) {
      const auto last = trace.series(c.objectives[k]).back();
      row << seed << ',' << to_string(c.objectives[k]) << ',' << fmt_double(last.e_t) << ','
          << fmt_double(last.relative_gap) << ',' << fmt_double(last.cka) << ','
          << fmt_double(last.rsa) << ',' << fmt_double(last.loss) << '\n';
    }
    return row.str();
  });
  for (int s = 0; s < c.seeds; ++s) outputs.push_back(trace_name(tag, s, c.seeds));
  return rows;
}

bounds::BoundInputs bound_inputs(const ExperimentConfig& c) {
  bounds::BoundInputs in;
  in.num_classes = c.num_classes;
  in.batch_size = c.batch_size;
  in.horizon = c.schedule.total_steps;
  in.delta = c.delta;
  in.tau = c.tau;
  in.schedule = c.scaled_schedule();
  in.beta = c.bound_beta;
  in.g = c.bound_g;
  in.gram_norm = c.bound_gram_norm;
  in.sigma_d = c.bound_sigma_d;
  in.num_pairs = c.bound_num_pairs;
  in.l_sigma = c.bound_l_sigma;
  in.m_sigma = c.bound_m_sigma;
  in.xi = c.bound_xi;
  return in;
}

const char* summary_header(Mode mode) {
  return mode == Mode::kCoupledSim ? "seed,D_T,CKA_T,RSA_T,clip_events,composition_all"
                                   : "seed,objective,e_T,relative_weight_gap,CKA_T,RSA_T,loss";
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const fs::path& out, int workers) {
  config.validate();
  if (config.mode == Mode::kSweep) {
    throw std::invalid_argument("run_experiment: use sweep_grid for sweep configs");
  }
  fs::create_directories(out);
  RunResult result;
  result.hash = config_hash(config);
  const std::string tag = short_hash(result.hash);

  switch (config.mode) {
    case Mode::kCoupledSim:
    case Mode::kCoupledEncoder: {
      const auto rows = config.mode == Mode::kCoupledSim
                            ? run_sim(config, out, tag, workers, result.outputs)
                            : run_encoder(config, out, tag, workers, result.outputs);
      std::string text = std::string(summary_header(config.mode)) + "\n";
      for (const auto& r : rows) text += r;
      const std::string name = "summary-" + tag + ".csv";
      write_text(out / name, text);
      result.outputs.push_back(name);
      break;
    }
    case Mode::kBounds: {
      const auto report = bounds::evaluate(bound_inputs(config));
      nlohmann::json j = bounds::to_json(report);
      j["config_hash"] = result.hash;
      const std::string name = "bounds-" + tag + ".json";
      write_text(out / name, j.dump(2) + "\n");
      result.outputs.push_back(name);
      break;
    }
    case Mode::kVerify: {
      verify::Options options;
      options.trials = config.trials;
      options.seed = config.seed;
      options.workers = workers;
      nlohmann::json j;
      j["config_hash"] = result.hash;
      j["checks"] = nlohmann::json::array();
      bool all = true;
      for (const auto& report : verify::run_all(options)) {
        j["checks"].push_back(verify::to_json(report));
        all = all && report.passed;
      }
      j["passed"] = all;
      const std::string name = "verify-" + tag + ".json";
      write_text(out / name, j.dump(2) + "\n");
      result.outputs.push_back(name);
      result.exit_code = all ? 0 : 1;
      break;
    }
    case Mode::kSweep:
      break;
  }
  write_manifest(out, config, result.hash, result.outputs);
  return result;
}

std::vector<SweepChild> expand_sweep(const ExperimentConfig& config) {
  if (config.mode != Mode::kSweep) throw std::invalid_argument("expand_sweep: mode must be sweep");
  config.validate();
  ExperimentConfig base = config;
  base.mode = config.sweep_target;
  base.sweep_num_classes.clear();
  base.sweep_batch_size.clear();
  base.sweep_tau.clear();
  base.sweep_eta_scaling.clear();
  base.seeds = 1;

  std::vector<SweepChild> points{SweepChild{base, "", {}, {}}};
  auto expand = [&](const char* column, std::size_t count, auto&& apply) {
    if (count == 0) return;
    std::vector<SweepChild> next;
    for (const auto& p : points) {
      for (std::size_t i = 0; i < count; ++i) {
        SweepChild child = p;
        auto [text, key] = apply(child.config, i);
        child.axes.emplace_back(column, text);
        child.sort_key.push_back(key);
        next.push_back(std::move(child));
      }
    }
    points = std::move(next);
  };
  expand("C", config.sweep_num_classes.size(), [&](ExperimentConfig& c, std::size_t i) {
    c.num_classes = config.sweep_num_classes[i];
    return std::pair{std::to_string(c.num_classes), static_cast<double>(c.num_classes)};
  });
  expand("B", config.sweep_batch_size.size(), [&](ExperimentConfig& c, std::size_t i) {
    c.batch_size = config.sweep_batch_size[i];
    return std::pair{std::to_string(c.batch_size), static_cast<double>(c.batch_size)};
  });
  expand("tau", config.sweep_tau.size(), [&](ExperimentConfig& c, std::size_t i) {
    c.tau = config.sweep_tau[i];
    return std::pair{fmt_double(c.tau), c.tau};
  });
  expand("eta_scaling", config.sweep_eta_scaling.size(), [&](ExperimentConfig& c, std::size_t i) {
    c.eta_scaling = config.sweep_eta_scaling[i];
    return std::pair{to_string(c.eta_scaling), scaling_exponent(c.eta_scaling)};
  });

  std::vector<SweepChild> children;
  for (const auto& p : points) {
    for (int s = 0; s < config.seeds; ++s) {
      SweepChild child = p;
      child.config.seed = derive_seed(config.seed, Stream::kChild, s);
      child.config.validate();
      child.hash = config_hash(child.config);
      children.push_back(std::move(child));
    }
  }
  return children;
}

namespace {

bool child_complete(const fs::path& dir, const std::string& hash) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) return false;
  try {
    const auto j = nlohmann::json::parse(read_text(manifest));
    if (j.value("config_hash", "") != hash || !j.value("complete", false)) return false;
    for (const auto& name : j.at("outputs")) {
      if (!fs::exists(dir / name.get<std::string>())) return false;
    }
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

SweepResult sweep_grid(const ExperimentConfig& config, const fs::path& out, int workers) {
  const auto children = expand_sweep(config);
  SweepResult result;
  result.hash = config_hash(config);
  fs::create_directories(out / "children");

  const auto skipped = parallel_map<int>(children.size(), workers, [&](std::size_t i) {
    const auto& child = children[i];
    const fs::path dir = out / "children" / child.hash;
    if (child_complete(dir, child.hash)) return 1;
    fs::remove_all(dir);
    run_experiment(child.config, dir, 1);
    return 0;
  });
  for (int s : skipped) (s ? result.skipped : result.computed) += 1;

  struct Row {
    std::vector<double> key;
    std::uint64_t seed;
    std::string text;
  };
  std::vector<Row> rows;
  std::string header;
  for (const auto& child : children) {
    const fs::path summary =
        out / "children" / child.hash / ("summary-" + short_hash(child.hash) + ".csv");
    std::istringstream in(read_text(summary));
    std::string line;
    std::getline(in, line);
    if (header.empty()) {
      for (const auto& [column, value] : child.axes) header += column + ",";
      header += line;
    }
    std::string prefix;
    for (const auto& [column, value] : child.axes) prefix += value + ",";
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      rows.push_back({child.sort_key, child.config.seed, prefix + line});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.key, a.seed) < std::tie(b.key, b.seed);
  });
  std::string text = header + "\n";
  for (const auto& r : rows) text += r.text + "\n";
  const std::string name = "sweep-" + short_hash(result.hash) + ".csv";
  result.aggregate = out / name;
  write_text(result.aggregate, text);

  nlohmann::json details;
  details["computed"] = result.computed;
  details["skipped"] = result.skipped;
  details["children"] = nlohmann::json::array();
  for (const auto& child : children) details["children"].push_back(child.hash);
  write_manifest(out, config, result.hash, {name}, details);
  return result;
}

Eigen::MatrixXd read_matrix_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (used != cell.size() && cell.find_first_not_of(" \t", used) != std::string::npos) {
          numeric = false;
        }
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw std::runtime_error(path.string() + ": non-numeric row");
    }
    first = false;
    if (!rows.empty() && values.size() != rows.front().size()) {
      throw std::runtime_error(path.string() + ": ragged rows");
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw std::runtime_error(path.string() + ": no data");
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

nlohmann::json metric_report(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("embedding files differ in row count");
  const Eigen::MatrixXd ga = metrics::cosine_gram(a);
  const Eigen::MatrixXd gb = metrics::cosine_gram(b);
  nlohmann::json j;
  j["n"] = a.rows();
  j["gram_drift"] = metrics::frob_drift(ga, gb);
  auto put = [&](const char* key, auto&& fn) {
    try {
      j[key] = fn();
    } catch (const std::exception& e) {
      j[key] = nullptr;
      j[std::string(key) + "_error"] = e.what();
    }
  };
  put("cka", [&] { return metrics::linear_cka_gram(ga, gb); });
  put("rsa", [&] { return metrics::rsa_gram(ga, gb); });
  put("rho", [&] { return metrics::measured_rho(ga, gb); });
  put("r", [&] { return metrics::measured_r(ga, gb); });
  return j;
}

}  // namespace clalign
