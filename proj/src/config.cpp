#include "clalign/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "clalign/format.hpp"
#include "clalign/rng.hpp"

namespace clalign {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kCoupledSim:
      return "coupled-sim";
    case Mode::kCoupledEncoder:
      return "coupled-encoder";
    case Mode::kBounds:
      return "bounds";
    case Mode::kVerify:
      return "verify";
    case Mode::kSweep:
      return "sweep";
  }
  return "coupled-sim";
}

Mode parse_mode(const std::string& name) {
  for (auto m : {Mode::kCoupledSim, Mode::kCoupledEncoder, Mode::kBounds, Mode::kVerify,
                 Mode::kSweep}) {
    if (name == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown mode '" + name + "'");
}

std::string to_string(EtaScaling scaling) {
  switch (scaling) {
    case EtaScaling::kConstant:
      return "constant";
    case EtaScaling::kQuarter:
      return "quarter";
    case EtaScaling::kSqrt:
      return "sqrt";
    case EtaScaling::kLinear:
      return "linear";
  }
  return "constant";
}

EtaScaling parse_eta_scaling(const std::string& name) {
  for (auto s : {EtaScaling::kConstant, EtaScaling::kQuarter, EtaScaling::kSqrt,
                 EtaScaling::kLinear}) {
    if (name == to_string(s)) return s;
  }
  throw std::invalid_argument("unknown eta scaling '" + name + "'");
}

double scaling_exponent(EtaScaling scaling) {
  switch (scaling) {
    case EtaScaling::kConstant:
      return 0.0;
    case EtaScaling::kQuarter:
      return 0.25;
    case EtaScaling::kSqrt:
      return 0.5;
    case EtaScaling::kLinear:
      return 1.0;
  }
  return 0.0;
}

int ExperimentConfig::effective_per_class() const {
  return samples > 0 ? samples / num_classes : per_class;
}

ScheduleSpec ExperimentConfig::scaled_schedule() const {
  ScheduleSpec s = schedule;
  const double factor = std::pow(static_cast<double>(batch_size) / eta_reference_batch,
                                 scaling_exponent(eta_scaling));
  s.base_eta *= factor;
  for (double& v : s.custom) v *= factor;
  return s;
}

std::uint64_t ExperimentConfig::run_seed(int s) const {
  return seeds == 1 ? seed : derive_seed(seed, Stream::kChild, s);
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (!value.empty() && value.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError(key, "cannot parse '" + text + "'");
  }
  return value;
}

template <typename T>
std::vector<T> parse_numbers(const std::string& key, const std::string& value) {
  std::vector<T> out;
  for (const auto& item : split_list(value)) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename Fn>
auto wrap(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
}

template <typename T>
std::string join(const std::vector<T>& values, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += f(values[i]);
  }
  return out;
}

std::string fmt_int(long long v) { return std::to_string(v); }

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string&)>;
using Getter = std::function<std::optional<std::string>(const ExperimentConfig&)>;

struct Field {
  std::string key;
  Setter set;
  Getter get;
};

Field int_field(const std::string& key, int ExperimentConfig::*member) {
  return {key,
          [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_number<int>(k, v);
          },
          [member](const ExperimentConfig& c) -> std::optional<std::string> {
            return fmt_int(c.*member);
          }};
}

Field double_field(const std::string& key, double ExperimentConfig::*member) {
  return {key,
          [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_number<double>(k, v);
          },
          [member](const ExperimentConfig& c) -> std::optional<std::string> {
            return fmt_double(c.*member);
          }};
}

Field optional_field(const std::string& key, std::optional<double> ExperimentConfig::*member) {
  return {key,
          [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_number<double>(k, v);
          },
          [member](const ExperimentConfig& c) -> std::optional<std::string> {
            if (!(c.*member)) return std::nullopt;
            return fmt_double(*(c.*member));
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"mode",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.mode = wrap(k, [&] { return parse_mode(v); });
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   return to_string(c.mode);
                 }});
    f.push_back(int_field("num_classes", &ExperimentConfig::num_classes));
    f.push_back(int_field("per_class", &ExperimentConfig::per_class));
    f.push_back(int_field("samples", &ExperimentConfig::samples));
    f.push_back(int_field("dim", &ExperimentConfig::dim));
    f.push_back(double_field("class_separation", &ExperimentConfig::class_separation));
    f.push_back(double_field("noise_scale", &ExperimentConfig::noise_scale));
    f.push_back(int_field("batch_size", &ExperimentConfig::batch_size));
    f.push_back(double_field("tau", &ExperimentConfig::tau));
    f.push_back(double_field("delta", &ExperimentConfig::delta));
    f.push_back({"schedule",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.schedule.kind = wrap(k, [&] { return parse_schedule_kind(v); });
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   return to_string(c.schedule.kind);
                 }});
    f.push_back({"eta",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.schedule.base_eta = parse_number<double>(k, v);
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   return fmt_double(c.schedule.base_eta);
                 }});
    f.push_back({"warmup",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.schedule.warmup_steps = parse_number<int>(k, v);
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   return fmt_int(c.schedule.warmup_steps);
                 }});
    f.push_back({"steps",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.schedule.total_steps = parse_number<int>(k, v);
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   return fmt_int(c.schedule.total_steps);
                 }});
    f.push_back({"custom_etas",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.schedule.custom = parse_numbers<double>(k, v);
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (c.schedule.custom.empty()) return std::nullopt;
                   return join<double>(c.schedule.custom, fmt_double);
                 }});
    f.push_back({"eta_scaling",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.eta_scaling = wrap(k, [&] { return parse_eta_scaling(v); });
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   return to_string(c.eta_scaling);
                 }});
    f.push_back(int_field("eta_reference_batch", &ExperimentConfig::eta_reference_batch));
    f.push_back({"objectives",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.objectives.clear();
                   for (const auto& item : split_list(v)) {
                     c.objectives.push_back(wrap(k, [&] { return parse_objective(item); }));
                   }
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   return join<Objective>(c.objectives,
                                          [](const Objective& o) { return to_string(o); });
                 }});
    f.push_back(int_field("hidden_dim", &ExperimentConfig::hidden_dim));
    f.push_back(int_field("output_dim", &ExperimentConfig::output_dim));
    f.push_back(int_field("probe_size", &ExperimentConfig::probe_size));
    f.push_back({"seed",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.seed = parse_number<std::uint64_t>(k, v);
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   return std::to_string(c.seed);
                 }});
    f.push_back(int_field("seeds", &ExperimentConfig::seeds));
    f.push_back(int_field("trials", &ExperimentConfig::trials));
    f.push_back({"sweep.target",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.sweep_target = wrap(k, [&] { return parse_mode(v); });
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (c.mode != Mode::kSweep) return std::nullopt;
                   return to_string(c.sweep_target);
                 }});
    f.push_back({"sweep.num_classes",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.sweep_num_classes = parse_numbers<int>(k, v);
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (c.sweep_num_classes.empty()) return std::nullopt;
                   return join<int>(c.sweep_num_classes, [](const int& x) { return fmt_int(x); });
                 }});
    f.push_back({"sweep.batch_size",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.sweep_batch_size = parse_numbers<int>(k, v);
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (c.sweep_batch_size.empty()) return std::nullopt;
                   return join<int>(c.sweep_batch_size, [](const int& x) { return fmt_int(x); });
                 }});
    f.push_back({"sweep.tau",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.sweep_tau = parse_numbers<double>(k, v);
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (c.sweep_tau.empty()) return std::nullopt;
                   return join<double>(c.sweep_tau, fmt_double);
                 }});
    f.push_back({"sweep.eta_scaling",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.sweep_eta_scaling.clear();
                   for (const auto& item : split_list(v)) {
                     c.sweep_eta_scaling.push_back(wrap(k, [&] { return parse_eta_scaling(item); }));
                   }
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (c.sweep_eta_scaling.empty()) return std::nullopt;
                   return join<EtaScaling>(c.sweep_eta_scaling,
                                           [](const EtaScaling& s) { return to_string(s); });
                 }});
    f.push_back(optional_field("bound.beta", &ExperimentConfig::bound_beta));
    f.push_back(optional_field("bound.g", &ExperimentConfig::bound_g));
    f.push_back(optional_field("bound.gram_norm", &ExperimentConfig::bound_gram_norm));
    f.push_back(optional_field("bound.sigma_d", &ExperimentConfig::bound_sigma_d));
    f.push_back(optional_field("bound.num_pairs", &ExperimentConfig::bound_num_pairs));
    f.push_back(optional_field("bound.l_sigma", &ExperimentConfig::bound_l_sigma));
    f.push_back(optional_field("bound.m_sigma", &ExperimentConfig::bound_m_sigma));
    f.push_back({"bound.xi",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.bound_xi = parse_numbers<double>(k, v);
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (c.bound_xi.empty()) return std::nullopt;
                   return join<double>(c.bound_xi, fmt_double);
                 }});
    return f;
  }();
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* key, const char* message) {
    if (!ok) throw ConfigError(key, message);
  };
  require(num_classes >= 1, "num_classes", "must be >= 1");
  require(per_class >= 1, "per_class", "must be >= 1");
  require(samples >= 0, "samples", "must be >= 0");
  require(samples == 0 || samples >= num_classes, "samples", "must be >= num_classes");
  require(dim >= 1, "dim", "must be >= 1");
  require(class_separation > 0.0, "class_separation", "must be positive");
  require(noise_scale >= 0.0, "noise_scale", "must be >= 0");
  require(batch_size >= 2, "batch_size", "must be >= 2");
  require(tau > 0.0 && std::isfinite(tau), "tau", "must be positive");
  require(delta > 0.0 && delta < 1.0, "delta", "must be in (0, 1)");
  require(eta_reference_batch >= 1, "eta_reference_batch", "must be >= 1");
  require(!objectives.empty() && objectives.front() == Objective::kCL, "objectives",
          "must start with CL");
  require(hidden_dim >= 1, "hidden_dim", "must be >= 1");
  require(output_dim >= 1, "output_dim", "must be >= 1");
  require(probe_size >= 2, "probe_size", "must be >= 2");
  require(seeds >= 1, "seeds", "must be >= 1");
  require(trials >= 1, "trials", "must be >= 1");
  try {
    schedule.validate();
  } catch (const std::exception& e) {
    throw ConfigError("steps", e.what());
  }
  if (mode == Mode::kSweep) {
    require(sweep_target == Mode::kCoupledSim || sweep_target == Mode::kCoupledEncoder,
            "sweep.target", "must be coupled-sim or coupled-encoder");
    require(!(sweep_num_classes.empty() && sweep_batch_size.empty() && sweep_tau.empty() &&
              sweep_eta_scaling.empty()),
            "sweep", "at least one axis is required");
  }
}

ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;

  ExperimentConfig config;
  std::set<std::string> seen;
  bool schema_seen = false;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(key, "repeated key");
    if (key == "schema") {
      if (parse_number<int>(key, value) != kConfigSchema) {
        throw ConfigError(key, "unsupported schema version '" + value + "'");
      }
      schema_seen = true;
      continue;
    }
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(key, "unknown key");
    it->second->set(config, key, value);
  }
  if (!schema_seen) throw ConfigError("schema", "missing schema version");
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string serialize(const ExperimentConfig& config) {
  std::string out = "schema = " + std::to_string(kConfigSchema) + "\n";
  for (const auto& f : fields()) {
    if (auto v = f.get(config)) out += f.key + " = " + *v + "\n";
  }
  return out;
}

std::string git_blob_hash(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + '\0' + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &length, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    const unsigned char b = digest[i];
    out += hex[b >> 4];
    out += hex[b & 15];
  }
  return out;
}

std::string config_hash(const ExperimentConfig& config) { return git_blob_hash(serialize(config)); }

}  // namespace clalign
