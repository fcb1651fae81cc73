#include <filesystem>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "clalign/bounds.hpp"
#include "clalign/config.hpp"
#include "clalign/coupled_sim.hpp"
#include "clalign/datagen.hpp"
#include "clalign/metrics.hpp"
#include "clalign/runner.hpp"
#include "clalign/sim_core.hpp"
#include "clalign/verify.hpp"

namespace py = pybind11;
using namespace clalign;

namespace {

AnchorView anchor_view(std::vector<double> logits, int positive, std::vector<bool> same_class,
                       double tau) {
  if (positive < 0 || positive >= static_cast<int>(logits.size())) {
    throw std::invalid_argument("positive index out of range");
  }
  if (same_class.empty()) same_class.assign(logits.size(), false);
  if (same_class.size() != logits.size()) {
    throw std::invalid_argument("same_class and logits lengths differ");
  }
  AnchorView av;
  av.positive = positive;
  av.tau = tau;
  av.logits = std::move(logits);
  for (std::size_t k = 0; k < av.logits.size(); ++k) {
    av.keys.push_back(static_cast<int>(k) + 1);
    av.same_class.push_back(same_class[k] || static_cast<int>(k) == positive);
  }
  return av;
}

LossKind loss_kind(const std::string& name) {
  if (name == "CL") return LossKind::kCL;
  if (name == "NSCL") return LossKind::kNSCL;
  throw std::invalid_argument("kind must be CL or NSCL");
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_clalign, m) {
  m.doc() = "Coupled CL/NSCL training dynamics";
  m.attr("__version__") = version();

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<PositiveOnlyBatch>(m, "PositiveOnlyBatch", PyExc_ValueError);
  py::register_exception<bounds::DenominatorNonpositive>(m, "DenominatorNonpositive",
                                                         PyExc_ValueError);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("points", &Dataset::points)
      .def_readonly("labels", &Dataset::labels)
      .def_readonly("class_means", &Dataset::class_means)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def("__len__", &Dataset::size);
  m.def("make_dataset", &make_dataset, py::arg("num_classes"), py::arg("per_class"),
        py::arg("dim"), py::arg("class_separation"), py::arg("seed"));

  m.def("softmax", [](const std::vector<double>& s, double tau) { return softmax_tau(s, tau); },
        py::arg("logits"), py::arg("tau"));
  m.def(
      "anchor_loss",
      [](const std::string& kind, std::vector<double> logits, int positive,
         std::vector<bool> same_class, double tau) {
        return anchor_loss(loss_kind(kind), anchor_view(std::move(logits), positive,
                                                        std::move(same_class), tau));
      },
      py::arg("kind"), py::arg("logits"), py::arg("positive"),
      py::arg("same_class") = std::vector<bool>{}, py::arg("tau") = 1.0);
  m.def(
      "anchor_grad",
      [](const std::string& kind, std::vector<double> logits, int positive,
         std::vector<bool> same_class, double tau) {
        return anchor_grad(loss_kind(kind), anchor_view(std::move(logits), positive,
                                                        std::move(same_class), tau));
      },
      py::arg("kind"), py::arg("logits"), py::arg("positive"),
      py::arg("same_class") = std::vector<bool>{}, py::arg("tau") = 1.0);

  m.def("epsilon_B_delta", &bounds::epsilon_B_delta, py::arg("batch_size"), py::arg("horizon"),
        py::arg("delta"));
  m.def("delta_C", &bounds::delta_C, py::arg("num_classes"), py::arg("batch_size"),
        py::arg("horizon"), py::arg("delta"), py::arg("tau"));
  m.def("sim_coupling_bound", &bounds::sim_coupling_bound, py::arg("sum_eta"), py::arg("tau"),
        py::arg("batch_size"), py::arg("delta_factor"));
  m.def("cka_lower", &bounds::cka_lower, py::arg("rho"));
  m.def("rsa_lower", &bounds::rsa_lower, py::arg("r"));

  m.def("cosine_gram", &metrics::cosine_gram, py::arg("z"));
  m.def("linear_cka", &metrics::linear_cka, py::arg("z"), py::arg("z_other"));
  m.def("rsa", &metrics::rsa, py::arg("z"), py::arg("z_other"));
  m.def("metric_report",
        [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
          return to_python(metric_report(a, b));
        },
        py::arg("z"), py::arg("z_other"));

  m.def(
      "run_coupled",
      [](const Dataset& data, double noise_scale, int batch_size, double eta, int steps,
         double tau, std::uint64_t seed) {
        CoupledSimConfig c;
        c.batch_size = batch_size;
        c.schedule = ScheduleSpec{ScheduleKind::kConstant, eta, 0, steps, {}};
        c.tau = tau;
        c.master_seed = seed;
        const auto trace = run_coupled(data, {noise_scale, seed}, c);
        std::vector<double> drift;
        for (const auto& s : trace.steps) drift.push_back(s.drift);
        py::dict out;
        out["drift"] = drift;
        out["final_cl"] = trace.final_cl.entries;
        out["final_nscl"] = trace.final_nscl.entries;
        out["clip_events"] = trace.total_clip_events();
        out["composition_all"] = trace.composition_all;
        return out;
      },
      py::arg("data"), py::arg("noise_scale") = 0.1, py::arg("batch_size") = 32,
      py::arg("eta") = 0.1, py::arg("steps") = 100, py::arg("tau") = 0.5, py::arg("seed") = 0);

  m.def("parse_config", [](const std::string& text) { return serialize(parse_config(text)); },
        py::arg("text"), "Validates config text and returns its canonical form.");
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); },
        py::arg("text"));
  m.def(
      "run",
      [](const std::string& text, const std::string& out, int workers) {
        const auto c = parse_config(text);
        py::gil_scoped_release release;
        if (c.mode == Mode::kSweep) {
          const auto r = sweep_grid(c, out, workers);
          return std::pair{0, std::vector<std::string>{r.aggregate.filename().string()}};
        }
        const auto r = run_experiment(c, out, workers);
        return std::pair{r.exit_code, r.outputs};
      },
      py::arg("config_text"), py::arg("out"), py::arg("workers") = 1);

  m.def(
      "verify",
      [](int trials, std::uint64_t seed, int workers) {
        std::vector<verify::CheckReport> reports;
        {
          py::gil_scoped_release release;
          reports = verify::run_all(verify::Options{trials, seed, workers});
        }
        py::list out;
        for (const auto& r : reports) out.append(to_python(verify::to_json(r)));
        return out;
      },
      py::arg("trials") = 100, py::arg("seed") = 0, py::arg("workers") = 1);
}
