#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "elicit/diagnostics.hpp"
#include "elicit/errors.hpp"
#include "elicit/loss.hpp"
#include "elicit/run_io.hpp"
#include "elicit/study.hpp"

namespace py = pybind11;
using namespace elicit;
using ad::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor from_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  const auto n = static_cast<std::size_t>(a.shape(0)), k = static_cast<std::size_t>(a.shape(1));
  return Tensor::from({n, k}, std::vector<double>(a.data(), a.data() + n * k));
}

StudyConfig config_from(const std::string& json) { return StudyConfig::from_json(nlohmann::ordered_json::parse(json)); }

// A trained replication, as seen from Python.
struct Run {
  ReplicationResult result;

  Array sample(std::size_t count, std::uint64_t seed) const {
    if (!result.flow) throw std::runtime_error("run was loaded without its checkpoint");
    Rng rng(seed, Stream::evaluation);
    return to_array(result.flow->sample(count, rng).detach());
  }

  py::dict trajectory() const {
    const auto& tr = result.trajectory;
    py::dict d;
    std::vector<double> epochs, totals;
    for (const auto& e : tr.epochs) {
      epochs.push_back(static_cast<double>(e.epoch));
      totals.push_back(e.total);
    }
    d["epoch"] = py::array(py::cast(epochs));
    d["loss_total"] = py::array(py::cast(totals));
    for (std::size_t c = 0; c < tr.component_names.size(); ++c) {
      std::vector<double> col;
      for (const auto& e : tr.epochs) col.push_back(e.components[c]);
      d[py::str("loss_" + tr.component_names[c])] = py::array(py::cast(col));
    }
    for (std::size_t p = 0; p < tr.parameter_names.size(); ++p) {
      std::vector<double> m, s;
      for (const auto& e : tr.epochs) {
        m.push_back(e.means[p]);
        s.push_back(e.sds[p]);
      }
      d[py::str("mean_" + tr.parameter_names[p])] = py::array(py::cast(m));
      d[py::str("sd_" + tr.parameter_names[p])] = py::array(py::cast(s));
    }
    return d;
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Normalizing-flow prior elicitation core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.def("preset_ids", &StudyConfig::preset_ids);
  m.def(
      "preset",
      [](const std::string& id, bool reduced) {
        const StudyConfig c = StudyConfig::preset(id);
        return (reduced ? c.reduced() : c).to_json().dump();
      },
      py::arg("study"), py::arg("reduced") = false, "Preset configuration as a JSON string.");
  m.def(
      "config_from_toml", [](const std::string& text) { return StudyConfig::from_toml(text).to_json().dump(); },
      py::arg("text"));
  m.def(
      "config_hash", [](const std::string& json) { return config_hash(config_from(json)); }, py::arg("config"));

  m.def(
      "simulate_expert",
      [](const std::string& config, std::uint64_t seed) {
        const StudyConfig c = config_from(config);
        Rng rng(seed, Stream::oracle);
        return expert_to_json(simulate_expert(c.prior, c.model, c.plan, c.expert_samples, rng)).dump();
      },
      py::arg("config"), py::arg("seed") = 0, "Expert statistics from the ground-truth prior, as JSON.");
  m.def(
      "sample_true_prior",
      [](const std::string& config, std::size_t count, std::uint64_t seed) {
        Rng rng(seed, Stream::oracle);
        return to_array(sample_true_prior(config_from(config).prior, count, rng));
      },
      py::arg("config"), py::arg("count"), py::arg("seed") = 0);

  py::class_<Run>(m, "Run")
      .def_property_readonly("seed", [](const Run& r) { return r.result.seed; })
      .def_property_readonly("final_loss", [](const Run& r) { return r.result.final_loss; })
      .def_property_readonly("trajectory", &Run::trajectory)
      .def("sample", &Run::sample, py::arg("count"), py::arg("seed") = 0)
      .def(
          "save", [](Run& r, const std::filesystem::path& dir) { save_run(r.result, dir); }, py::arg("dir"));

  m.def(
      "train",
      [](const std::string& config, const std::string& expert, std::uint64_t seed) {
        const StudyConfig c = config_from(config);
        const TrainProblem problem = c.problem(expert_from_json(nlohmann::ordered_json::parse(expert)));
        TrainConfig t = c.train;
        t.seed = seed;
        py::gil_scoped_release release;
        return Run{train(std::make_shared<JointPriorFlow>(problem.flow, seed), problem, t)};
      },
      py::arg("config"), py::arg("expert"), py::arg("seed") = 1);
  m.def(
      "load_run", [](const std::filesystem::path& dir) { return Run{load_run(dir)}; }, py::arg("dir"));

  m.def(
      "averaging_weights",
      [](const std::vector<double>& losses, double gamma) { return averaging_weights(losses, gamma).weights; },
      py::arg("losses"), py::arg("gamma") = 1.0);
  m.def(
      "loss_slope", [](const std::vector<double>& losses, std::size_t window) { return loss_slope(losses, window); },
      py::arg("losses"), py::arg("window") = 100);
  m.def(
      "mmd_energy", [](const Array& x, const Array& y) { return mmd_energy_biased(from_matrix(x), from_matrix(y)).item(); },
      py::arg("x"), py::arg("y"), "Biased energy-distance MMD between two [n, d] sample sets.");
}
