#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pulse/dataset.hpp"
#include "pulse/errors.hpp"
#include "pulse/eval.hpp"
#include "pulse/graph.hpp"
#include "pulse/sde.hpp"
#include "pulse/train.hpp"

namespace py = pybind11;
using namespace pulse;

namespace {

py::array_t<double> to_numpy(const ad::Tensor& t) {
  py::array_t<double> a(t.shape());
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

py::dict dataset_dict(const sde::WindowDataset& ds) {
  std::vector<std::string> splits;
  for (auto s : ds.splits) splits.push_back(sde::split_name(s));
  py::dict d;
  d["windows"] = to_numpy(ds.windows);
  d["labels"] = ds.labels;
  d["splits"] = splits;
  d["class_params"] = ds.class_params;
  d["sigma_tilde"] = ds.sigma_tilde;
  d["config_hash"] = ds.config_hash;
  return d;
}

eval::EmbeddingSet embedding_set(const eval::Matrix& x, const std::vector<int>& labels,
                                 const std::vector<std::string>& splits) {
  eval::EmbeddingSet e;
  e.vectors = x;
  e.labels = labels;
  for (const auto& s : splits) e.splits.push_back(sde::parse_split(s));
  if (e.labels.size() != static_cast<std::size_t>(x.rows()) || e.splits.size() != e.labels.size())
    throw DimensionError("embeddings, labels and splits must have the same length");
  return e;
}

}  // namespace

PYBIND11_MODULE(_pulse, m) {
  m.doc() = "Bindings for the PULSE C++ core";

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_RuntimeError);

  m.def(
      "drift",
      [](const std::string& family, double param, std::vector<double> y) {
        const auto spec = sde::make_spec(sde::parse_family(family), param, 0.0);
        const auto d = sde::drift(spec, sde::State{y.at(0), y.at(1), y.at(2)});
        return std::vector<double>(d.begin(), d.end());
      },
      py::arg("family"), py::arg("param"), py::arg("y"));
  m.def("parameter_grid", [](const std::string& family) { return sde::parameter_grid(sde::parse_family(family)); });
  m.def(
      "integrate",
      [](const std::string& family, double param, double sigma, std::vector<double> y0, std::size_t steps,
         std::uint64_t seed) {
        const auto spec = sde::make_spec(sde::parse_family(family), param, sigma);
        return to_numpy(sde::integrate(spec, y0, steps, seed).values);
      },
      py::arg("family"), py::arg("param"), py::arg("sigma"), py::arg("y0"), py::arg("steps"), py::arg("seed"));
  m.def(
      "build_dataset",
      [](const std::string& family, double sigma, std::size_t n_classes, std::size_t window, std::size_t trials,
         std::size_t steps, std::uint64_t seed) {
        sde::DatasetConfig c;
        c.family = sde::parse_family(family);
        c.sigma = sigma;
        c.n_classes = n_classes;
        c.window = window;
        c.trials_per_class = trials;
        c.steps_per_trial = steps;
        c.seed = seed;
        return dataset_dict(sde::build_dataset(c));
      },
      py::arg("family"), py::arg("sigma"), py::arg("n_classes") = 5, py::arg("window") = 100, py::arg("trials") = 5,
      py::arg("steps") = 20000, py::arg("seed") = 0);
  m.def(
      "load_dataset", [](const std::filesystem::path& p) { return dataset_dict(sde::load_dataset(p)); },
      py::arg("path"));

  m.def(
      "verify_theorem", [](int w_max) { return graph::verify_theorem1(w_max).json(); }, py::arg("w_max"));

  m.def("one_cycle_lr", &train::one_cycle_lr, py::arg("step"), py::arg("total_steps"), py::arg("peak_lr"));
  m.def(
      "adamw_trajectory",
      [](std::vector<double> w0, const std::vector<std::vector<double>>& grads, double lr, double weight_decay) {
        auto w = ad::Tensor::from({w0.size()}, w0, true);
        train::AdamW opt({w}, {0.9, 0.999, 1e-8, weight_decay});
        std::vector<std::vector<double>> out;
        for (const auto& g : grads) {
          w.zero_grad();
          auto dst = w.mutable_grad();
          std::copy(g.begin(), g.end(), dst.begin());
          opt.step(lr);
          out.emplace_back(w.data().begin(), w.data().end());
        }
        return out;
      },
      py::arg("w0"), py::arg("grads"), py::arg("lr"), py::arg("weight_decay"),
      "Parameter values after each AdamW step on the given gradient sequence.");

  m.def(
      "compute_metrics",
      [](const eval::Matrix& scores, const std::vector<int>& labels) {
        return eval::compute_metrics(scores, labels).to_json().dump();
      },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "fit_probe",
      [](const eval::Matrix& x, const std::vector<int>& y, std::size_t n_classes, double C) {
        eval::ProbeConfig cfg;
        cfg.C = C;
        const auto p = eval::fit_probe(x, y, n_classes, cfg);
        return py::make_tuple(p.weights, p.bias, p.iterations, p.converged);
      },
      py::arg("x"), py::arg("y"), py::arg("n_classes"), py::arg("C") = 1.0);
  m.def(
      "linear_probe",
      [](const eval::Matrix& x, const std::vector<int>& labels, const std::vector<std::string>& splits) {
        return eval::linear_probe(embedding_set(x, labels, splits)).to_json().dump();
      },
      py::arg("x"), py::arg("labels"), py::arg("splits"));
  m.def(
      "semi_supervised",
      [](const eval::Matrix& x, const std::vector<int>& labels, const std::vector<std::string>& splits,
         double fraction, std::size_t n_subsets, std::uint64_t seed) {
        return eval::semi_supervised(embedding_set(x, labels, splits), fraction, n_subsets, seed).to_json().dump();
      },
      py::arg("x"), py::arg("labels"), py::arg("splits"), py::arg("fraction"), py::arg("n_subsets"),
      py::arg("seed"));
}
