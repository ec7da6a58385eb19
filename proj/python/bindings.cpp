#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "moeamc/cli.hpp"
#include "moeamc/dataset_io.hpp"
#include "moeamc/selftest.hpp"
#include "moeamc/trainer.hpp"

namespace py = pybind11;
using namespace moeamc;

namespace {

DatasetSpec spec_from_kwargs(const std::vector<std::string>& schemes,
                             const std::vector<double>& snr_grid_db, std::size_t frame_len,
                             std::size_t samples_per_symbol, std::size_t frames_per_cell,
                             std::uint64_t seed) {
  DatasetSpec spec;
  spec.schemes.clear();
  for (const auto& name : schemes) spec.schemes.push_back(scheme_from_name(name));
  spec.snr_grid_db = snr_grid_db;
  spec.frame_len = frame_len;
  spec.samples_per_symbol = samples_per_symbol;
  spec.frames_per_cell = frames_per_cell;
  spec.seed = seed;
  spec.validate();
  return spec;
}

py::tuple dataset_to_arrays(const Dataset& ds) {
  std::size_t n = ds.examples.size();
  std::size_t len = ds.spec.frame_len;
  py::array_t<float> x({n, std::size_t{2}, len});
  py::array_t<std::uint16_t> labels(n);
  py::array_t<float> snr(n);
  auto xb = x.mutable_unchecked<3>();
  auto lb = labels.mutable_unchecked<1>();
  auto sb = snr.mutable_unchecked<1>();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = ds.examples[i];
    for (std::size_t t = 0; t < len; ++t) {
      xb(i, 0, t) = ex.frame.i[t];
      xb(i, 1, t) = ex.frame.q[t];
    }
    lb(i) = ex.class_idx;
    sb(i) = ex.snr_db;
  }
  return py::make_tuple(std::move(x), std::move(labels), std::move(snr));
}

Tensor<float> array_to_input(const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
                             std::size_t input_len) {
  if (x.ndim() != 3 || x.shape(1) != 2 ||
      static_cast<std::size_t>(x.shape(2)) != input_len) {
    throw ValidationError("forward: want float32 array [N, 2, " + std::to_string(input_len) + "]");
  }
  std::size_t n = static_cast<std::size_t>(x.shape(0));
  Tensor<float> t({n, 2, input_len});
  std::copy(x.data(), x.data() + t.size(), t.data());
  return t;
}

py::array_t<float> tensor_to_array(const Tensor<float>& t) {
  py::array_t<float> out(t.shape());
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

class PyModel {
 public:
  PyModel(const std::string& kind, std::size_t input_len, std::size_t n_classes,
          std::uint64_t seed)
      : model_(Model<float>::build_default(model_kind_from_name(kind), input_len, n_classes,
                                           seed)) {}

  py::array_t<float> forward(
      const py::array_t<float, py::array::c_style | py::array::forcecast>& x) {
    Tensor<float> in = array_to_input(x, model_.input_len);
    return tensor_to_array(model_.forward(nullptr, in, Mode::kEval).probs);
  }

  py::tuple forward_full(
      const py::array_t<float, py::array::c_style | py::array::forcecast>& x) {
    Tensor<float> in = array_to_input(x, model_.input_len);
    auto out = model_.forward(nullptr, in, Mode::kEval);
    py::object gate = out.gate.defined() ? py::object(tensor_to_array(out.gate)) : py::none();
    return py::make_tuple(tensor_to_array(out.probs), gate);
  }

  std::string kind() const { return model_kind_name(model_.kind); }
  std::size_t input_len() const { return model_.input_len; }
  std::size_t n_classes() const { return model_.n_classes; }

 private:
  Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(moeamc, m) {
  m.doc() = "I/Q modulation classification toolkit";

  m.def(
      "modulate",
      [](const std::vector<std::uint8_t>& bits, const std::string& scheme, std::size_t sps) {
        IQFrame f = modulate(bits, scheme_from_name(scheme), sps);
        py::array_t<float> i(f.i.size()), q(f.q.size());
        std::copy(f.i.begin(), f.i.end(), i.mutable_data());
        std::copy(f.q.begin(), f.q.end(), q.mutable_data());
        return py::make_tuple(std::move(i), std::move(q));
      },
      py::arg("bits"), py::arg("scheme"), py::arg("sps") = 8,
      "Map a bit string onto I/Q samples.");

  m.def("scheme_names", [] {
    std::vector<std::string> names;
    for (std::size_t s = 0; s < kNumSchemes; ++s) {
      names.push_back(scheme_name(static_cast<Scheme>(s)));
    }
    return names;
  });

  m.def(
      "generate",
      [](const std::vector<std::string>& schemes, const std::vector<double>& snr_grid_db,
         std::size_t frame_len, std::size_t samples_per_symbol, std::size_t frames_per_cell,
         std::uint64_t seed) {
        DatasetSpec spec = spec_from_kwargs(schemes, snr_grid_db, frame_len, samples_per_symbol,
                                            frames_per_cell, seed);
        return dataset_to_arrays(generate_dataset(spec));
      },
      py::arg("schemes"), py::arg("snr_grid_db"), py::arg("frame_len") = 128,
      py::arg("samples_per_symbol") = 8, py::arg("frames_per_cell") = 200, py::arg("seed") = 1,
      "Synthesize a labeled dataset; returns (x[N,2,L], labels[N], snr_db[N]).");

  m.def(
      "load_dataset_arrays",
      [](const std::string& path) { return dataset_to_arrays(load_dataset(path)); },
      py::arg("path"), "Read a dataset file; returns (x[N,2,L], labels[N], snr_db[N]).");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, std::size_t, std::size_t, std::uint64_t>(),
           py::arg("kind"), py::arg("input_len") = 128, py::arg("n_classes") = 8,
           py::arg("seed") = 0)
      .def("forward", &PyModel::forward, py::arg("x"),
           "Class probabilities for preprocessed input [N,2,L].")
      .def("forward_full", &PyModel::forward_full, py::arg("x"),
           "Returns (probs, gate); gate is None for single-expert models.")
      .def_property_readonly("kind", &PyModel::kind)
      .def_property_readonly("input_len", &PyModel::input_len)
      .def_property_readonly("n_classes", &PyModel::n_classes);

  m.def(
      "run_cli", [](const std::vector<std::string>& args) { return run_cli(args); },
      py::arg("args"), "Invoke the command-line driver in process; returns its exit code.");

  m.def("selftest", [] {
    std::vector<py::tuple> out;
    for (const auto& r : run_selftest()) {
      out.push_back(py::make_tuple(r.name, r.pass, r.detail));
    }
    return out;
  });

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);
}
