// Python surface over the core: the differentiable ops, the classifier, the
// gradient checker, and the classification metrics. Arrays cross the boundary
// as contiguous copies; shapes follow the C++ contracts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "sgumlp/errors.hpp"
#include "sgumlp/layers.hpp"
#include "sgumlp/metrics.hpp"
#include "sgumlp/tensor.hpp"
#include "sgumlp/training.hpp"

namespace py = pybind11;
using namespace sgumlp;

namespace {

template <typename T>
using InArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const InArray<T>& a) {
  std::vector<std::size_t> shape(std::size_t(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[std::size_t(i)] = std::size_t(a.shape(i));
  Tensor<T> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

template <typename T>
py::array_t<T> from_tensor(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.rank());
  for (std::size_t i = 0; i < t.rank(); ++i) shape[i] = py::ssize_t(t.extent(i));
  py::array_t<T> a(shape);
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

ModelConfig make_config(std::size_t bands, std::size_t classes, const std::string& variant,
                        std::size_t window, std::size_t token_segment, std::size_t hidden_dim,
                        std::size_t ffn_dim, std::size_t blocks,
                        const std::vector<std::size_t>& dwc_kernels, bool token_sgu,
                        double ln_eps) {
  ModelConfig config;
  config.variant = parse_variant(variant);
  config.patch_window = window;
  config.bands = bands;
  config.token_segment = token_segment;
  config.hidden_dim = hidden_dim;
  config.mixer_ffn_dim = ffn_dim;
  config.num_blocks = blocks;
  config.num_classes = classes;
  config.dwc_kernels = dwc_kernels;
  config.sgu_in_token_mlp = token_sgu;
  config.ln_eps = ln_eps;
  config.validate();
  return config;
}

// Inference-oriented wrapper; weights come from the seeded init or a
// checkpoint written by this class or the command-line tool.
class PyModel {
 public:
  PyModel(std::size_t bands, std::size_t classes, const std::string& variant,
          std::size_t window, std::size_t token_segment, std::size_t hidden_dim,
          std::size_t ffn_dim, std::size_t blocks, const std::vector<std::size_t>& dwc_kernels,
          bool token_sgu, double ln_eps, std::uint64_t seed)
      : config_(make_config(bands, classes, variant, window, token_segment, hidden_dim,
                            ffn_dim, blocks, dwc_kernels, token_sgu, ln_eps)),
        params_(init_params<float>(config_, seed)) {}

  py::array_t<float> probabilities(const InArray<float>& patch) const {
    return from_tensor(model_forward(to_tensor(patch), params_, config_));
  }

  int predict(const InArray<float>& patch) const {
    return int(predict_label(model_forward(to_tensor(patch), params_, config_)));
  }

  void save(const std::string& path) const { save_checkpoint(params_, config_, path); }
  void load(const std::string& path) { params_ = load_checkpoint<float>(path, config_); }

  std::size_t param_count() const { return sgumlp::param_count(config_); }
  std::string variant() const { return variant_name(config_.variant); }
  std::size_t token_count() const { return config_.token_count(); }

  std::vector<std::pair<std::string, std::vector<std::size_t>>> parameters() const {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    for (const ParamSpec& spec : parameter_shapes(config_)) {
      out.emplace_back(spec.name, spec.shape);
    }
    return out;
  }

 private:
  ModelConfig config_;
  ModelParams<float> params_;
};

py::dict metrics_dict(const InArray<std::uint64_t>& counts) {
  if (counts.ndim() != 2 || counts.shape(0) != counts.shape(1)) {
    throw DimensionError("classification_metrics: counts must be a square matrix");
  }
  const std::size_t c = std::size_t(counts.shape(0));
  ConfusionMatrix m(c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      m.count(i, j) = counts.data()[i * c + j];
  py::dict out;
  out["overall_accuracy"] = overall_accuracy(m);
  out["average_accuracy"] = average_accuracy(m);
  out["kappa"] = kappa(m);
  out["f1"] = f1_per_class(m);
  return out;
}

py::dict grad_check_dict(std::size_t bands, std::size_t classes, const std::string& variant,
                         std::size_t window, std::size_t token_segment, std::size_t hidden_dim,
                         std::size_t ffn_dim, std::size_t blocks, std::uint64_t seed,
                         double tolerance, std::size_t samples) {
  const ModelConfig config = make_config(bands, classes, variant, window, token_segment,
                                         hidden_dim, ffn_dim, blocks, {1, 3, 5}, true, 1e-5);
  const GradCheckReport report = grad_check(config, seed, tolerance, samples);
  py::dict entries;
  for (const GradCheckEntry& e : report.entries) entries[e.name.c_str()] = e.rel_err;
  py::dict out;
  out["pass"] = report.pass;
  out["max_rel_err"] = report.max_rel_err;
  out["worst"] = report.worst;
  out["tolerance"] = report.tolerance;
  out["entries"] = entries;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Patch classifier core: gated-MLP mixing over depthwise-convolution features";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const DimensionError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def(
      "gelu", [](const InArray<double>& x) { return from_tensor(gelu(to_tensor(x))); },
      py::arg("x"), "Gaussian error linear unit, elementwise (tanh form).");
  m.def(
      "softmax", [](const InArray<double>& x) { return from_tensor(softmax(to_tensor(x))); },
      py::arg("x"), "Softmax over the last axis.");
  m.def(
      "layer_norm",
      [](const InArray<double>& x, const InArray<double>& gain, const InArray<double>& bias,
         double eps) {
        return from_tensor(layer_norm(to_tensor(x), to_tensor(gain), to_tensor(bias), eps));
      },
      py::arg("x"), py::arg("gain"), py::arg("bias"), py::arg("eps") = 1e-5,
      "Row-wise layer normalization with per-column gain and bias.");
  m.def(
      "matmul",
      [](const InArray<double>& a, const InArray<double>& b) {
        return from_tensor(matmul(to_tensor(a), to_tensor(b)));
      },
      py::arg("a"), py::arg("b"), "Dense matrix product of two rank-2 arrays.");
  m.def(
      "depthwise_conv2d",
      [](const InArray<double>& x, const InArray<double>& kernels, const InArray<double>& bias) {
        return from_tensor(depthwise_conv2d(to_tensor(x), to_tensor(kernels), to_tensor(bias)));
      },
      py::arg("x"), py::arg("kernels"), py::arg("bias"),
      "Per-channel square cross-correlation with zero same-padding.\n"
      "x is [h, w, c], kernels is [k, k, c] with odd k, bias is [c].");
  m.def(
      "sgu",
      [](const InArray<double>& d, const InArray<double>& weight, const InArray<double>& bias) {
        SguParams<double> p{Dual<double>(to_tensor(weight)), Dual<double>(to_tensor(bias))};
        return from_tensor(sgu_forward(to_tensor(d), p));
      },
      py::arg("d"), py::arg("weight"), py::arg("bias"),
      "Spatial gating unit: split [r, f] into halves by column, gate the first\n"
      "half with a row-mixing projection of the second, return [r, f/2].");
  m.def("classification_metrics", &metrics_dict, py::arg("counts"),
        "Overall/average accuracy, Cohen's kappa, and per-class F1 from a square\n"
        "confusion-count matrix (rows reference, columns prediction).");
  m.def("grad_check", &grad_check_dict, py::arg("bands") = 3, py::arg("classes") = 4,
        py::arg("variant") = "sgu-mlp", py::arg("window") = 9, py::arg("token_segment") = 16,
        py::arg("hidden_dim") = 8, py::arg("ffn_dim") = 8, py::arg("blocks") = 2,
        py::arg("seed") = 1, py::arg("tolerance") = 1e-4, py::arg("samples") = 3,
        "Compare analytic gradients with central finite differences in double\n"
        "precision on a small random batch; returns per-tensor relative errors.");

  py::class_<PyModel>(m, "Model",
                      "Patch classifier. Construct with the model geometry, then run\n"
                      "probabilities/predict on [window, window, bands] patches. Weights\n"
                      "start at the seeded init; load() accepts checkpoints written by\n"
                      "save() or by the command-line trainer with the same geometry.")
      .def(py::init<std::size_t, std::size_t, const std::string&, std::size_t, std::size_t,
                    std::size_t, std::size_t, std::size_t, const std::vector<std::size_t>&,
                    bool, double, std::uint64_t>(),
           py::arg("bands"), py::arg("classes"), py::arg("variant") = "sgu-mlp",
           py::arg("window") = 9, py::arg("token_segment") = 4, py::arg("hidden_dim") = 256,
           py::arg("ffn_dim") = 256, py::arg("blocks") = 4,
           py::arg("dwc_kernels") = std::vector<std::size_t>{1, 3, 5},
           py::arg("token_sgu") = true, py::arg("ln_eps") = 1e-5, py::arg("seed") = 1)
      .def("probabilities", &PyModel::probabilities, py::arg("patch"),
           "Class probabilities for one patch, shape [classes].")
      .def("predict", &PyModel::predict, py::arg("patch"), "1-based class label for one patch.")
      .def("save", &PyModel::save, py::arg("path"))
      .def("load", &PyModel::load, py::arg("path"))
      .def("parameters", &PyModel::parameters,
           "Canonical (name, shape) list of every parameter tensor.")
      .def_property_readonly("param_count", &PyModel::param_count)
      .def_property_readonly("variant", &PyModel::variant)
      .def_property_readonly("token_count", &PyModel::token_count);
}
