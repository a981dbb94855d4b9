#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gipad/audit.hpp"
#include "gipad/cli.hpp"
#include "gipad/error.hpp"
#include "gipad/metrics.hpp"
#include "gipad/model.hpp"
#include "gipad/spatial.hpp"
#include "gipad/trainer.hpp"

namespace py = pybind11;
using namespace gipad;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor4 to_tensor(const Array& a) {
  if (a.ndim() != 4) throw ConfigError("expected a 4-D array (N, C, H, W)");
  const Shape4 s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                 static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))};
  return Tensor4(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor4& t) {
  Array a({t.n(), t.c(), t.h(), t.w()});
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

// Fields travel as (N, G, k*k, H, W).
KernelField to_field(const Array& a) {
  if (a.ndim() != 5) throw ConfigError("expected a 5-D kernel field (N, G, k*k, H, W)");
  const int n = static_cast<int>(a.shape(0)), g = static_cast<int>(a.shape(1));
  const int taps = static_cast<int>(a.shape(2));
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(taps))));
  if (k * k != taps) throw ConfigError("kernel field tap axis must be a square");
  const Shape4 s{n, g * taps, static_cast<int>(a.shape(3)), static_cast<int>(a.shape(4))};
  return KernelField(g, k, Tensor4(s, std::vector<double>(a.data(), a.data() + a.size())));
}

Array field_to_array(const KernelField& f) {
  Array a({f.n(), f.groups(), f.taps(), f.h(), f.w()});
  std::copy(f.values().values().begin(), f.values().values().end(), a.mutable_data());
  return a;
}

ScoreSet score_set(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ConfigError("scores and labels differ in length");
  ScoreSet s;
  for (std::size_t i = 0; i < scores.size(); ++i) s.add(scores[i], labels[i]);
  return s;
}

Kernel2D to_kernel(const Array& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw ConfigError("expected a square 2-D kernel");
  Kernel2D k(static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), k.w.begin());
  return k;
}

ModelConfig model_config(const py::dict& kw) {
  std::map<std::string, std::string> kv;
  for (const auto& [key, value] : kw) kv[py::str(key)] = py::str(value);
  return ModelConfig::from_map(kv);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Group involution layers, the PAD model, metrics and kernel audit";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", PyExc_ArithmeticError);

  m.def(
      "group_involution",
      [](const Array& x, const Array& field) {
        const Tensor4 t = to_tensor(x);
        const KernelField f = to_field(field);
        return to_array(group_involution_forward(t, f, GroupMap(t.c(), f.groups())));
      },
      py::arg("x"), py::arg("field"),
      "Group involution of x (N, C, H, W) with a field (N, G, k*k, H, W).");

  m.def(
      "group_involution_backward",
      [](const Array& grad_y, const Array& x, const Array& field) {
        GIContext ctx;
        ctx.x = to_tensor(x);
        ctx.field = to_field(field);
        ctx.gmap = GroupMap(ctx.x.c(), ctx.field.groups());
        const GIGrads g = gi_backward(to_tensor(grad_y), ctx);
        return py::make_tuple(to_array(g.grad_x), field_to_array(g.grad_field));
      },
      py::arg("grad_y"), py::arg("x"), py::arg("field"),
      "Gradients (grad_x, grad_field) of group involution.");

  m.def(
      "involution",
      [](const Array& x, const Array& field) {
        return to_array(involution_forward(to_tensor(x), to_field(field)));
      },
      py::arg("x"), py::arg("field"), "Channel-shared involution; field has G = 1.");

  m.def(
      "conv2d",
      [](const Array& x, const Array& kernel, std::vector<double> bias, int groups, int stride,
         int pad) {
        return to_array(conv2d(to_tensor(x), to_tensor(kernel), bias, {groups, stride, pad}));
      },
      py::arg("x"), py::arg("kernel"), py::arg("bias") = std::vector<double>{},
      py::arg("groups") = 1, py::arg("stride") = 1, py::arg("pad") = 0);

  m.def("make_divisible", &make_divisible, py::arg("value"), py::arg("divisor") = 8);

  py::class_<Model>(m, "Model")
      .def(py::init([](std::uint64_t seed, const py::kwargs& kw) {
             Rng rng(seed);
             return std::make_unique<Model>(build_model(model_config(kw), rng));
           }),
           py::arg("seed") = 7,
           "Build a model. Keyword arguments are config keys, e.g. groups=120, "
           "placement='end', width_multiplier=0.25, input_size=64.")
      .def_static(
          "load", [](const std::filesystem::path& p) { return std::make_unique<Model>(load_checkpoint(p)); },
          py::arg("path"))
      .def("save", [](Model& self, const std::filesystem::path& p) { save_checkpoint(p, self); },
           py::arg("path"))
      .def("config", [](const Model& self) { return self.config().to_map(); })
      .def("param_count", &Model::param_count)
      .def("flops", [](const Model& self, int input_size) { return model_flops(self, input_size); },
           py::arg("input_size"))
      .def("logits", [](const Model& self, const Array& x) { return to_array(self.infer(to_tensor(x))); },
           py::arg("x"))
      .def("live_probability",
           [](const Model& self, const Array& x) { return score_images(self, to_tensor(x)); },
           py::arg("x"))
      .def("gradcam",
           [](Model& self, const Array& x, int class_index) {
             return to_array(gradcam(self, to_tensor(x), class_index));
           },
           py::arg("x"), py::arg("class_index") = kBonafide)
      .def("kernel_field",
           [](const Model& self, const Array& x) {
             if (self.gi_blocks().empty()) throw ConfigError("model has no GI block");
             FieldSink sink;
             self.infer(to_tensor(x), &sink);
             return field_to_array(sink.back());
           },
           py::arg("x"), "Kernel field of the last GI block for a batch.");

  m.def(
      "eer",
      [](const std::vector<double>& s, const std::vector<int>& y) {
        const EerResult r = eer(score_set(s, y));
        return py::make_tuple(r.eer, r.threshold);
      },
      py::arg("scores"), py::arg("labels"), "(EER, threshold); labels 1 = bonafide, 0 = attack.");
  m.def(
      "hter",
      [](const std::vector<double>& s, const std::vector<int>& y, double tau) {
        return hter(score_set(s, y), {tau, ThresholdSource::Fixed});
      },
      py::arg("scores"), py::arg("labels"), py::arg("threshold"));
  m.def(
      "auc", [](const std::vector<double>& s, const std::vector<int>& y) { return auc_roc(score_set(s, y)); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "evaluate",
      [](const std::vector<double>& s, const std::vector<int>& y, double tau) {
        const MetricReport r = evaluate(score_set(s, y), {tau, ThresholdSource::Fixed});
        py::dict d;
        d["accuracy"] = r.accuracy;
        d["auc"] = r.auc;
        d["eer"] = r.eer;
        d["far"] = r.far;
        d["frr"] = r.frr;
        d["hter"] = r.hter;
        d["yi"] = r.yi;
        d["apcer"] = r.apcer;
        d["bpcer"] = r.bpcer;
        d["acer"] = r.acer;
        d["threshold"] = r.threshold;
        return d;
      },
      py::arg("scores"), py::arg("labels"), py::arg("threshold"));

  m.def("hf_lf_ratio", [](const Array& k) { return hf_lf_ratio(to_kernel(k)); }, py::arg("kernel"));
  m.def("anisotropy", [](const Array& k) { return anisotropy(to_kernel(k)); }, py::arg("kernel"));

  m.def(
      "synth_patch",
      [](std::uint64_t seed, std::uint64_t index, int label, int size) {
        const Image img = synth_patch(seed, index, label, size);
        py::array_t<double> a({img.rows, img.cols, img.channels});
        std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
        return a;
      },
      py::arg("seed"), py::arg("index"), py::arg("label"), py::arg("size") = 64,
      "One synthetic patch as an (H, W, 3) array in [0, 255].");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "gipad");
        std::vector<char*> argv;
        for (std::string& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Run a gipad subcommand in process; returns the exit code.");
}
