// Python bindings: run configuration, pipeline driver, and a few numeric entry points.
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "scgs/cam.hpp"
#include "scgs/cluster.hpp"
#include "scgs/config.hpp"
#include "scgs/error.hpp"
#include "scgs/model.hpp"
#include "scgs/pipeline.hpp"

namespace py = pybind11;
using namespace scgs;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw InputError("image must be an H x W or H x W x C array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1);
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

Plane to_plane(const Array& a) {
  if (a.ndim() != 2) throw InputError("expected a 2-d array");
  Plane p(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), p.data.begin());
  return p;
}

Array from_plane(const Plane& p) {
  Array out({p.height, p.width});
  std::copy(p.data.begin(), p.data.end(), out.mutable_data());
  return out;
}

py::dict variant_dict(const VariantResult& v) {
  py::dict groups;
  for (const auto& [g, acc] : v.test.per_group_acc) groups[py::make_tuple(g.first, g.second)] = acc;
  py::dict d;
  d["name"] = v.name;
  d["avg_acc"] = v.test.avg_acc;
  d["worst_group_acc"] = v.test.worst_group_acc;
  d["per_group_acc"] = groups;
  d["attention"] = v.attention ? py::cast(v.attention->mean) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_scgs, m) {
  m.doc() = "Native core of the scgs package";

  auto base = py::register_exception<Error>(m, "ScgsError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<GenerationError>(m, "GenerationError", base.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());
  py::register_exception<DependencyError>(m, "DependencyError", base.ptr());
  py::register_exception<ReportError>(m, "ReportError", base.ptr());
  py::register_exception<StageError>(m, "StageError", base.ptr());

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", [](const std::string& text) { return RunConfig::parse(text); }, py::arg("text"))
      .def_static("load", &RunConfig::load, py::arg("path"))
      .def("to_text", &RunConfig::to_text)
      .def("validate", &RunConfig::validate)
      .def_property(
          "seed", [](const RunConfig& c) { return c.seed; },
          [](RunConfig& c, std::uint64_t s) { c.seed = c.synth.seed = c.train.seed = s; })
      .def_property(
          "output_dir", [](const RunConfig& c) { return c.output_dir.string(); },
          [](RunConfig& c, const std::string& p) { c.output_dir = p; })
      .def_property(
          "cam", [](const RunConfig& c) { return std::string(to_string(c.cam)); },
          [](RunConfig& c, const std::string& s) { c.cam = parse_cam_choice(s); })
      .def_property(
          "epochs", [](const RunConfig& c) { return c.train.epochs; }, [](RunConfig& c, int e) { c.train.epochs = e; })
      .def_property(
          "n_train", [](const RunConfig& c) { return c.synth.n_train; },
          [](RunConfig& c, int n) { c.synth.n_train = n; })
      .def_property(
          "image_size", [](const RunConfig& c) { return c.synth.image_size; },
          [](RunConfig& c, int n) { c.synth.image_size = n; })
      .def_property(
          "correlation", [](const RunConfig& c) { return c.synth.correlation; },
          [](RunConfig& c, double r) { c.synth.correlation = r; })
      .def_readwrite("tau", &RunConfig::tau)
      .def_readwrite("jtt", &RunConfig::jtt)
      .def_readwrite("clusters", &RunConfig::clusters)
      .def_readwrite("sample_fraction", &RunConfig::sample_fraction)
      .def_readwrite("gen_fraction", &RunConfig::gen_fraction)
      .def_readwrite("backend", &RunConfig::backend)
      .def_readwrite("endpoint", &RunConfig::endpoint)
      .def_readwrite("rounds", &RunConfig::rounds)
      .def_readwrite("concurrency", &RunConfig::concurrency)
      .def_readwrite("overlay_count", &RunConfig::overlay_count)
      .def("__repr__", [](const RunConfig& c) { return "<RunConfig output_dir='" + c.output_dir.string() + "'>"; });

  m.def(
      "run_pipeline",
      [](const RunConfig& cfg) {
        RunManifest man;
        {
          py::gil_scoped_release release;
          man = run_pipeline(cfg);
        }
        return man.to_json().dump();
      },
      py::arg("config"), "Runs every stage; returns the run manifest as JSON text.");
  m.def(
      "run_stage",
      [](const RunConfig& cfg, const std::string& stage, bool force) {
        py::gil_scoped_release release;
        Pipeline pl(cfg);
        return pl.run_stage(parse_stage(stage), force);
      },
      py::arg("config"), py::arg("stage"), py::arg("force") = false);
  m.def(
      "load_variants",
      [](const std::string& dir) {
        py::list out;
        for (const auto& v : load_variants(dir)) out.append(variant_dict(v));
        return out;
      },
      py::arg("run_dir"));
  m.def(
      "stages",
      [] {
        std::vector<std::string> out;
        for (Stage s : kStages) out.emplace_back(to_string(s));
        return out;
      });

  m.def("gaussian_logpdf", &gaussian_logpdf, py::arg("s"), py::arg("mu"), py::arg("sigma"));
  m.def(
      "threshold_mask", [](const Array& values, double tau) { return from_plane(threshold_mask(to_plane(values), tau).bits); },
      py::arg("values"), py::arg("tau"));

  py::class_<Classifier>(m, "Classifier")
      .def_static("load", py::overload_cast<const std::filesystem::path&>(&load_checkpoint), py::arg("path"))
      .def_property_readonly("parameter_count", &Classifier::parameter_count)
      .def("logits", [](const Classifier& c, const Array& img) { return c.forward(to_image(img)); }, py::arg("image"))
      .def("predict", [](const Classifier& c, const Array& img) { return c.predict(to_image(img)); }, py::arg("image"))
      .def(
          "cam",
          [](const Classifier& c, const Array& img, int target, const std::string& method) {
            return from_plane(compute_cam(parse_cam_method(method), c, to_image(img), target).values);
          },
          py::arg("image"), py::arg("target_class"), py::arg("method") = "gradcampp");
}
