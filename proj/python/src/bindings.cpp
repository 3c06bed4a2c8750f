// Copyright 2026 The Respira Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "respira/attribution.hpp"
#include "respira/audio.hpp"
#include "respira/data.hpp"
#include "respira/error.hpp"
#include "respira/fbs.hpp"
#include "respira/model.hpp"
#include "respira/train.hpp"

namespace py = pybind11;
using namespace respira;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_array(std::int64_t rows, std::int64_t cols, const std::vector<float>& v) {
  py::array_t<float> out({rows, cols});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Spectrogram from_array(const FloatArray& a, int label, const std::string& id, const std::string& patient,
                       const std::string& split, double age) {
  if (a.ndim() != 2) throw ShapeError("spectrogram must be a 2-D [frames, bands] array");
  Spectrogram s;
  s.frames = a.shape(0);
  s.bands = a.shape(1);
  s.values.assign(a.data(), a.data() + a.size());
  s.label = label;
  s.id = id;
  s.patient_id = patient;
  s.split = split;
  s.age_years = age;
  return s;
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["se"] = r.se;
  d["sp"] = r.sp;
  d["as"] = r.as;
  d["hs"] = r.hs;
  d["ts"] = r.ts;
  d["confusion"] = r.confusion;
  d["n_eval"] = r.n_eval;
  d["loss"] = r.loss;
  return d;
}

py::dict fbs_dict(const FbsResult& res) {
  py::list iters;
  for (const auto& it : res.iterations) {
    py::dict d;
    d["index"] = it.index;
    d["kept"] = it.mask.kept();
    d["mask"] = it.mask.bits();
    d["mean_as"] = it.mean_as;
    d["mean_loss"] = it.mean_loss;
    d["candidates"] = it.candidates.size();
    d["removed"] = it.removed;
    iters.append(d);
  }
  py::dict d;
  d["best"] = res.best;
  d["best_as"] = res.best_as;
  d["iterations"] = iters;
  d["cv_runs"] = res.cv_runs;
  d["trainings"] = res.trainings;
  d["stop_reason"] = res.stop_reason;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Respiratory-sound classification with attribution-driven frequency band selection";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  py::class_<Spectrogram>(m, "Spectrogram")
      .def(py::init(&from_array), py::arg("values"), py::arg("label") = -1, py::arg("id") = "",
           py::arg("patient_id") = "", py::arg("split") = "", py::arg("age_years") = std::nan(""))
      .def_property_readonly("values", [](const Spectrogram& s) { return to_array(s.frames, s.bands, s.values); })
      .def_readonly("frames", &Spectrogram::frames)
      .def_readonly("bands", &Spectrogram::bands)
      .def_readwrite("label", &Spectrogram::label)
      .def_readwrite("id", &Spectrogram::id)
      .def_readwrite("patient_id", &Spectrogram::patient_id)
      .def_readwrite("split", &Spectrogram::split)
      .def_readwrite("age_years", &Spectrogram::age_years)
      .def("__repr__", [](const Spectrogram& s) {
        return "<Spectrogram " + s.id + " " + std::to_string(s.frames) + "x" + std::to_string(s.bands) + " label " +
               std::to_string(s.label) + ">";
      });

  py::class_<FrontendConfig>(m, "FrontendConfig")
      .def(py::init<>())
      .def_readwrite("sample_rate", &FrontendConfig::sample_rate)
      .def_readwrite("target_seconds", &FrontendConfig::target_seconds)
      .def_property(
          "pad_mode", [](const FrontendConfig& c) { return std::string(pad_mode_name(c.pad_mode)); },
          [](FrontendConfig& c, const std::string& s) { c.pad_mode = parse_pad_mode(s); })
      .def_readwrite("fade_seconds", &FrontendConfig::fade_seconds)
      .def_readwrite("n_mels", &FrontendConfig::n_mels)
      .def_readwrite("win", &FrontendConfig::win)
      .def_readwrite("hop", &FrontendConfig::hop)
      .def_readwrite("f_min", &FrontendConfig::f_min)
      .def_readwrite("f_max", &FrontendConfig::f_max)
      .def("hash", &FrontendConfig::hash);

  m.def(
      "log_mel",
      [](const FloatArray& samples, double sample_rate, const FrontendConfig& cfg) {
        AudioClip clip;
        clip.samples.assign(samples.data(), samples.data() + samples.size());
        clip.sample_rate = sample_rate;
        return preprocess_clip(clip, cfg);
      },
      py::arg("samples"), py::arg("sample_rate"), py::arg("config") = FrontendConfig{},
      "Resample, pad or crop, then log-Mel spectrogram of a mono clip.");

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("icbhi", &ModelConfig::icbhi, py::arg("n_classes") = 4)
      .def_static("sprsound", &ModelConfig::sprsound, py::arg("n_classes") = 7)
      .def_readwrite("channels", &ModelConfig::channels)
      .def_readwrite("kernel_size", &ModelConfig::kernel_size)
      .def_readwrite("n_classes", &ModelConfig::n_classes)
      .def_readwrite("n_mels_in", &ModelConfig::n_mels_in)
      .def_property("placement", &ModelConfig::placement_name, &ModelConfig::set_placement)
      .def("validate", &ModelConfig::validate)
      .def("canonical", &ModelConfig::canonical)
      .def("hash", &ModelConfig::hash);

  m.def("parameter_count", py::overload_cast<const ModelConfig&>(&parameter_count));
  m.def(
      "count_flops",
      [](const ModelConfig& cfg, std::int64_t frames) {
        const auto r = count_flops(cfg, frames);
        py::dict d;
        py::list layers;
        for (const auto& l : r.layers) layers.append(py::make_tuple(l.name, l.flops));
        d["layers"] = layers;
        d["total"] = r.total();
        d["conv"] = r.conv();
        d["attention"] = r.attention();
        return d;
      },
      py::arg("config"), py::arg("frames"));

  m.def("metrics_from_se_sp", [](double se, double sp) { return report_dict(MetricReport::from_se_sp(se, sp)); });
  m.def("metrics_from_confusion", [](std::vector<std::vector<std::int64_t>> c) {
    return report_dict(MetricReport::from_confusion(std::move(c)));
  });

  py::class_<SynthSpec>(m, "SynthSpec")
      .def(py::init<>())
      .def_readwrite("n_classes", &SynthSpec::n_classes)
      .def_readwrite("planted", &SynthSpec::planted)
      .def_readwrite("snr_db", &SynthSpec::snr_db)
      .def_readwrite("n_per_class", &SynthSpec::n_per_class)
      .def_readwrite("frames", &SynthSpec::frames)
      .def_readwrite("bands", &SynthSpec::bands)
      .def_readwrite("n_patients", &SynthSpec::n_patients)
      .def_readwrite("seed", &SynthSpec::seed)
      .def("planted_bands", &SynthSpec::planted_bands)
      .def("all_planted", &SynthSpec::all_planted);
  m.def(
      "synth_corpus",
      [](const SynthSpec& spec) {
        auto c = synth_corpus(spec);
        return py::make_tuple(std::move(c.items), c.oracle_accuracy);
      },
      "Returns (spectrograms, oracle_accuracy).");

  py::class_<FrequencyMask>(m, "FrequencyMask")
      .def_static("full", &FrequencyMask::full)
      .def("without", &FrequencyMask::without)
      .def("kept", &FrequencyMask::kept)
      .def("kept_indices", &FrequencyMask::kept_indices)
      .def("bits", &FrequencyMask::bits)
      .def_readonly("history", &FrequencyMask::history)
      .def("save", [](const FrequencyMask& mk, const std::string& path) { save_mask(path, mk); })
      .def_static("load", &load_mask);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr0)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("augment", &TrainConfig::augment)
      .def_property(
          "task", [](const TrainConfig& c) { return task_name(c.task); },
          [](TrainConfig& c, const std::string& s) { c.task = parse_task(s); });

  py::class_<CnnTsa>(m, "Model")
      .def(py::init<ModelConfig, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def_property_readonly("config", &CnnTsa::config)
      .def("parameter_count", &CnnTsa::parameter_count)
      .def(
          "logits",
          [](const CnnTsa& model, const std::vector<Spectrogram>& specs) {
            std::vector<const Spectrogram*> ptrs;
            for (const auto& s : specs) ptrs.push_back(&s);
            const auto out = model.frozen_forward(to_batch(ptrs), false).logits;
            return to_array(out.dim(0), out.dim(1), out.to_vector());
          },
          "Eval-mode logits, shape [batch, classes].")
      .def(
          "evaluate",
          [](const CnnTsa& model, const std::vector<Spectrogram>& data, const std::string& task,
             const FrequencyMask* mask) { return report_dict(evaluate(model, data, parse_task(task), mask)); },
          py::arg("data"), py::arg("task") = "multiclass", py::arg("mask") = nullptr)
      .def("save", &CnnTsa::save)
      .def_static("load", &CnnTsa::load, py::arg("path"), py::arg("expected_hash") = "");

  m.def(
      "train",
      [](const std::vector<Spectrogram>& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
         const FrequencyMask* mask) {
        TrainResult res = [&] {
          py::gil_scoped_release release;
          return train(data, mcfg, tcfg, mask);
        }();
        py::list history;
        for (const auto& e : res.history) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["lr"] = e.lr;
          d["loss"] = e.loss;
          d["train_as"] = e.train.as;
          history.append(d);
        }
        return py::make_tuple(std::move(res.model), history);
      },
      py::arg("data"), py::arg("model_config"), py::arg("train_config"), py::arg("mask") = nullptr,
      "Returns (model, history).");

  m.def(
      "attribute",
      [](const CnnTsa& model, const Spectrogram& spec, int class_id, const std::string& method, int steps) {
        IgConfig ig;
        ig.steps = steps;
        const auto a = attribute(model, spec, class_id, parse_attribution_method(method), ig);
        return to_array(a.frames, a.bands, a.values);
      },
      py::arg("model"), py::arg("spectrogram"), py::arg("class_id"), py::arg("method") = "gradcam",
      py::arg("steps") = 50, "Grad-CAM or Integrated Gradients map, shape [frames, bands].");

  py::class_<FbsConfig>(m, "FbsConfig")
      .def(py::init<>())
      .def_readwrite("lambda_", &FbsConfig::lambda)
      .def_readwrite("r", &FbsConfig::r)
      .def_readwrite("window", &FbsConfig::window)
      .def_readwrite("folds", &FbsConfig::folds)
      .def_readwrite("stop_epsilon", &FbsConfig::stop_epsilon)
      .def_readwrite("min_bands", &FbsConfig::min_bands);

  m.def(
      "fbs_importance",
      [](const std::vector<Spectrogram>& data, const ModelConfig& mcfg, const TrainConfig& tcfg, const FbsConfig& fcfg) {
        py::gil_scoped_release release;
        auto res = fbs_importance(data, mcfg, tcfg, fcfg);
        py::gil_scoped_acquire acquire;
        return fbs_dict(res);
      });
  m.def(
      "fbs_backward",
      [](const std::vector<Spectrogram>& data, const ModelConfig& mcfg, const TrainConfig& tcfg, const FbsConfig& fcfg) {
        py::gil_scoped_release release;
        auto res = fbs_backward(data, mcfg, tcfg, fcfg);
        py::gil_scoped_acquire acquire;
        return fbs_dict(res);
      });
}
