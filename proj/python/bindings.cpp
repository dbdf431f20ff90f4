#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "attn_tutor/explainers.hpp"
#include "attn_tutor/grad_suite.hpp"
#include "attn_tutor/metrics.hpp"
#include "attn_tutor/synthdata.hpp"
#include "attn_tutor/trainer.hpp"

namespace py = pybind11;
using namespace attn_tutor;

namespace {

std::vector<double> as_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

py::array_t<double> grid_array(std::span<const double> values, std::size_t grid) {
  py::array_t<double> out({grid, grid});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

train::TrainConfig config_from(const py::dict& overrides) {
  train::TrainConfig config;
  for (const auto& [key, value] : overrides) config.set(py::str(key), py::str(value));
  config.validate();
  return config;
}

py::dict metrics_dict(const metrics::MetricReport& m) {
  py::dict d;
  d["rank_correlation"] = m.rank_correlation;
  d["emd"] = m.emd;
  d["entropy"] = m.entropy;
  d["overlap"] = m.overlap;
  d["accuracy"] = m.accuracy;
  d["scored_maps"] = m.scored_maps;
  return d;
}

const char* template_name(synth::Template t) {
  switch (t) {
    case synth::Template::color: return "color";
    case synth::Template::count: return "count";
    case synth::Template::existence: return "existence";
  }
  return "?";
}

}  // namespace

PYBIND11_MODULE(_attn_tutor, m) {
  m.doc() = "Attention supervision from explanation maps on a synthetic VQA task.";

  py::register_exception<synth::ContainerError>(m, "ContainerError", PyExc_ValueError);
  py::register_exception<train::TrainingAborted>(m, "TrainingAborted", PyExc_RuntimeError);

  py::class_<synth::Dataset>(m, "Dataset")
      .def("__len__", &synth::Dataset::size)
      .def_readonly("image_size", &synth::Dataset::image_size)
      .def_readonly("grid", &synth::Dataset::grid)
      .def("sample", [](const synth::Dataset& d, std::size_t i) {
        const auto& s = d.samples.at(i);
        py::array_t<std::uint8_t> pixels({std::size_t{3}, d.image_size, d.image_size});
        std::copy(s.pixels.begin(), s.pixels.end(), pixels.mutable_data());
        py::list words;
        for (int t : s.question) words.append(synth::token_name(t));
        py::dict out;
        out["template"] = template_name(s.kind);
        out["question"] = s.question;
        out["words"] = words;
        out["answer"] = s.answer;
        out["answer_name"] = synth::answer_name(s.answer);
        out["pixels"] = pixels;
        out["gt_attention"] = grid_array(s.gt_attention, d.grid);
        return out;
      }, py::arg("index"))
      .def("to_bytes", [](const synth::Dataset& d) { return py::bytes(synth::encode_container(d)); })
      .def_static("from_bytes", [](const py::bytes& b) { return synth::decode_container(std::string(b)); })
      .def("save", [](const synth::Dataset& d, const std::string& path) { synth::write_container(path, d); })
      .def_static("load", [](const std::string& path) { return synth::read_container(path); });

  m.def("generate_dataset", [](std::size_t n, std::uint64_t seed, std::size_t image_size, std::size_t grid,
                               std::size_t max_objects, double background_noise) {
        synth::DatasetSpec spec{n, image_size, grid, max_objects, background_noise, seed};
        return synth::generate(spec);
      },
      py::arg("n") = 2000, py::arg("seed") = 7, py::arg("image_size") = 28, py::arg("grid") = 7,
      py::arg("max_objects") = 5, py::arg("background_noise") = 0.15);

  m.def("rank_correlation", [](py::array_t<double> a, py::array_t<double> b) {
    return metrics::rank_correlation(as_vector(a), as_vector(b));
  });
  m.def("emd", [](py::array_t<double> p, py::array_t<double> q, std::size_t side) {
    return metrics::emd(as_vector(p), as_vector(q), side);
  });
  m.def("sinkhorn_emd", [](py::array_t<double> p, py::array_t<double> q, std::size_t side, double epsilon) {
    return metrics::sinkhorn_emd(as_vector(p), as_vector(q), side, epsilon);
  }, py::arg("p"), py::arg("q"), py::arg("side"), py::arg("epsilon") = 0.01);
  m.def("entropy", [](py::array_t<double> p) { return metrics::entropy(as_vector(p)); });
  m.def("overlap", [](py::array_t<double> p, py::array_t<double> q) { return metrics::overlap(as_vector(p), as_vector(q)); });

  m.def("gradient_suite", [](std::size_t probes, std::uint64_t seed) {
    py::list out;
    for (const auto& r : run_gradient_suite(probes, seed)) out.append(py::make_tuple(r.name, r.max_error, r.passed()));
    return out;
  }, py::arg("probes") = 20, py::arg("seed") = 1);

  m.def("default_config", [] { return train::TrainConfig{}.to_map(); });

  m.def("train", [](const synth::Dataset& data, const py::dict& overrides) {
    const auto config = config_from(overrides);
    train::RunReport report;
    std::vector<double> warm_accuracy;
    {
      py::gil_scoped_release release;
      auto warm = train::warm_start(train::initial_state(data, config), data, config);
      warm_accuracy = warm.validation_accuracy;
      report = train::train_adversarial(warm.state, data, config);
    }
    py::list epochs;
    for (const auto& e : report.epochs) {
      auto d = metrics_dict(e.metrics);
      d["epoch"] = e.epoch;
      d["classification_loss"] = e.classification_loss;
      d["d_loss"] = e.d_loss;
      d["g_loss"] = e.g_loss;
      d["match_loss"] = e.match_loss;
      epochs.append(d);
    }
    py::dict out;
    out["variant"] = report.variant;
    out["warm_accuracy"] = warm_accuracy;
    out["epochs"] = epochs;
    out["checkpoint"] = py::bytes(report.final_checkpoint);
    return out;
  }, py::arg("dataset"), py::arg("config") = py::dict(),
     "Warm start then adversarial or matching training; config maps TrainConfig keys to values.");

  m.def("evaluate", [](const py::bytes& checkpoint, const synth::Dataset& data, double holdout_fraction) {
    const auto state = train::decode_state(std::string(checkpoint), train::model_config_for(data));
    return metrics_dict(train::evaluate(state.model, data, train::split_dataset(data.size(), holdout_fraction).held_out));
  }, py::arg("checkpoint"), py::arg("dataset"), py::arg("holdout_fraction") = 0.2);

  m.def("attention_maps", [](const py::bytes& checkpoint, const synth::Dataset& data, std::vector<std::size_t> indices) {
    const auto state = train::decode_state(std::string(checkpoint), train::model_config_for(data));
    const auto pred = train::predict(state.model, data, indices);
    py::array_t<double> out({indices.size(), data.grid, data.grid});
    std::copy(pred.attention.begin(), pred.attention.end(), out.mutable_data());
    return py::make_tuple(out, pred.answers);
  }, py::arg("checkpoint"), py::arg("dataset"), py::arg("indices"));

  m.def("grad_cam_maps", [](const py::bytes& checkpoint, const synth::Dataset& data, std::vector<std::size_t> indices) {
    const auto state = train::decode_state(std::string(checkpoint), train::model_config_for(data));
    const auto frozen = state.model.snapshot();
    const auto batch = synth::make_batch(data, indices);
    const auto features = frozen.forward(batch.images, batch.tokens, data.question_length);
    const auto maps = explain::grad_cam(frozen, features, batch.labels).maps;
    py::array_t<double> out({indices.size(), data.grid, data.grid});
    std::copy(maps.values().begin(), maps.values().end(), out.mutable_data());
    return out;
  }, py::arg("checkpoint"), py::arg("dataset"), py::arg("indices"));
}
