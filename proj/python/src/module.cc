// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Python bindings. Configs and structured results cross the boundary as JSON
// text; the kprobe package wraps them as dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "kprobe/ablation.h"
#include "kprobe/attribution.h"
#include "kprobe/checkpoint.h"
#include "kprobe/corpus.h"
#include "kprobe/errors.h"
#include "kprobe/model.h"
#include "kprobe/parallel.h"
#include "kprobe/pipeline.h"
#include "kprobe/report.h"

namespace py = pybind11;
using Json = nlohmann::json;

namespace kprobe {
namespace {

NeuronMask mask_from(const NeuronLayout& layout, const std::vector<int>& keep) {
  if (keep.size() != layout.size())
    throw ConfigError("keep list has " + std::to_string(keep.size()) + " entries, expected " +
                      std::to_string(layout.size()));
  NeuronMask m = NeuronMask::all_keep(layout);
  for (std::size_t i = 0; i < keep.size(); ++i) m.keep[i] = keep[i] != 0;
  return m;
}

std::vector<int> keep_list(const NeuronMask& m) { return {m.keep.begin(), m.keep.end()}; }

Dataset dataset_from(const Parameters& p, const std::vector<TokenSequence>& tokens,
                     const std::vector<int>& labels) {
  if (tokens.size() != labels.size()) throw ConfigError("tokens and labels differ in length");
  std::vector<LabeledSequence> ex;
  ex.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) ex.push_back({tokens[i], labels[i]});
  return Dataset::from_examples(std::move(ex), p.config.num_classes);
}

PipelineConfig pipeline_config(const std::string& text) {
  auto c = Json::parse(text).get<PipelineConfig>();
  c.validate();
  return c;
}

Stage stage_from(const std::string& name) {
  for (Stage s : {Stage::GenCorpus, Stage::Train, Stage::Attribute, Stage::Select, Stage::Evaluate,
                  Stage::Report, Stage::Check})
    if (stage_name(s) == name) return s;
  throw ConfigError("unknown stage '" + name + "'");
}

}  // namespace
}  // namespace kprobe

PYBIND11_MODULE(_kprobe, m) {
  using namespace kprobe;
  m.doc() = "knowledge-neuron probing core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<MissingArtifact>(m, "MissingArtifact", PyExc_FileNotFoundError);

  m.def("set_num_threads", &set_num_threads, py::arg("threads"));
  m.def("num_threads", &num_threads);
  m.def("kept_count_for", &kept_count_for, py::arg("fraction"), py::arg("total"));

  m.def("generate_corpus", [](const std::string& config) {
    return corpus_to_json(generate_corpus(Json::parse(config).get<CorpusConfig>())).dump();
  }, py::arg("config_json"));

  py::class_<Parameters>(m, "Model")
      .def_static("init", [](const std::string& config, std::uint64_t seed) {
        const auto c = Json::parse(config).get<ModelConfig>();
        c.validate();
        return init_params(c, seed);
      }, py::arg("config_json"), py::arg("seed"))
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
      .def("save", [](const Parameters& p, const std::filesystem::path& path) { save_checkpoint(p, path); },
           py::arg("path"))
      .def("config_json", [](const Parameters& p) { return Json(p.config).dump(); })
      .def_property_readonly("num_values", &Parameters::num_values)
      .def_property_readonly("num_neurons", [](const Parameters& p) { return p.config.neuron_layout().size(); })
      .def("probabilities", [](const Parameters& p, const TokenSequence& tokens,
                               const std::optional<std::vector<int>>& keep) {
        py::gil_scoped_release release;
        return keep ? class_probabilities(p, tokens, mask_from(p.config.neuron_layout(), *keep))
                    : class_probabilities(p, tokens);
      }, py::arg("tokens"), py::arg("keep") = py::none())
      .def("correct_class_prob", [](const Parameters& p, const TokenSequence& tokens, int label) {
        return correct_class_prob(p, {tokens, label});
      }, py::arg("tokens"), py::arg("label"))
      .def("apply_mask", [](const Parameters& p, const std::vector<int>& keep) {
        return apply_mask(p, mask_from(p.config.neuron_layout(), keep));
      }, py::arg("keep"))
      .def("accuracy", [](const Parameters& p, const std::vector<TokenSequence>& tokens,
                          const std::vector<int>& labels) {
        const Dataset d = dataset_from(p, tokens, labels);
        py::gil_scoped_release release;
        return accuracy(p, d);
      }, py::arg("tokens"), py::arg("labels"))
      .def("__eq__", [](const Parameters& a, const Parameters& b) { return a == b; });

  m.def("activation_scores", [](const Parameters& p, const std::vector<TokenSequence>& tokens,
                                const std::vector<int>& labels) {
    const Dataset d = dataset_from(p, tokens, labels);
    py::gil_scoped_release release;
    return activation_scores(p, d).scores;
  }, py::arg("model"), py::arg("tokens"), py::arg("labels"));

  m.def("ig_scores", [](const Parameters& p, const std::vector<TokenSequence>& tokens,
                        const std::vector<int>& labels, int steps, const std::string& rule) {
    IGConfig cfg;
    cfg.riemann_steps = steps;
    cfg.rule = rule == "left" ? RiemannRule::Left : RiemannRule::Midpoint;
    cfg.validate();
    const Dataset d = dataset_from(p, tokens, labels);
    py::gil_scoped_release release;
    return ig_scores(p, d, cfg).scores;
  }, py::arg("model"), py::arg("tokens"), py::arg("labels"), py::arg("steps") = 32,
     py::arg("rule") = "midpoint");

  m.def("ig_joint", [](const Parameters& p, const TokenSequence& tokens, int label, int steps) {
    IGConfig cfg;
    cfg.riemann_steps = steps;
    cfg.validate();
    py::gil_scoped_release release;
    return ig_joint(p, {tokens, label}, cfg);
  }, py::arg("model"), py::arg("tokens"), py::arg("label"), py::arg("steps") = 256);

  m.def("select_by_score", [](const std::vector<double>& scores, int num_layers, int width, double fraction) {
    ScoreTable t;
    t.layout = {num_layers, width};
    t.scores = scores;
    return keep_list(select_by_score(t, fraction));
  }, py::arg("scores"), py::arg("num_layers"), py::arg("width"), py::arg("fraction"));

  m.def("select_random", [](int num_layers, int width, double fraction, std::uint64_t seed) {
    return keep_list(select_random({num_layers, width}, fraction, seed));
  }, py::arg("num_layers"), py::arg("width"), py::arg("fraction"), py::arg("seed"));

  m.def("heatmap", [](const std::vector<int>& keep, int num_layers, int width, std::size_t bin_size) {
    const HeatmapDensity h = heatmap(mask_from({num_layers, width}, keep), bin_size);
    std::vector<std::vector<double>> rows;
    for (const auto& r : h.rows) rows.push_back(r.bins);
    return rows;
  }, py::arg("keep"), py::arg("num_layers"), py::arg("width"), py::arg("bin_size"));

  m.def("default_config", [] { return Json(PipelineConfig{}).dump(); });
  m.def("resolve_config", [](const std::string& config) { return Json(pipeline_config(config)).dump(); },
        py::arg("config_json"));
  m.def("run_stage", [](const std::string& stage, const std::string& config) {
    const PipelineConfig c = pipeline_config(config);
    const Stage s = stage_from(stage);
    py::gil_scoped_release release;
    run_stage(c, s);
  }, py::arg("stage"), py::arg("config_json"));
  m.def("run_check", [](const std::string& config) {
    const PipelineConfig c = pipeline_config(config);
    CheckResult r;
    {
      py::gil_scoped_release release;
      r = run_check(c);
    }
    return check_json(r).dump();
  }, py::arg("config_json"));
}
