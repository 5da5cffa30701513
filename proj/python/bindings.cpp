// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "retlab/bench.hpp"
#include "retlab/config_io.hpp"
#include "retlab/flow.hpp"
#include "retlab/train.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

// Configs cross the boundary as plain dicts via the json module.
json to_json_value(const py::dict& d) {
  const auto dumps = py::module_::import("json").attr("dumps");
  return json::parse(dumps(d).cast<std::string>());
}

py::object to_python(const json& j) {
  const auto loads = py::module_::import("json").attr("loads");
  return loads(j.dump());
}

template <typename T>
T parse_config(const py::dict& d) {
  T config;
  json base = config;
  retlab::merge_json(base, to_json_value(d));
  return base.get<T>();
}

py::array_t<float> to_array(const retlab::Tensor& t, std::vector<py::ssize_t> shape) {
  py::array_t<float> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::tuple generate_examples(const py::dict& task, uint64_t stream, uint64_t first, int64_t count) {
  auto config = parse_config<retlab::TaskConfig>(task);
  config.validate();
  const auto ex = retlab::gen_examples(config, stream, first, count);
  const retlab::Batch b = retlab::stack_examples(ex);
  return py::make_tuple(to_array(b.inputs, {b.size, b.seq_len, b.inputs.dim(1)}),
                        to_array(b.targets, {b.size, b.n_query, b.targets.dim(1)}));
}

py::dict run_training(const py::dict& run) {
  auto config = parse_config<retlab::RunConfig>(run);
  retlab::RunResult res;
  {
    py::gil_scoped_release release;
    res = retlab::train(config);
  }
  py::dict out;
  out["train_loss"] = res.metrics.train_loss;
  py::list evals;
  for (const auto& e : res.metrics.evals) {
    py::dict d;
    d["step"] = e.step;
    d["epoch"] = e.epoch;
    d["val_loss"] = e.val_loss;
    d["partial"] = e.partial;
    evals.append(d);
  }
  out["evals"] = evals;
  out["config"] = to_python(json(config));
  return out;
}

py::dict prompt_case(const retlab::bench::PromptCase& c) {
  py::dict d;
  d["formulation"] = retlab::bench::formulation_name(c.formulation);
  d["prompt"] = c.prompt;
  d["correct"] = c.correct;
  d["acceptable"] = c.acceptable;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Chained retrieval tasks, a small transformer and analysis tools.";
  m.attr("__version__") = RETLAB_VERSION;

  py::register_exception<retlab::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<retlab::DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.def("flow_min_layers", &retlab::flow::min_layers, py::arg("steps"));
  m.def("flow_min_layers_closed_form", &retlab::flow::min_layers_closed_form, py::arg("steps"));
  m.def("flow_depth_lower_bound", &retlab::flow::depth_lower_bound, py::arg("steps"));
  m.def(
      "flow_trace",
      [](int64_t steps, int64_t layers) {
        std::vector<std::vector<std::pair<int64_t, int64_t>>> out;
        for (const auto& s : retlab::flow::trace(steps, layers)) {
          auto& row = out.emplace_back();
          for (const auto& iv : s.intervals) row.emplace_back(iv.lo, iv.hi);
        }
        return out;
      },
      py::arg("steps"), py::arg("layers"), "Intervals [lo, hi] per position for t = 0..layers.");

  m.def("generate_examples", &generate_examples, py::arg("task"), py::arg("stream") = retlab::streams::kGen,
        py::arg("first") = 0, py::arg("count") = 1, "Returns (inputs [B, L, 2K], targets [B, N, T]).");
  m.def("train", &run_training, py::arg("run"), "Trains one model; the dict overrides RunConfig defaults.");

  m.def(
      "bench_generate",
      [](const std::string& formulation, int steps, int n_chains, uint64_t seed) {
        retlab::Rng rng(seed);
        return prompt_case(
            retlab::bench::gen_prompt(retlab::bench::parse_formulation(formulation), steps, n_chains, rng));
      },
      py::arg("formulation"), py::arg("steps") = 5, py::arg("n_chains") = 4, py::arg("seed") = 0);
  m.def(
      "bench_solve",
      [](const std::string& formulation, const std::string& prompt) {
        return retlab::bench::solve_prompt(retlab::bench::parse_formulation(formulation), prompt);
      },
      py::arg("formulation"), py::arg("prompt"));
  m.def(
      "bench_grade",
      [](const py::dict& pcase, const std::string& answer) {
        retlab::bench::PromptCase c;
        c.formulation = retlab::bench::parse_formulation(pcase["formulation"].cast<std::string>());
        c.correct = pcase["correct"].cast<std::string>();
        c.acceptable = pcase["acceptable"].cast<std::vector<std::string>>();
        return retlab::bench::grade_name(retlab::bench::grade(c, answer));
      },
      py::arg("case"), py::arg("answer"));
}
