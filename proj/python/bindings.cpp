#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lwfs/checkpoint.hpp"
#include "lwfs/config.hpp"
#include "lwfs/data.hpp"
#include "lwfs/experiment.hpp"
#include "lwfs/gradcheck.hpp"
#include "lwfs/resource.hpp"
#include "lwfs/schedule.hpp"
#include "lwfs/ssl.hpp"

namespace py = pybind11;
using namespace lwfs;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Tensor<double>({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict range_dict(const LayerRange& r) {
  py::dict d;
  d["first"] = r.first;
  d["last"] = r.last;
  return d;
}

py::dict plan_dict(const RoundPlan& p) {
  py::dict d;
  d["round"] = p.round;
  d["stage"] = p.stage;
  d["stage_start"] = p.stage_start;
  d["active_depth"] = p.active_depth;
  d["frozen_prefix"] = p.frozen_prefix;
  d["trainable"] = range_dict(p.trainable);
  d["download"] = range_dict(p.download);
  d["upload"] = range_dict(p.upload);
  return d;
}

py::dict eval_dict(const EvalReport& r) {
  py::dict d;
  d["mode"] = r.mode;
  d["accuracy"] = r.accuracy;
  d["correct"] = r.correct;
  d["total"] = r.total;
  return d;
}

template <typename T>
py::dict model_dict(const ModelState<T>& m) {
  py::dict d;
  for (const auto* g : m.groups()) {
    for (const auto& t : g->tensors) d[py::str(g->name + "/" + t.name)] = to_array(t.value);
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_lwfs, m) {
  m.doc() = "Layer-wise federated self-supervised training";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<PartitionError>(m, "PartitionError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigFileError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  py::class_<RunConfig>(m, "Config")
      .def_static("from_file", &parse_config, py::arg("path"))
      .def_static("from_text", [](const std::string& text) { return parse_config_text(text); }, py::arg("text"))
      .def("to_toml", &RunConfig::to_toml)
      .def_property(
          "seed", [](const RunConfig& c) { return c.train.seed; },
          [](RunConfig& c, std::uint64_t s) {
            c.train.seed = s;
            c.probe.seed = s;
          })
      .def_property(
          "workers", [](const RunConfig& c) { return c.train.workers; },
          [](RunConfig& c, std::size_t w) { c.train.workers = w; })
      .def_property_readonly("strategy", [](const RunConfig& c) { return to_string(c.train.fed.strategy); })
      .def_property_readonly("num_layers", [](const RunConfig& c) { return c.train.model.num_layers; })
      .def_property_readonly("rounds", [](const RunConfig& c) { return c.train.fed.rounds; });

  m.def("allocate_rounds",
        [](std::size_t stages, std::size_t rounds, const std::string& allocation) {
          return allocate_rounds(stages, rounds, allocation_from_string(allocation));
        },
        py::arg("stages"), py::arg("rounds"), py::arg("allocation") = "uniform");

  m.def("schedule",
        [](const std::string& strategy, std::size_t stages, std::size_t rounds, const std::string& allocation) {
          const auto s = make_schedule(strategy_from_string(strategy), stages, rounds, allocation_from_string(allocation));
          py::list plans;
          for (std::size_t r = 1; r <= s.total_rounds(); ++r) plans.append(plan_dict(s.plan(r)));
          return plans;
        },
        py::arg("strategy"), py::arg("stages"), py::arg("rounds"), py::arg("allocation") = "uniform",
        "Per-round plans: stage, depth, frozen prefix and the trainable, download and upload layer ranges.");

  m.def("comm_totals",
        [](const RunConfig& cfg) {
          const auto& f = cfg.train.fed;
          const auto t = comm_totals(cfg.train.model,
                                     make_schedule(f.strategy, cfg.train.model.num_layers, f.rounds, f.allocation));
          py::dict d;
          d["bytes_down"] = t.bytes_down;
          d["bytes_up"] = t.bytes_up;
          d["encoder_down"] = t.encoder_down;
          d["encoder_up"] = t.encoder_up;
          return d;
        },
        py::arg("config"), "Per-client communication over the whole schedule.");

  m.def("infonce", [](const Array& q, const Array& k, double tau) { return infonce_value(to_tensor(q), to_tensor(k), tau); },
        py::arg("q"), py::arg("k"), py::arg("tau") = 0.2);
  m.def("alignment",
        [](const Array& z1, const Array& z2, const Array& g1, const Array& g2, double tau) {
          return alignment_value(to_tensor(z1), to_tensor(z2), to_tensor(g1), to_tensor(g2), tau);
        },
        py::arg("z1_local"), py::arg("z2_local"), py::arg("z1_global"), py::arg("z2_global"), py::arg("tau") = 0.2);

  m.def("partition_dirichlet",
        [](const std::vector<int>& labels, std::size_t num_clients, double beta, std::uint64_t seed) {
          return partition_dirichlet(labels, num_clients, beta, seed).clients;
        },
        py::arg("labels"), py::arg("num_clients"), py::arg("beta"), py::arg("seed") = 0);
  m.def("partition_uniform",
        [](std::size_t n, std::size_t num_clients, std::uint64_t seed) {
          return partition_uniform(n, num_clients, seed).clients;
        },
        py::arg("n"), py::arg("num_clients"), py::arg("seed") = 0);

  m.def("gradcheck",
        [](std::uint64_t seed) {
          GradCheckOptions opt;
          opt.seed = seed;
          const auto rep = run_gradcheck_suite(opt);
          py::dict d;
          d["passed"] = rep.passed();
          d["cases"] = rep.cases.size();
          d["tolerance"] = rep.tolerance;
          d["worst_name"] = rep.worst().name;
          d["worst_error"] = rep.worst().max_rel_error;
          return d;
        },
        py::arg("seed") = 0);

  m.def("run",
        [](const RunConfig& cfg, const std::filesystem::path& out_dir) {
          ExperimentOutcome out;
          {
            py::gil_scoped_release release;
            out = run_experiment(cfg, out_dir);
          }
          py::dict d;
          d["exit_code"] = out.exit_code;
          d["summary"] = py::module_::import("json").attr("loads")(out.summary_json);
          d["probe"] = out.probe ? py::object(eval_dict(*out.probe)) : py::none();
          d["baseline"] = out.baseline ? py::object(eval_dict(*out.baseline)) : py::none();
          return d;
        },
        py::arg("config"), py::arg("out_dir"),
        "Runs federation and the linear probe, writing all artifacts into out_dir.");

  m.def("load_checkpoint",
        [](const std::filesystem::path& path) {
          // Either stored precision widens losslessly to double.
          return model_dict(load_checkpoint<double>(path));
        },
        py::arg("path"), "Tensors of a checkpoint keyed by \"group/tensor\".");
}
