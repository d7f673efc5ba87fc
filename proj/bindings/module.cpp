// Python bindings for the gesture-recognition continual-learning lab.
// Exposes the main operations: dataset generation/IO, windowing, single
// continual runs, the accuracy/forgetting metrics, and sweep summaries.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "owgr/envelope.hpp"
#include "owgr/metrics.hpp"
#include "owgr/synth.hpp"
#include "owgr/taskproto.hpp"
#include "owgr/trainer.hpp"

namespace py = pybind11;
using namespace owgr;

namespace {

py::array_t<double> tensor_to_numpy(const TensorBuffer& t) {
  py::array_t<double> out(t.shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

TensorBuffer numpy_to_tensor(const py::array_t<double, py::array::c_style |
                                                           py::array::forcecast>& a) {
  TensorBuffer t;
  t.shape.assign(a.shape(), a.shape() + a.ndim());
  t.data.assign(a.data(), a.data() + a.size());
  return t;
}

py::dict report_to_dict(const MetricsReport& rep) {
  py::dict d;
  d["case"] = rep.case_name;
  d["method"] = rep.method;
  d["params"] = rep.params;
  d["seed"] = rep.seed;
  d["avg_acc"] = rep.avg_acc;
  d["forgetting"] = rep.forgetting;
  d["forgetting_expect"] = rep.forgetting_expect;
  d["rows"] = rep.rows;
  d["flags"] = rep.flags;
  return d;
}

RunSpec make_spec(const std::string& case_name, const std::string& method,
                  std::uint64_t seed, std::optional<std::size_t> num_tasks,
                  const std::string& ordering,
                  std::optional<std::string> granularity,
                  std::optional<std::size_t> gestures_per_task,
                  std::size_t replay_M, std::uint64_t master_seed) {
  RunSpec spec;
  spec.kind = case_from_string(case_name);
  spec.method = strategy_from_string(method);
  spec.seed = seed;
  spec.master_seed = master_seed;
  spec.replay_M = replay_M;
  spec.params.ordering = ordering_from_string(ordering);
  spec.params.num_tasks = num_tasks;
  spec.params.gestures_per_task = gestures_per_task;
  if (granularity) {
    if (*granularity == "coarse") {
      spec.params.granularity = Granularity::Coarse;
    } else if (*granularity == "fine") {
      spec.params.granularity = Granularity::Fine;
    } else {
      throw ParamError("unknown granularity: " + *granularity);
    }
  }
  return spec;
}

}  // namespace

PYBIND11_MODULE(_owgr, m) {
  m.doc() = "wrist-IMU continual-learning lab (C++ core)";

  py::register_exception<Error>(m, "OwgrError", PyExc_RuntimeError);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("seed", [](const Dataset& d) { return d.seed; })
      .def_property_readonly(
          "num_instances",
          [](const Dataset& d) { return d.instances.size(); })
      .def("__len__", [](const Dataset& d) { return d.instances.size(); })
      .def("instance",
           [](const Dataset& d, std::size_t i) {
             if (i >= d.instances.size()) throw py::index_error();
             const Instance& inst = d.instances[i];
             py::dict out;
             out["record_id"] = inst.record_id;
             out["gesture_id"] = inst.gesture_id;
             out["context_id"] = inst.context_id;
             out["user_id"] = inst.user_id;
             out["signal"] = tensor_to_numpy(inst.signal);
             return out;
           },
           py::arg("i"));

  m.def(
      "generate_dataset",
      [](std::size_t per_class_per_context, std::uint64_t seed) {
        GenCounts counts;
        counts.per_class_per_context = per_class_per_context;
        return gen_dataset(default_catalog(), counts, seed);
      },
      py::arg("per_class_per_context") = 12, py::arg("seed") = 0,
      py::call_guard<py::gil_scoped_release>());

  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("dir"));
  m.def("load_dataset", &load_dataset, py::arg("dir"),
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "window_segments",
      [](const py::array_t<double, py::array::c_style |
                                       py::array::forcecast>& signal,
         std::size_t win, std::size_t step) {
        auto segments = window_segments(numpy_to_tensor(signal), win, step);
        py::list out;
        for (const auto& s : segments) out.append(tensor_to_numpy(s));
        return out;
      },
      py::arg("signal"), py::arg("win") = kWindowLen,
      py::arg("step") = kWindowStep);

  m.def(
      "accuracy_metrics",
      [](const std::vector<std::vector<double>>& rows) {
        AccuracyMatrix acc;
        for (std::size_t k = 0; k < rows.size(); ++k)
          acc.record_row(k, rows[k]);
        return report_to_dict(make_report(acc));
      },
      py::arg("rows"),
      "Average accuracy A_k and forgetting F_k from a lower-triangular "
      "accuracy matrix (row k holds accuracies on tasks 0..k).");

  m.def(
      "run",
      [](const Dataset& dataset, const std::string& case_name,
         const std::string& method, std::uint64_t seed,
         std::optional<std::size_t> num_tasks, const std::string& ordering,
         std::optional<std::string> granularity,
         std::optional<std::size_t> gestures_per_task, std::size_t replay_M,
         std::uint64_t master_seed, std::size_t max_epochs,
         std::size_t probe_epochs) {
        RunSpec spec =
            make_spec(case_name, method, seed, num_tasks, ordering,
                      granularity, gestures_per_task, replay_M, master_seed);
        TrainConfig train;
        train.max_epochs = max_epochs;
        train.probe_epochs = probe_epochs;
        MetricsReport rep;
        {
          py::gil_scoped_release release;
          rep = run_single(spec, dataset, train);
        }
        return report_to_dict(rep);
      },
      py::arg("dataset"), py::arg("case"), py::arg("method"),
      py::arg("seed") = 0, py::arg("num_tasks") = std::nullopt,
      py::arg("ordering") = "random", py::arg("granularity") = std::nullopt,
      py::arg("gestures_per_task") = std::nullopt,
      py::arg("replay_M") = 1000, py::arg("master_seed") = 0,
      py::arg("max_epochs") = 100, py::arg("probe_epochs") = 30,
      "Train one method through one task sequence; returns the accuracy "
      "matrix plus A_k / F_k curves and any flags.");

  m.def(
      "quantile",
      [](std::vector<double> xs, double p) {
        return quantile_inclusive(xs, p);
      },
      py::arg("xs"), py::arg("p"),
      "Inclusive linear-interpolation quantile (matches the sweep summary).");

  m.def(
      "summarize_results_csv",
      [](const std::string& csv_text) {
        ResultsTable table = ResultsTable::from_csv(csv_text);
        py::list out;
        for (const auto& row : summarize(table)) {
          py::dict d;
          d["method"] = row.method;
          d["value"] = row.value;
          d["metric"] = row.metric;
          d["mean"] = row.stats.mean;
          d["median"] = row.stats.median;
          d["q1"] = row.stats.q1;
          d["q3"] = row.stats.q3;
          d["min"] = row.stats.min;
          d["max"] = row.stats.max;
          d["n"] = row.stats.n;
          out.append(d);
        }
        return out;
      },
      py::arg("csv_text"),
      "Per-(method, value) box statistics over the final-k rows of a "
      "results.csv produced by the sweep harness.");
}
