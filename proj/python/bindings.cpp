#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>

#include "hyperskel/config.hpp"
#include "hyperskel/dataset.hpp"
#include "hyperskel/frechet.hpp"
#include "hyperskel/gradcheck.hpp"
#include "hyperskel/manifold.hpp"
#include "hyperskel/train.hpp"

namespace py = pybind11;
using namespace hyperskel;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  const auto v = t.to_vector();
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

using UnaryFn = Tensor (*)(const Tensor&, const Tensor&);
using BinaryFn = Tensor (*)(const Tensor&, const Tensor&, const Tensor&);

auto unary(UnaryFn f) {
  return [f](const Array& x, double c) { return to_array(f(to_tensor(x), Tensor::scalar(c))); };
}

auto binary(BinaryFn f) {
  return [f](const Array& x, const Array& y, double c) {
    return to_array(f(to_tensor(x), to_tensor(y), Tensor::scalar(c)));
  };
}

TrainConfig make_config(const std::string& text, const std::map<std::string, std::string>& set) {
  TrainConfig cfg = parse_config(text);
  for (const auto& [k, v] : set) apply_setting(cfg, k, v);
  cfg.validate();
  return cfg;
}

py::dict eval_dict(const EvalMetrics& m) {
  py::dict d;
  d["samples"] = m.samples;
  d["top1"] = m.top1;
  d["top5"] = m.top5;
  d["token_accuracy"] = m.token_accuracy;
  d["radius"] = std::vector<double>(m.radius.begin(), m.radius.end());
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Poincare-ball geometry, Frechet means and the skeleton/text trainer.";

  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  m.def("mobius_add", binary(mobius_add), py::arg("x"), py::arg("y"), py::arg("c"));
  m.def("dist", binary(dist), py::arg("u"), py::arg("v"), py::arg("c"));
  m.def("dist0", unary(dist0), py::arg("x"), py::arg("c"));
  m.def("conformal_factor", unary(conformal_factor), py::arg("x"), py::arg("c"));
  m.def("expmap0", unary(expmap0), py::arg("v"), py::arg("c"));
  m.def("logmap0", unary(logmap0), py::arg("y"), py::arg("c"));
  m.def("expmap", binary(expmap), py::arg("x"), py::arg("v"), py::arg("c"));
  m.def("logmap", binary(logmap), py::arg("x"), py::arg("y"), py::arg("c"));
  m.def("mobius_matvec", binary(mobius_matvec), py::arg("M"), py::arg("x"), py::arg("c"));
  m.def("project_to_ball", unary(project_to_ball), py::arg("x"), py::arg("c"));
  m.def("clip_tangent", unary(clip_tangent), py::arg("v"), py::arg("c"));

  m.def(
      "frechet_mean",
      [](const Array& points, const Array& weights, double c, int max_iter, double tol,
         double step, bool record_objective) {
        FrechetConfig cfg;
        cfg.max_iter = max_iter;
        cfg.tol = tol;
        cfg.step = step;
        const auto r = frechet_mean(to_tensor(points), to_tensor(weights), Tensor::scalar(c), cfg,
                                    std::nullopt, record_objective);
        py::dict d;
        d["mean"] = to_array(r.mean);
        d["iterations"] = r.iterations;
        d["converged"] = r.converged;
        if (record_objective) d["objective"] = r.objective;
        return d;
      },
      py::arg("points"), py::arg("weights"), py::arg("c"), py::arg("max_iter") = 50,
      py::arg("tol") = 1e-5, py::arg("step") = 1.0, py::arg("record_objective") = false,
      "Weighted Frechet mean of (N, d) points, or (R, N, d) rows, as a dict.");

  m.def(
      "dump_config",
      [](const std::string& text, const std::map<std::string, std::string>& set) {
        return dump_config(make_config(text, set));
      },
      py::arg("text") = "", py::arg("set") = std::map<std::string, std::string>{},
      "Resolved configuration, key = value per line.");

  m.def(
      "gen_data",
      [](const std::string& path, const std::string& text,
         const std::map<std::string, std::string>& set) {
        const TrainConfig cfg = make_config(text, set);
        const SyntheticDataset data = generate_dataset(cfg.data);
        save_dataset(data, path);
        return data.samples.size();
      },
      py::arg("path"), py::arg("text") = "",
      py::arg("set") = std::map<std::string, std::string>{},
      "Generates the synthetic dataset, writes it as JSONL and returns the sample count.");

  m.def(
      "train",
      [](const std::string& text, const std::map<std::string, std::string>& set,
         const std::string& data_path, bool write_files, std::size_t max_steps) {
        const TrainConfig cfg = make_config(text, set);
        TrainResult r;
        {
          py::gil_scoped_release release;
          const SyntheticDataset data =
              data_path.empty() ? generate_dataset(cfg.data) : load_dataset(data_path);
          TrainOptions opts;
          opts.write_files = write_files;
          opts.max_steps = max_steps;
          r = train(cfg, data, opts);
        }
        py::list history;
        for (const auto& e : r.history) {
          py::dict h;
          h["epoch"] = e.epoch;
          h["ce"] = e.ce;
          h["hyp"] = e.hyp;
          h["total"] = e.total;
          h["alpha"] = e.alpha;
          h["c"] = e.c;
          history.append(h);
        }
        py::dict d;
        d["history"] = history;
        d["eval"] = eval_dict(r.eval);
        d["steps"] = r.steps;
        d["seconds"] = r.seconds;
        d["metrics_path"] = r.metrics_path;
        d["checkpoint_path"] = r.checkpoint_path;
        return d;
      },
      py::arg("text") = "", py::arg("set") = std::map<std::string, std::string>{},
      py::arg("data_path") = "", py::arg("write_files") = false, py::arg("max_steps") = 0,
      "Trains one model; the dataset is generated in memory unless data_path is given.");

  m.def(
      "check_grads",
      [](const std::string& filter, double threshold) {
        GradcheckOptions opts;
        opts.filter = filter;
        opts.threshold = threshold;
        const GradcheckReport r = run_gradcheck(opts);
        py::list out;
        for (const auto& e : r.entries) {
          py::dict d;
          d["name"] = e.name;
          d["worst_error"] = e.worst_error;
          d["threshold"] = e.threshold;
          d["cases"] = e.cases;
          d["passed"] = e.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("filter") = "", py::arg("threshold") = 1e-4,
      "Finite-difference check of every registered op, one dict per op.");

  m.def("registered_ops", &registered_ops);
}
