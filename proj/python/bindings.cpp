#include "oqrf/config.hpp"
#include "oqrf/estimator.hpp"
#include "oqrf/selftest.hpp"
#include "oqrf/simlab.hpp"
#include "oqrf/skernel.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

namespace py = pybind11;
using namespace oqrf;

namespace {

// Settings arrive as a JSON text so Python dicts go through the same
// key validation as CLI config files.
RunConfig config_from_text(const std::string& text, std::uint64_t seed) {
  RunConfig cfg = text.empty() ? RunConfig{} : config_from_json(nlohmann::json::parse(text));
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

py::dict dataset_to_dict(const PanelDataset& d) {
  Eigen::VectorXi subject(static_cast<Index>(d.n_rows()));
  RowMatrix x_rows(static_cast<Index>(d.n_rows()), static_cast<Index>(d.p_x()));
  for (std::size_t i = 0; i < d.n_subjects(); ++i) {
    for (std::size_t r = d.row_begin(i); r < d.row_end(i); ++r) {
      subject(static_cast<Index>(r)) = static_cast<int>(i);
      x_rows.row(static_cast<Index>(r)) = d.x().row(static_cast<Index>(i));
    }
  }
  py::dict out;
  out["subject"] = subject;
  out["y"] = d.y();
  out["t"] = d.t();
  out["w"] = d.w();
  out["x"] = x_rows;
  return out;
}

// Rows of one subject must be contiguous; x is read from each subject's first row.
PanelDataset dataset_from_arrays(const Eigen::VectorXi& subject, const Vector& y, const RowMatrix& t,
                                 const RowMatrix& w, const RowMatrix& x) {
  const Index n = y.size();
  if (subject.size() != n || t.rows() != n || w.rows() != n || x.rows() != n) {
    throw SchemaError("subject, y, t, w and x need the same number of rows");
  }
  std::vector<SubjectRecord> subjects;
  for (Index r = 0; r < n; ++r) {
    if (r == 0 || subject(r) != subject(r - 1)) {
      SubjectRecord s;
      s.id = std::to_string(subject(r));
      s.x.assign(x.row(r).data(), x.row(r).data() + x.cols());
      subjects.push_back(std::move(s));
    }
    Observation o;
    o.y = y(r);
    o.t.assign(t.row(r).data(), t.row(r).data() + t.cols());
    o.w.assign(w.row(r).data(), w.row(r).data() + w.cols());
    subjects.back().obs.push_back(std::move(o));
  }
  return PanelDataset::from_subjects(subjects);
}

py::dict simulate(int setting, int n, int p_w, const std::string& error, std::uint64_t seed) {
  SimConfig sim;
  sim.setting = setting;
  sim.n = n;
  sim.p_w = p_w;
  sim.error = parse_error_model(error);
  sim.seed = seed;
  return dataset_to_dict(gen_dataset(sim));
}

py::list fit(const Eigen::VectorXi& subject, const Vector& y, const RowMatrix& t, const RowMatrix& w,
             const RowMatrix& x, const RowMatrix& queries, std::uint64_t seed, const std::string& config, int threads) {
  const RunConfig cfg = config_from_text(config, seed);
  const PanelDataset data = dataset_from_arrays(subject, y, t, w, x);
  if (queries.cols() != static_cast<Index>(data.p_x())) throw SchemaError("queries need one column per modifier");
  FittedForests ff;
  {
    py::gil_scoped_release release;
    ff = fit_forests(data, cfg.est, seed, threads);
  }
  std::vector<Vector> points;
  for (Index q = 0; q < queries.rows(); ++q) points.emplace_back(queries.row(q).transpose());
  std::optional<BootstrapResult> boot;
  if (cfg.n_boot > 0) {
    py::gil_scoped_release release;
    boot = bootstrap_ci(ff, points, cfg.est, cfg.n_boot, cfg.level, derive_seed(seed, {4}), threads);
  }
  py::list out;
  for (std::size_t q = 0; q < points.size(); ++q) {
    const Vector& p = points[q];
    const EffectEstimate e =
        estimate_at(ff, std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), cfg.est);
    py::dict rec;
    rec["x0"] = p;
    rec["theta_hat"] = e.theta;
    rec["theta_init"] = e.theta_init;
    rec["score_norm"] = e.score_norm;
    rec["max_alpha"] = e.max_alpha;
    rec["method"] = to_string(e.method);
    if (boot) {
      rec["ci_lower"] = boot->intervals[q].lower;
      rec["ci_upper"] = boot->intervals[q].upper;
      rec["n_boot_used"] = boot->n_used;
    }
    out.append(rec);
  }
  return out;
}

py::list monte_carlo(const std::vector<std::string>& methods, int replicates, std::uint64_t seed,
                     const std::string& config, int threads) {
  RunConfig cfg = config_from_text(config, seed);
  cfg.sim.seed = seed;
  std::vector<Method> ms;
  for (const auto& m : methods) ms.push_back(parse_method(m));
  std::vector<McReport> reports;
  {
    py::gil_scoped_release release;
    reports = run_mc(cfg.sim, ms, replicates, eval_grid(cfg.sim.setting), cfg.est, threads);
  }
  py::list out;
  for (const McReport& r : reports) {
    py::dict rec;
    rec["method"] = to_string(r.method);
    rec["bias"] = r.metrics.bias;
    rec["root_mise"] = r.metrics.root_mise;
    rec["grid"] = r.grid;
    rec["truth"] = r.truth;
    rec["replicates"] = r.replicates;
    rec["curves"] = r.curves;
    rec["n_failed"] = r.failures.size();
    out.append(rec);
  }
  return out;
}

std::string selftest(std::optional<std::string> only, std::uint64_t seed, int threads) {
  SelftestOptions opts;
  opts.only = std::move(only);
  opts.seed = seed;
  opts.threads = threads;
  std::vector<CheckResult> results;
  {
    py::gil_scoped_release release;
    results = run_selftest(opts);
  }
  return selftest_report(results).dump();
}

}  // namespace

PYBIND11_MODULE(_oqrf, m) {
  m.doc() = "Orthogonal quantile regression forests";
  m.attr("__version__") = kVersion;

  // later registrations are tried first, so the base class goes first
  py::register_exception<Error>(m, "OqrfError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);

  m.def("check_loss", [](double tau, double u) { return check_loss(tau, u); }, py::arg("tau"), py::arg("u"));
  m.def(
      "smoothed_loss",
      [](double u, double tau, double h, const std::string& kernel) {
        return smoothed_loss({tau, parse_kernel(kernel), h}, u);
      },
      py::arg("u"), py::arg("tau"), py::arg("h"), py::arg("kernel") = "gaussian");
  m.def(
      "smoothed_score",
      [](double u, double tau, double h, const std::string& kernel) {
        return smoothed_score({tau, parse_kernel(kernel), h}, u);
      },
      py::arg("u"), py::arg("tau"), py::arg("h"), py::arg("kernel") = "gaussian");
  m.def("bandwidth_rule", &bandwidth_rule, py::arg("tau"), py::arg("s"), py::arg("n"), py::arg("p"));
  m.def(
      "true_theta", [](int setting, const std::vector<double>& x) { return true_theta(setting, x); },
      py::arg("setting"), py::arg("x"));
  m.def("simulate", &simulate, py::arg("setting") = 1, py::arg("n") = 400, py::arg("p_w") = 201,
        py::arg("error") = "normal", py::arg("seed") = 0);
  m.def("_fit", &fit, py::arg("subject"), py::arg("y"), py::arg("t"), py::arg("w"), py::arg("x"),
        py::arg("queries"), py::arg("seed"), py::arg("config"), py::arg("threads"));
  m.def("_monte_carlo", &monte_carlo, py::arg("methods"), py::arg("replicates"), py::arg("seed"),
        py::arg("config"), py::arg("threads"));
  m.def("_selftest", &selftest, py::arg("only"), py::arg("seed"), py::arg("threads"));
}
