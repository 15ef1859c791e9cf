#include "oqrf/simlab.hpp"

#include "oqrf/parallel.hpp"
#include "oqrf/skernel.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace oqrf {

ErrorModel parse_error_model(std::string_view name) {
  if (name == "normal") return ErrorModel::normal;
  if (name == "t3") return ErrorModel::t3;
  if (name == "cauchy") return ErrorModel::cauchy;
  throw ValidationError("unknown error model '" + std::string(name) + "'");
}

std::string to_string(ErrorModel e) {
  switch (e) {
    case ErrorModel::normal: return "normal";
    case ErrorModel::t3: return "t3";
    case ErrorModel::cauchy: return "cauchy";
  }
  return "?";
}

void SimConfig::validate() const {
  if (setting < 1 || setting > 3) throw ValidationError("setting must be 1, 2 or 3");
  if (n < 10) throw ValidationError("n must be >= 10");
  if (p_w < 12) throw ValidationError("p_w must be >= 12 (the settings use 11 confounder slots)");
  if (!(std::abs(rho_w) < 1.0) || !(std::abs(rho_eps) < 1.0)) throw ValidationError("AR(1) parameters must lie in (-1,1)");
}

std::size_t modifier_dim(int setting) { return setting == 3 ? 2 : 1; }

namespace {

double theta1(double x) {
  if (x < 0.3) return 2.0 + x;
  if (x < 0.6) return 2.3 + 6.0 * (x - 0.3);
  return 4.1 - 3.0 * (x - 0.6);
}

double theta2(double x) {
  if (x < 0.2) return 3.0 * x * x + 1.0;
  if (x < 0.6) return 4.0 * x * x + 8.0 * x - 0.64;
  return x + 5.0;
}

void check_unit(double x) {
  if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("modifier value outside [0,1]");
}

}  // namespace

double true_theta(int setting, std::span<const double> x) {
  if (x.size() != modifier_dim(setting)) throw SchemaError("modifier has wrong dimension for the setting");
  check_unit(x[0]);
  switch (setting) {
    case 1:
    case 2: return theta1(x[0]);
    case 3:
      if (x[1] == 0.0) return theta1(x[0]);
      if (x[1] == 1.0) return theta2(x[0]);
      throw ValidationError("setting 3 needs x2 in {0,1}");
    default: throw ValidationError("setting must be 1, 2 or 3");
  }
}

Vector true_beta(int setting, double x, int p_w) {
  Vector b = Vector::Zero(p_w);
  if (setting == 2) {
    b(1) = x / 3.0 + 1.0;
    b(2) = std::sin(std::numbers::pi * x);
    b(3) = 2.0 * (1.0 - x) * (1.0 - x);
    b(4) = 1.0;
    b(5) = 1.0;
  } else {
    b.segment(1, 5).setOnes();
  }
  return b;
}

Vector true_ell(int setting, double x, int p_w) {
  Vector l = Vector::Zero(p_w);
  if (setting == 2) {
    l(6) = (x * x * x + 1.0) / 2.0;
    l(7) = std::cos((6.0 * x - 5.0) * std::numbers::pi / 3.0);
    l(8) = 1.0 / (1.0 + x);
    l(9) = -1.0;
    l(10) = -1.0;
  } else {
    l(6) = 1.0;
    l(7) = 1.0;
    l(8) = -1.0;
    l(9) = -1.0;
    l(10) = -1.0;
  }
  return l;
}

namespace {

// Stationary AR(1) recursion: row k of the Cholesky factor of rho^|p-q|.
void ar1_fill(double* out, int m, double rho, std::normal_distribution<double>& nd, Rng& rng) {
  const double c = std::sqrt(1.0 - rho * rho);
  for (int k = 0; k < m; ++k) out[k] = k == 0 ? nd(rng) : rho * out[k - 1] + c * nd(rng);
}

}  // namespace

Vector gen_errors(ErrorModel model, int m, double rho, Rng& rng) {
  if (m < 1) throw ValidationError("error vector length must be >= 1");
  std::normal_distribution<double> nd;
  Vector z(m);
  ar1_fill(z.data(), m, rho, nd, rng);
  if (model == ErrorModel::normal) return z;
  const int df = model == ErrorModel::t3 ? 3 : 1;
  double chi2 = 0.0;
  for (int k = 0; k < df; ++k) {
    const double g = nd(rng);
    chi2 += g * g;
  }
  return z / std::sqrt(chi2 / df);
}

PanelDataset gen_dataset(const SimConfig& cfg) {
  cfg.validate();
  const int n_total = 2 * cfg.n;
  std::vector<SubjectRecord> subjects(static_cast<std::size_t>(n_total));
  for (int i = 0; i < n_total; ++i) {
    Rng rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(i)});
    std::normal_distribution<double> nd;
    SubjectRecord& s = subjects[static_cast<std::size_t>(i)];
    s.id = std::to_string(i + 1);
    s.x.push_back(uniform01(rng));
    if (cfg.setting == 3) s.x.push_back(uniform01(rng) < 0.5 ? 0.0 : 1.0);
    const int m = 3 + static_cast<int>(uniform_index(rng, 4));
    const Vector beta = true_beta(cfg.setting, s.x[0], cfg.p_w);
    const Vector ell = true_ell(cfg.setting, s.x[0], cfg.p_w);
    const double theta = true_theta(cfg.setting, s.x);
    s.obs.resize(static_cast<std::size_t>(m));
    for (auto& o : s.obs) {
      o.w.assign(static_cast<std::size_t>(cfg.p_w), 1.0);
      ar1_fill(o.w.data() + 1, cfg.p_w - 1, cfg.rho_w, nd, rng);
      const double e = 2.0 * uniform01(rng) - 1.0;
      const Eigen::Map<const Vector> w(o.w.data(), cfg.p_w);
      o.t = {ell.dot(w) + e};
      o.y = theta * o.t[0] + beta.dot(w);
    }
    const Vector eps = gen_errors(cfg.error, m, cfg.rho_eps, rng);
    for (int j = 0; j < m; ++j) s.obs[static_cast<std::size_t>(j)].y += eps(j);
  }
  return PanelDataset::from_subjects(subjects);
}

std::vector<std::vector<double>> eval_grid(int setting) {
  std::vector<std::vector<double>> out;
  const std::vector<double> levels = setting == 3 ? std::vector<double>{0.0, 1.0} : std::vector<double>{};
  auto point = [](int k) { return 0.02 + 0.96 * static_cast<double>(k) / 49.0; };
  if (levels.empty()) {
    for (int k = 0; k < 50; ++k) out.push_back({point(k)});
  } else {
    for (double l : levels) {
      for (int k = 0; k < 50; ++k) out.push_back({point(k), l});
    }
  }
  return out;
}

Metrics metrics(const std::vector<std::vector<double>>& curves, const std::vector<double>& truth) {
  if (curves.empty()) throw ValidationError("metrics need at least one replicate");
  const std::size_t g = truth.size();
  if (g == 0) throw ValidationError("metrics need at least one grid point");
  double bias = 0.0;
  double mise = 0.0;
  const auto r = static_cast<double>(curves.size());
  for (std::size_t k = 0; k < g; ++k) {
    double mean_err = 0.0;
    double mean_sq = 0.0;
    for (const auto& c : curves) {
      if (c.size() != g) throw SchemaError("curve length does not match the grid");
      const double e = c[k] - truth[k];
      mean_err += e;
      mean_sq += e * e;
    }
    bias += std::abs(mean_err / r);
    mise += mean_sq / r;
  }
  return {bias / static_cast<double>(g), std::sqrt(mise / static_cast<double>(g))};
}

std::vector<McReport> run_mc(const SimConfig& sim, std::span<const Method> methods, int replicates,
                             const std::vector<std::vector<double>>& grid, const EstimatorConfig& est, int threads) {
  sim.validate();
  est.validate();
  if (replicates < 1) throw ValidationError("replicates must be >= 1");
  if (methods.empty()) throw ValidationError("no method requested");
  std::vector<double> truth;
  for (const auto& x : grid) truth.push_back(true_theta(sim.setting, x));

  struct Outcome {
    std::vector<std::vector<double>> curves;  // [method][grid]
    std::string error;
  };
  std::vector<Outcome> outcomes(static_cast<std::size_t>(replicates));
  parallel_for(outcomes.size(), threads, [&](std::size_t r) {
    Outcome& out = outcomes[r];
    try {
      SimConfig sc = sim;
      sc.seed = derive_seed(sim.seed, {r, 0});
      const PanelDataset data = gen_dataset(sc);
      const FittedForests ff = fit_forests(data, est, derive_seed(sim.seed, {r, 1}), 1);
      out.curves.assign(methods.size(), std::vector<double>(grid.size()));
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const auto ests = estimate_methods(ff, grid[k], est, methods);
        for (std::size_t m = 0; m < methods.size(); ++m) out.curves[m][k] = ests[m].theta(0);
      }
    } catch (const Error& e) {
      out.curves.clear();
      out.error = e.what();
    }
  });

  std::vector<McReport> reports(methods.size());
  for (std::size_t m = 0; m < methods.size(); ++m) {
    McReport& rep = reports[m];
    rep.method = methods[m];
    rep.grid = grid;
    rep.truth = truth;
    for (std::size_t r = 0; r < outcomes.size(); ++r) {
      if (outcomes[r].curves.empty()) {
        rep.failures.push_back({static_cast<int>(r), outcomes[r].error});
      } else {
        rep.replicates.push_back(static_cast<int>(r));
        rep.curves.push_back(outcomes[r].curves[m]);
      }
    }
    if (rep.curves.empty()) {
      rep.metrics = {std::nan(""), std::nan("")};
    } else {
      rep.metrics = metrics(rep.curves, truth);
    }
  }
  return reports;
}

ProbeSample make_probe_sample(int setting, double x0, int n_pairs, int p_w, double tau, std::uint64_t seed) {
  if (n_pairs < 1) throw ValidationError("probe sample needs n_pairs >= 1");
  if (p_w < 12) throw ValidationError("p_w must be >= 12");
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0,1)");
  ProbeSample s;
  s.tau = tau;
  s.theta = Vector::Constant(1, true_theta(setting, std::vector<double>(modifier_dim(setting), x0)));
  s.beta = true_beta(setting, x0, p_w);
  s.L = true_ell(setting, x0, p_w);
  s.error_cdf = normal_cdf;
  // invert the normal CDF by bisection
  double lo = -10.0, hi = 10.0;
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < tau ? lo : hi) = mid;
  }
  s.error_quantile = tau == 0.5 ? 0.0 : 0.5 * (lo + hi);

  const Index rows = 2 * static_cast<Index>(n_pairs);
  s.w.resize(rows, p_w);
  s.t.resize(rows, 1);
  Rng rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> w(static_cast<std::size_t>(p_w), 1.0);
  for (Index i = 0; i < n_pairs; ++i) {
    ar1_fill(w.data() + 1, p_w - 1, 0.5, nd, rng);
    const double e = 2.0 * uniform01(rng) - 1.0;
    const Eigen::Map<const Eigen::RowVectorXd> wr(w.data(), p_w);
    const double lw = wr.dot(s.L.col(0).transpose());
    s.w.row(2 * i) = wr;
    s.w.row(2 * i + 1) = wr;
    s.t(2 * i, 0) = lw + e;
    s.t(2 * i + 1, 0) = lw - e;
  }
  return s;
}

ProbeDirection probe_direction(std::string_view kind, int p_w, int p_t) {
  ProbeDirection g{Vector::Zero(p_t), Vector::Zero(p_w), Matrix::Zero(p_w, p_t)};
  const double unit = 1.0 / std::sqrt(10.0);
  if (kind == "theta") {
    g.theta.setConstant(1.0 / std::sqrt(static_cast<double>(p_t)));
    return g;
  }
  const bool beta = kind == "nuisance" || kind == "beta";
  const bool ell = kind == "nuisance" || kind == "L";
  if (!beta && !ell) throw ValidationError("unknown probe direction '" + std::string(kind) + "'");
  if (beta) g.beta.segment(1, 10).setConstant(unit);
  if (ell) g.L.block(1, 0, 10, p_t).setConstant(unit);
  return g;
}

}  // namespace oqrf
