#include "oqrf/estimator.hpp"

#include "oqrf/parallel.hpp"
#include "oqrf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace oqrf {

Method parse_method(std::string_view name) {
  if (name == "oqrf") return Method::oqrf;
  if (name == "oqrf_nc") return Method::oqrf_nc;
  if (name == "naive") return Method::naive;
  throw ValidationError("unknown method '" + std::string(name) + "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::oqrf: return "oqrf";
    case Method::oqrf_nc: return "oqrf_nc";
    case Method::naive: return "naive";
  }
  return "?";
}

void EstimatorConfig::validate() const {
  SmoothSpec{tau, kernel, bandwidth.value_or(1.0)}.validate();
  forest.validate();
  if (nuisance.c_grid.empty()) throw ValidationError("lambda1_c_grid is empty");
  for (int c : nuisance.c_grid) {
    if (c < 1) throw ValidationError("lambda1_c_grid entries must be >= 1");
  }
  if (nuisance.lambda2_nsim < 100) throw ValidationError("lambda2_nsim must be >= 100");
  if (!(nuisance.qr.tol > 0.0) || nuisance.qr.max_iter < 1) throw ValidationError("invalid solver tolerance");
  if (!(nuisance.lasso.tol > 0.0) || nuisance.lasso.max_sweeps < 1) throw ValidationError("invalid lasso tolerance");
  if (!(theta.grid.step > 0.0) || !(theta.grid.half_width > 0.0) || theta.grid.refine_step < 0.0) {
    throw ValidationError("invalid theta grid");
  }
  if (theta.iterative.max_rounds < 1) throw ValidationError("max_rounds must be >= 1");
  if (boot_trees && *boot_trees < 1) throw ValidationError("boot_trees must be >= 1");
}

SmoothSpec resolve_spec(const EstimatorConfig& cfg, std::size_t n_half, std::size_t p_t, std::size_t p_w) {
  SmoothSpec spec{cfg.tau, cfg.kernel, 0.0};
  if (cfg.bandwidth) {
    spec.h = *cfg.bandwidth;
  } else {
    const double n = static_cast<double>(n_half);
    const double s = std::min(n, std::ceil(cfg.forest.subsample_ratio * n));
    spec.h = bandwidth_rule(cfg.tau, s, n, static_cast<double>(p_t + p_w));
  }
  spec.validate();
  return spec;
}

namespace {

NodeFitOptions node_options(const EstimatorConfig& cfg) {
  NodeFitOptions opts;
  opts.nuisance = cfg.nuisance;
  // splitting always uses the smoothed node fit
  opts.nuisance.outcome_solver = OutcomeSolver::smoothed;
  opts.theta = cfg.theta;
  return opts;
}

}  // namespace

FittedForests fit_forests_on(PanelDataset half1, PanelDataset half2, const EstimatorConfig& cfg, std::uint64_t seed,
                             int threads) {
  cfg.validate();
  FittedForests ff;
  ff.seed = seed;
  ff.spec = resolve_spec(cfg, half1.n_subjects(), half1.p_t(), half1.p_w());
  ff.half1 = std::move(half1);
  ff.half2 = std::move(half2);
  ForestConfig fc = cfg.forest;
  fc.seed = derive_seed(seed, {1});
  ff.forest1 = grow_forest(ff.half1, fc, ff.spec, node_options(cfg), threads);
  fc.seed = derive_seed(seed, {2});
  ff.forest2 = grow_forest(ff.half2, fc, ff.spec, node_options(cfg), threads);
  return ff;
}

FittedForests fit_forests(const PanelDataset& data, const EstimatorConfig& cfg, std::uint64_t seed, int threads) {
  SubjectSplit split = split_subjects(data, derive_seed(seed, {0}));
  FittedForests ff = fit_forests_on(data.subset(split.d1), data.subset(split.d2), cfg, seed, threads);
  ff.split = std::move(split);
  return ff;
}

std::vector<EffectEstimate> estimate_methods(const FittedForests& ff, std::span<const double> x0,
                                             const EstimatorConfig& cfg, std::span<const Method> methods) {
  const Vector a1 = forest_weights(ff.forest1, x0);
  const Vector a2 = forest_weights(ff.forest2, x0);
  std::vector<std::size_t> idx1(ff.half1.n_subjects());
  std::vector<std::size_t> idx2(ff.half2.n_subjects());
  std::iota(idx1.begin(), idx1.end(), std::size_t{0});
  std::iota(idx2.begin(), idx2.end(), std::size_t{0});
  const std::span<const double> alpha1(a1.data(), static_cast<std::size_t>(a1.size()));
  const std::span<const double> alpha2(a2.data(), static_cast<std::size_t>(a2.size()));

  const double n = static_cast<double>(ff.half1.n_subjects());
  const double s = std::min(n, std::ceil(cfg.forest.subsample_ratio * n));
  const std::uint64_t lambda_seed = derive_seed(ff.seed, {3});
  const NuisanceDesigns designs = build_nuisance_designs(ff.half1, idx1, alpha1, cfg.nuisance.penalize_intercept);

  const bool need_smooth = std::any_of(methods.begin(), methods.end(), [](Method m) { return m != Method::oqrf_nc; });
  const bool need_nc = std::any_of(methods.begin(), methods.end(), [](Method m) { return m == Method::oqrf_nc; });

  NuisanceOptions smooth_opts = cfg.nuisance;
  smooth_opts.outcome_solver = OutcomeSolver::smoothed;
  NuisanceOptions nc_opts = cfg.nuisance;
  nc_opts.outcome_solver = OutcomeSolver::nonsmoothed;

  PenaltyConfig pen;
  NuisanceFit smooth_fit;
  NuisanceFit nc_fit;
  if (need_smooth) {
    smooth_fit = tune_and_fit_nuisance(designs, ff.spec, s, n, smooth_opts, lambda_seed, &pen);
    if (need_nc) nc_fit = fit_nuisance(designs, ff.spec, pen, nc_opts);
  } else {
    nc_fit = tune_and_fit_nuisance(designs, ff.spec, s, n, nc_opts, lambda_seed, &pen);
  }

  std::vector<EffectEstimate> out;
  for (Method m : methods) {
    const NuisanceFit& nf = m == Method::oqrf_nc ? nc_fit : smooth_fit;
    const ScoreSystem sys(ff.half2, idx2, alpha2, nf, ff.spec.tau);
    EffectEstimate est;
    est.method = m;
    est.theta_init = nf.theta_init;
    est.max_alpha = sys.max_alpha();
    est.nuisance = nf.diagnostics;
    est.penalties = pen;
    if (m == Method::naive) {
      est.theta = nf.theta_init;
      est.score_norm = sys.eval(est.theta).norm;
    } else {
      ThetaSolution sol = solve_theta(sys, nf.theta_init, cfg.theta);
      est.theta = std::move(sol.theta);
      est.score_norm = sol.score_norm;
      est.rounds = sol.rounds;
      est.grid_resolution = sol.grid_resolution;
    }
    out.push_back(std::move(est));
  }
  return out;
}

EffectEstimate estimate_at(const FittedForests& ff, std::span<const double> x0, const EstimatorConfig& cfg) {
  const Method m[] = {cfg.method};
  return std::move(estimate_methods(ff, x0, cfg, m).front());
}

std::pair<double, double> percentile_interval(std::vector<double> values, double level) {
  if (values.empty()) throw ValidationError("percentile interval of an empty sample");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("level must lie in (0,1)");
  std::sort(values.begin(), values.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return {q(0.5 * (1.0 - level)), q(0.5 * (1.0 + level))};
}

std::vector<Vector> bootstrap_replicate(const FittedForests& ff, std::span<const Vector> queries,
                                        const EstimatorConfig& cfg, std::uint64_t replicate_seed) {
  EstimatorConfig bcfg = cfg;
  const int b_full = cfg.forest.n_trees;
  bcfg.forest.n_trees = cfg.boot_trees.value_or(std::min(b_full, std::max(100, b_full / 5)));
  Rng rng = make_rng(replicate_seed, {0});
  auto resample = [&](const PanelDataset& half) {
    std::vector<std::size_t> draw(half.n_subjects());
    for (auto& d : draw) d = uniform_index(rng, half.n_subjects());
    return half.subset(draw);
  };
  PanelDataset h1 = resample(ff.half1);
  PanelDataset h2 = resample(ff.half2);
  const FittedForests fb = fit_forests_on(std::move(h1), std::move(h2), bcfg, derive_seed(replicate_seed, {1}), 1);
  std::vector<Vector> thetas;
  for (const Vector& q : queries) {
    thetas.push_back(estimate_at(fb, std::span<const double>(q.data(), static_cast<std::size_t>(q.size())), bcfg).theta);
  }
  return thetas;
}

BootstrapResult summarize_bootstrap(std::vector<std::vector<Vector>> replicates, int n_failed, double level) {
  BootstrapResult out;
  out.n_used = static_cast<int>(replicates.size());
  out.n_failed = n_failed;
  const int n_boot = out.n_used + n_failed;
  if (static_cast<double>(n_failed) > 0.1 * static_cast<double>(n_boot) || out.n_used < 1) {
    throw Error("bootstrap: " + std::to_string(n_failed) + " of " + std::to_string(n_boot) + " replicates failed");
  }
  const std::size_t n_queries = replicates.front().size();
  out.draws.assign(n_queries, {});
  for (auto& rep : replicates) {
    if (rep.size() != n_queries) throw SchemaError("bootstrap replicates differ in query count");
    for (std::size_t q = 0; q < n_queries; ++q) out.draws[q].push_back(std::move(rep[q]));
  }
  for (std::size_t q = 0; q < n_queries; ++q) {
    const Index p = out.draws[q].front().size();
    BootstrapInterval iv{Vector(p), Vector(p)};
    for (Index v = 0; v < p; ++v) {
      std::vector<double> vals;
      for (const Vector& d : out.draws[q]) vals.push_back(d(v));
      const auto [lo, hi] = percentile_interval(std::move(vals), level);
      iv.lower(v) = lo;
      iv.upper(v) = hi;
    }
    out.intervals.push_back(std::move(iv));
  }
  return out;
}

BootstrapResult bootstrap_ci(const FittedForests& ff, std::span<const Vector> queries,
                             const EstimatorConfig& cfg, int n_boot, double level, std::uint64_t seed, int threads) {
  if (n_boot < 2) throw ValidationError("n_boot must be >= 2");
  const auto nb = static_cast<std::size_t>(n_boot);
  std::vector<std::optional<std::vector<Vector>>> reps(nb);
  parallel_for(nb, threads, [&](std::size_t b) {
    try {
      reps[b] = bootstrap_replicate(ff, queries, cfg, derive_seed(seed, {b}));
    } catch (const Error&) {
      reps[b].reset();
    }
  });
  std::vector<std::vector<Vector>> ok;
  int failed = 0;
  for (auto& rep : reps) {
    if (rep) {
      ok.push_back(std::move(*rep));
    } else {
      ++failed;
    }
  }
  return summarize_bootstrap(std::move(ok), failed, level);
}

// ---------------------------------------------------------------------------
// Orthogonality probe

Vector probe_mean_score(const ProbeSample& sample, const ProbeDirection& g, double r) {
  const Index n = sample.w.rows();
  const Index p_t = sample.t.cols();
  Vector total = Vector::Zero(p_t);
  const Vector shift = r * (sample.t * g.theta + sample.w * g.beta);
  const Matrix e = sample.t - sample.w * (sample.L + r * g.L);
  for (Index i = 0; i < n; ++i) {
    const double phi = sample.tau - sample.error_cdf(sample.error_quantile + shift(i));
    total.noalias() += phi * e.row(i).transpose();
  }
  return total / static_cast<double>(n);
}

ProbeResult orthogonality_probe(const ProbeSample& sample, const ProbeDirection& g, std::span<const double> r_grid) {
  const Vector base = probe_mean_score(sample, g, 0.0);
  ProbeResult out;
  std::vector<double> lx, ly;
  for (double r : r_grid) {
    const double d = (probe_mean_score(sample, g, r) - base).norm();
    out.r.push_back(r);
    out.delta.push_back(d);
    if (r > 0.0 && d > 0.0) {
      lx.push_back(std::log(r));
      ly.push_back(std::log(d));
    }
  }
  if (lx.size() < 2) {
    out.slope = std::numeric_limits<double>::infinity();
    return out;
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sxy += (lx[k] - mx) * (ly[k] - my);
    sxx += (lx[k] - mx) * (lx[k] - mx);
  }
  out.slope = sxy / sxx;
  return out;
}

std::vector<double> log_grid(double lo, double hi, int n) {
  if (!(lo > 0.0 && hi > lo) || n < 2) throw ValidationError("log grid needs 0 < lo < hi and n >= 2");
  std::vector<double> out;
  for (int k = 0; k < n; ++k) {
    out.push_back(std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * k / (n - 1)));
  }
  return out;
}

}  // namespace oqrf
