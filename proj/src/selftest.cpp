#include "oqrf/selftest.hpp"

#include "oqrf/estimator.hpp"
#include "oqrf/forest.hpp"
#include "oqrf/penalized.hpp"
#include "oqrf/rng.hpp"
#include "oqrf/simlab.hpp"
#include "oqrf/skernel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>

namespace oqrf {

using nlohmann::json;

std::vector<std::string> selftest_names() { return {"gradient", "kkt", "weights", "orthogonality", "shrinkage"}; }

double gradient_check_error(bool flip_score_sign) {
  double worst = 0.0;
  for (KernelType k : {KernelType::gaussian, KernelType::epanechnikov, KernelType::uniform}) {
    for (double tau : {0.2, 0.5, 0.8}) {
      for (double h : {0.3, 1.0}) {
        const SmoothSpec spec{tau, k, h};
        const double delta = 1e-7 * h;
        for (int i = 0; i <= 200; ++i) {
          const double u = -5.0 * h + 10.0 * h * i / 200.0;
          const double fd = (smoothed_loss(spec, u + delta) - smoothed_loss(spec, u - delta)) / (2.0 * delta);
          const double score = flip_score_sign ? -smoothed_score(spec, u) : smoothed_score(spec, u);
          worst = std::max(worst, std::abs(score - fd) / (1.0 + std::abs(score)));
        }
      }
    }
  }
  return worst;
}

OrthogonalitySlopes orthogonality_slopes(int n_pairs, std::uint64_t seed) {
  const int p_w = 21;
  const ProbeSample sample = make_probe_sample(1, 0.5, n_pairs, p_w, 0.5, seed);
  const std::vector<double> r = log_grid(0.02, 0.2, 10);
  OrthogonalitySlopes out;
  out.nuisance = orthogonality_probe(sample, probe_direction("nuisance", p_w), r).slope;
  out.theta = orthogonality_probe(sample, probe_direction("theta", p_w), r).slope;
  const ProbeResult beta = orthogonality_probe(sample, probe_direction("beta", p_w), r);
  out.beta_only_max_delta = *std::max_element(beta.delta.begin(), beta.delta.end());
  return out;
}

std::vector<ShrinkagePair> shrinkage_study(int n_seeds, int n_small, int n_large, int n_trees, int p_w, int queries,
                                           std::uint64_t seed, int threads) {
  EstimatorConfig est;
  est.forest.n_trees = n_trees;
  auto statistic = [&](int n_subjects, std::uint64_t data_seed, std::uint64_t forest_seed,
                       const std::vector<double>& x0s) {
    SimConfig sim;
    sim.setting = 1;
    sim.n = n_subjects / 2;
    sim.p_w = p_w;
    sim.seed = data_seed;
    const PanelDataset data = gen_dataset(sim);
    ForestConfig fc = est.forest;
    fc.seed = forest_seed;
    const SmoothSpec spec = resolve_spec(est, data.n_subjects(), data.p_t(), data.p_w());
    NodeFitOptions opts;
    opts.nuisance = est.nuisance;
    opts.theta = est.theta;
    const Forest forest = grow_forest(data, fc, spec, opts, threads);
    double total = 0.0;
    for (double x0 : x0s) {
      const double q[] = {x0};
      const Vector alpha = forest_weights(forest, q);
      double far = 0.0;
      for (Index i = 0; i < alpha.size(); ++i) {
        if (alpha(i) > 0.0) far = std::max(far, std::abs(x0 - data.x()(i, 0)));
      }
      total += far;
    }
    return total / static_cast<double>(x0s.size());
  };
  std::vector<ShrinkagePair> out;
  for (int k = 0; k < n_seeds; ++k) {
    const auto ks = static_cast<std::uint64_t>(k);
    Rng rng = make_rng(seed, {ks, 2});
    std::vector<double> x0s(static_cast<std::size_t>(queries));
    for (double& x : x0s) x = uniform01(rng);
    ShrinkagePair p;
    p.small = statistic(n_small, derive_seed(seed, {ks, 0}), derive_seed(seed, {ks, 3}), x0s);
    p.large = statistic(n_large, derive_seed(seed, {ks, 1}), derive_seed(seed, {ks, 3}), x0s);
    out.push_back(p);
  }
  return out;
}

namespace {

CheckResult check_gradient(const SelftestOptions& opts) {
  CheckResult r;
  const double err = gradient_check_error(opts.flip_score_sign);
  r.passed = err <= 1e-6;
  r.metrics = {{"max_relative_error", err}, {"tolerance", 1e-6}};
  r.detail = "smoothed score vs central difference of the smoothed loss";
  return r;
}

CheckResult check_kkt(const SelftestOptions& opts) {
  CheckResult r;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    Rng rng = make_rng(opts.seed, {100, s});
    std::normal_distribution<double> nd;
    WeightedDesign d;
    const Index n = 200, p = 40;
    d.d.resize(n, p);
    d.y.resize(n);
    d.weight.resize(n);
    for (Index i = 0; i < n; ++i) {
      d.d(i, 0) = 1.0;
      for (Index j = 1; j < p; ++j) d.d(i, j) = nd(rng);
      d.y(i) = 1.0 + d.d(i, 1) - 0.5 * d.d(i, 2) + nd(rng);
      d.weight(i) = uniform01(rng) / static_cast<double>(n);
    }
    d.intercept = 0;
    d.n_rf = n;
    for (double lam : {0.5, 2.0, 10.0}) {
      const LassoFit fit = weighted_lasso(d, lam);
      worst = std::max(worst, lasso_kkt_gap(d, lam, fit.coef));
    }
  }
  r.passed = worst <= 1e-8;
  r.metrics = {{"max_kkt_gap", worst}, {"tolerance", 1e-8}};
  r.detail = "weighted lasso KKT conditions on random designs";
  return r;
}

CheckResult check_weights(const SelftestOptions& opts) {
  CheckResult r;
  SimConfig sim;
  sim.n = 40;
  sim.p_w = 12;
  sim.seed = derive_seed(opts.seed, {200});
  const PanelDataset data = gen_dataset(sim);
  ForestConfig fc;
  fc.n_trees = 8;
  fc.min_leaf_subjects = 5;
  fc.seed = derive_seed(opts.seed, {201});
  const Forest forest = grow_forest(data, fc, SmoothSpec{0.5, KernelType::gaussian, 0.2}, {}, opts.threads);
  Rng rng = make_rng(opts.seed, {202});
  double worst = 0.0;
  bool nonneg = true;
  bool s2_only = true;
  for (int k = 0; k < 1000; ++k) {
    const double q[] = {uniform01(rng)};
    const Vector a = forest_weights(forest, q);
    worst = std::max(worst, std::abs(a.sum() - 1.0));
    nonneg = nonneg && (a.array() >= 0.0).all();
    for (Index i = 0; i < a.size(); ++i) {
      if (a(i) <= 0.0) continue;
      bool in_s2 = false;
      for (const Tree& t : forest.trees) {
        in_s2 = in_s2 || std::binary_search(t.s2.begin(), t.s2.end(), static_cast<std::size_t>(i));
      }
      s2_only = s2_only && in_s2;
    }
  }
  r.passed = worst <= 1e-12 && nonneg && s2_only;
  r.metrics = {{"max_sum_error", worst}, {"nonnegative", nonneg}, {"estimation_subjects_only", s2_only}};
  r.detail = "forest weights sum to one over 1000 random query points";
  return r;
}

CheckResult check_orthogonality(const SelftestOptions& opts) {
  CheckResult r;
  const OrthogonalitySlopes s = orthogonality_slopes(50000, derive_seed(opts.seed, {300}));
  r.passed = s.nuisance >= 1.5 && s.theta <= 1.3;
  r.metrics = {{"nuisance_slope", s.nuisance}, {"theta_slope", s.theta}, {"beta_only_max_delta", s.beta_only_max_delta}};
  r.detail = "log-log slope of the mean-score change under nuisance and effect perturbations";
  return r;
}

CheckResult check_shrinkage(const SelftestOptions& opts) {
  CheckResult r;
  const auto pairs = shrinkage_study(10, 500, 2000, 10, 21, 50, derive_seed(opts.seed, {400}), opts.threads);
  int wins = 0;
  json small = json::array(), large = json::array();
  for (const auto& p : pairs) {
    wins += p.large <= p.small ? 1 : 0;
    small.push_back(p.small);
    large.push_back(p.large);
  }
  r.passed = wins >= 8;
  r.metrics = {{"decreasing_pairs", wins}, {"pairs", pairs.size()}, {"n500", small}, {"n2000", large}};
  r.detail = "weighted-support radius shrinks from 500 to 2000 subjects";
  return r;
}

}  // namespace

std::vector<CheckResult> run_selftest(const SelftestOptions& opts) {
  const std::vector<std::pair<std::string, std::function<CheckResult(const SelftestOptions&)>>> checks = {
      {"gradient", check_gradient},
      {"kkt", check_kkt},
      {"weights", check_weights},
      {"orthogonality", check_orthogonality},
      {"shrinkage", check_shrinkage},
  };
  if (opts.only && std::none_of(checks.begin(), checks.end(), [&](const auto& c) { return c.first == *opts.only; })) {
    throw ValidationError("unknown selftest check '" + *opts.only + "'");
  }
  std::vector<CheckResult> out;
  for (const auto& [name, fn] : checks) {
    if (opts.only && *opts.only != name) continue;
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = fn(opts);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.name = name;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

json selftest_report(const std::vector<CheckResult>& results) {
  json checks = json::array();
  bool all = true;
  for (const auto& r : results) {
    all = all && r.passed;
    checks.push_back({{"name", r.name},
                      {"status", r.passed ? "pass" : "fail"},
                      {"detail", r.detail},
                      {"seconds", r.seconds},
                      {"metrics", r.metrics.is_null() ? json::object() : r.metrics}});
  }
  return {{"status", all ? "pass" : "fail"}, {"checks", checks}};
}

}  // namespace oqrf
