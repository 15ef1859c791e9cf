#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oqrf/penalized.hpp"
#include "oqrf/rng.hpp"
#include "oqrf/simlab.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

using namespace oqrf;
using namespace oqrf::oracles;

TEST_CASE("lasso: unpenalized fit is weighted least squares") {
  WeightedDesign d = toy_design(40, 4, 1);
  const LassoFit fit = weighted_lasso(d, 0.0);
  const Vector resid = d.y - d.d * fit.coef;
  const Vector normal_eq = d.d.transpose() * (d.weight.asDiagonal() * resid);
  // the solver stops once the KKT gap is below its 1e-8 tolerance
  CHECK(normal_eq.cwiseAbs().maxCoeff() <= 1e-8);
  const Matrix g = d.d.transpose() * d.weight.asDiagonal() * d.d;
  const Vector direct = g.ldlt().solve(d.d.transpose() * d.weight.asDiagonal() * d.y);
  CHECK((direct - fit.coef).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("lasso: one covariate soft-thresholds in closed form") {
  WeightedDesign d;
  d.d.resize(4, 1);
  d.d << 1, -2, 0.5, 3;
  const double dd = d.d.col(0).squaredNorm();
  d.y = 2.0 * d.d.col(0);
  d.y(0) += 0.3;
  d.y(2) -= 0.6;  // keeps <d,y>/<d,d> = 2
  d.weight = Vector::Ones(4);
  d.n_rf = 4;
  REQUIRE(d.d.col(0).dot(d.y) / dd == doctest::Approx(2.0).epsilon(1e-15));
  // pen/2 = 0.5 <d,d>  ->  coef = (2 <d,d> - 0.5 <d,d>) / <d,d> = 1.5
  const double lambda = dd * static_cast<double>(d.n_rf);
  CHECK(weighted_lasso(d, lambda).coef(0) == doctest::Approx(1.5).epsilon(1e-10));
  CHECK(weighted_lasso(d, 10 * lambda).coef(0) == 0.0);
}

TEST_CASE("lasso: huge penalty leaves the weighted mean intercept") {
  WeightedDesign d = toy_design(30, 5, 2);
  const LassoFit fit = weighted_lasso(d, 1e9);
  CHECK(fit.coef.tail(4).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fit.coef(0) == doctest::Approx(d.weight.dot(d.y) / d.weight.sum()).epsilon(1e-12));
}

TEST_CASE("lasso: KKT conditions and determinism") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    WeightedDesign d = toy_design(60, 25, seed);
    for (double lambda : {0.1, 1.0, 5.0, 30.0}) {
      const LassoFit a = weighted_lasso(d, lambda);
      CHECK(lasso_kkt_gap(d, lambda, a.coef) <= 1e-8);
      // independent KKT check from residuals
      const Vector grad = -2.0 * d.d.transpose() * (d.weight.asDiagonal() * (d.y - d.d * a.coef));
      const double pen = lambda / static_cast<double>(d.n_rf);
      for (Index j = 1; j < grad.size(); ++j) {
        if (a.coef(j) == 0.0) {
          CHECK(std::abs(grad(j)) <= pen + 1e-8);
        } else {
          CHECK(std::abs(grad(j) + (a.coef(j) > 0 ? pen : -pen)) <= 1e-8);
        }
      }
      CHECK(std::abs(grad(0)) <= 1e-8);
      const LassoFit b = weighted_lasso(d, lambda);
      CHECK((a.coef.array() == b.coef.array()).all());
    }
  }
}

TEST_CASE("lasso: non-convergence reports the last iterate") {
  WeightedDesign d = toy_design(60, 25, 3);
  LassoOptions opts;
  opts.max_sweeps = 1;
  opts.tol = 1e-15;
  try {
    weighted_lasso(d, 0.1, opts);
    FAIL("expected non-convergence");
  } catch (const ConvergenceError& e) {
    CHECK(e.last_iterate().size() == 25);
    CHECK(e.gap() > 1e-15);
  }
}

TEST_CASE("grid oracle: lasso with two and three coefficients") {
  for (int p : {2, 3}) {
    WeightedDesign d = toy_design(6, p, 10 + p);
    for (double lambda : {0.0, 2.0, 8.0}) {
      const LassoFit fit = weighted_lasso(d, lambda);
      const double oracle = grid_oracle([&](const Vector& b) { return lasso_objective(d, lambda, b); }, p,
                                        p == 2 ? 1e-3 : 0.05);
      CHECK(lasso_objective(d, lambda, fit.coef) <= oracle + 1e-6);
      CHECK(oracle <= lasso_objective(d, lambda, fit.coef) + 1e-6);
    }
  }
}

TEST_CASE("grid oracle: smoothed QR with two and three coefficients") {
  for (int p : {2, 3}) {
    WeightedDesign d = toy_design(5, p, 20 + p);
    for (KernelType k : {KernelType::gaussian, KernelType::epanechnikov, KernelType::uniform}) {
      for (double lambda : {0.0, 1.5}) {
        const SmoothSpec spec{0.4, k, 0.5};
        const QrFit fit = weighted_l1_smoothed_qr(d, spec, lambda);
        const double got = sqr_objective(d, spec, lambda, fit.coef);
        CHECK(got == doctest::Approx(fit.objective).epsilon(1e-12));
        const double oracle =
            grid_oracle([&](const Vector& b) { return sqr_objective(d, spec, lambda, b); }, p, p == 2 ? 1e-3 : 0.05);
        CHECK(got <= oracle + 1e-6);
        CHECK(oracle <= got + 1e-6);
      }
    }
  }
}

TEST_CASE("smoothed QR: symmetry, monotone trace, optimality residual") {
  SUBCASE("intercept only on symmetric data") {
    WeightedDesign d;
    d.d = Matrix::Ones(2, 1);
    d.y = Vector(2);
    d.y << -1, 1;
    d.weight = Vector::Constant(2, 0.5);
    d.intercept = 0;
    d.n_rf = 2;
    const QrFit fit = weighted_l1_smoothed_qr(d, {0.5, KernelType::gaussian, 0.3}, 0.0);
    CHECK(std::abs(fit.coef(0)) <= 1e-7);
  }
  SUBCASE("odd symmetry at the median") {
    WeightedDesign d = toy_design(12, 3, 4);
    WeightedDesign both;
    both.d.resize(24, 3);
    both.y.resize(24);
    both.weight.resize(24);
    both.d << d.d, -d.d;
    both.y << d.y, -d.y;
    both.weight << d.weight, d.weight;
    both.n_rf = 24;
    both.d.col(0).tail(12).setConstant(-1.0);
    const SmoothSpec spec{0.5, KernelType::gaussian, 0.4};
    const QrFit a = weighted_l1_smoothed_qr(both, spec, 1.0);
    WeightedDesign neg = both;
    neg.y = -both.y;
    const QrFit b = weighted_l1_smoothed_qr(neg, spec, 1.0);
    CHECK((a.coef + b.coef).cwiseAbs().maxCoeff() <= 1e-6);
  }
  SUBCASE("trace and residual") {
    WeightedDesign d = toy_design(80, 10, 5);
    const SmoothSpec spec{0.3, KernelType::epanechnikov, 0.2};
    const QrFit fit = weighted_l1_smoothed_qr(d, spec, 3.0);
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
      CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1]);
    }
    CHECK(fit.step_norm <= 1e-7);
    const QrFit again = weighted_l1_smoothed_qr(d, spec, 3.0);
    CHECK((fit.coef.array() == again.coef.array()).all());
  }
  SUBCASE("zero total weight") {
    WeightedDesign d = toy_design(5, 2, 6);
    d.weight.setZero();
    CHECK_THROWS_AS(weighted_l1_smoothed_qr(d, {0.5, KernelType::gaussian, 0.3}, 0.0), ValidationError);
  }
  SUBCASE("iteration cap") {
    WeightedDesign d = toy_design(80, 10, 5);
    QrOptions opts;
    opts.max_iter = 2;
    CHECK_THROWS_AS(weighted_l1_smoothed_qr(d, {0.3, KernelType::gaussian, 0.05}, 0.0, opts), ConvergenceError);
  }
}

TEST_CASE("non-smoothed QR by continuation") {
  SUBCASE("intercept only returns a weighted quantile") {
    Rng rng = make_rng(8, {1});
    std::normal_distribution<double> nd;
    WeightedDesign d;
    const int n = 41;
    d.d = Matrix::Ones(n, 1);
    d.y.resize(n);
    for (int i = 0; i < n; ++i) d.y(i) = 3.0 * nd(rng);
    d.weight = Vector::Ones(n);
    d.intercept = 0;
    d.n_rf = n;
    const QrFit fit = weighted_l1_qr(d, 0.3, 0.0);
    std::vector<double> ys(d.y.data(), d.y.data() + n);
    std::sort(ys.begin(), ys.end());
    // the 0.3 sample quantile: smallest y with at least 30% of the mass at or below it
    const double q = ys[static_cast<std::size_t>(std::ceil(0.3 * n)) - 1];
    const auto it = std::lower_bound(ys.begin(), ys.end(), q);
    const double gap_lo = it == ys.begin() ? 1.0 : q - *(it - 1);
    const double gap_hi = (it + 1) == ys.end() ? 1.0 : *(it + 1) - q;
    CHECK(fit.coef(0) >= q - gap_lo);
    CHECK(fit.coef(0) <= q + gap_hi);
  }
  SUBCASE("three collinear points are interpolated") {
    WeightedDesign d;
    d.d.resize(3, 2);
    d.d << 1, 0, 1, 1, 1, 2;
    d.y = Vector(3);
    d.y << 1, 3, 5;
    d.weight = Vector::Ones(3);
    d.intercept = 0;
    d.n_rf = 3;
    const QrFit fit = weighted_l1_qr(d, 0.5, 0.0);
    CHECK(fit.coef(0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(fit.coef(1) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(cqr_objective(d, 0.5, 0.0, fit.coef) <= 1e-6);
  }
  SUBCASE("agrees with the smoothed solver at h = 0.1") {
    WeightedDesign d = toy_design(200, 2, 22);
    const QrFit exact = weighted_l1_qr(d, 0.4, 1.5);
    const QrFit smooth = weighted_l1_smoothed_qr(d, {0.4, KernelType::gaussian, 0.1}, 1.5);
    CHECK((exact.coef - smooth.coef).cwiseAbs().maxCoeff() <= 0.05);
  }
  SUBCASE("final stage solves the h_min problem; check-loss gap is O(h_min)") {
    for (int p : {2, 3}) {
      WeightedDesign d = toy_design(7, p, 30 + p);
      const ContinuationOptions cont;
      const QrFit fit = weighted_l1_qr(d, 0.4, 1.0, {}, nullptr, cont);
      const SmoothSpec last{0.4, cont.kernel, cont.h_min};
      const double oracle = grid_oracle([&](const Vector& b) { return sqr_objective(d, last, 1.0, b); }, p,
                                        p == 2 ? 1e-3 : 0.05);
      CHECK(sqr_objective(d, last, 1.0, fit.coef) <= oracle + 1e-6);
      const double check_oracle =
          grid_oracle([&](const Vector& b) { return cqr_objective(d, 0.4, 1.0, b); }, p, p == 2 ? 1e-3 : 0.05);
      // |rho_{tau h} - rho_tau| <= h E|Z| per unit weight, twice for the comparison
      const double bound = 2.0 * cont.h_min * std::sqrt(2.0 / M_PI) * d.weight.sum();
      CHECK(cqr_objective(d, 0.4, 1.0, fit.coef) <= check_oracle + bound);
    }
  }
}

TEST_CASE("lambda1 selection by BIC") {
  SUBCASE("returned penalty belongs to the grid") {
    WeightedDesign d = toy_design(100, 10, 1);
    const auto choice = select_lambda1(d, 50, 100, 10);
    const double unit = std::sqrt(50 * std::log(10.0) / 100) / 100;
    CHECK(choice.c >= 1);
    CHECK(choice.c <= 10);
    CHECK(choice.lambda == doctest::Approx(100 * choice.c * unit).epsilon(1e-14));
    CHECK(choice.bic.size() == 10);
    CHECK(*std::min_element(choice.bic.begin(), choice.bic.end()) == choice.bic[choice.c - 1]);
  }
  auto projection_design = [](std::uint64_t seed, bool signal) {
    SimConfig sim;
    sim.n = 250;
    sim.p_w = 201;
    sim.seed = seed;
    const PanelDataset data = gen_dataset(sim);
    std::vector<std::size_t> all(data.n_subjects());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const std::vector<double> alpha(all.size(), 1.0 / static_cast<double>(all.size()));
    NuisanceDesigns nd = build_nuisance_designs(data, all, alpha, false);
    WeightedDesign d = nd.treatment[0];
    if (!signal) {
      Rng rng = make_rng(seed, {11});
      for (Index r = 0; r < d.rows(); ++r) d.y(r) = 2.0 * uniform01(rng) - 1.0;
    }
    return d;
  };
  SUBCASE("pure noise selects the empty model") {
    int empty = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const WeightedDesign d = projection_design(seed, false);
      const auto choice = select_lambda1(d, 250, 500, 201);
      Index active = 0;
      for (Index j = 1; j < choice.fit.coef.size(); ++j) active += choice.fit.coef(j) != 0.0;
      empty += active == 0;
    }
    CHECK(empty >= 9);
  }
  SUBCASE("strong sparse signal keeps its support") {
    int covered = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const WeightedDesign d = projection_design(seed, true);
      const auto choice = select_lambda1(d, 250, 500, 201);
      const Vector ell = true_ell(1, 0.5, 201);
      bool ok = true;
      for (Index j = 0; j < ell.size(); ++j) {
        if (ell(j) != 0.0) ok = ok && choice.fit.coef(j) != 0.0;
      }
      covered += ok;
    }
    CHECK(covered >= 9);
  }
}

TEST_CASE("lambda2 pivotal rule") {
  SUBCASE("zero design") {
    WeightedDesign d = toy_design(10, 3, 1);
    d.d.setZero();
    CHECK(select_lambda2(d, 0.5, 200, 1) == 0.0);
  }
  SUBCASE("exact scale equivariance") {
    WeightedDesign d = toy_design(30, 40, 2);
    WeightedDesign d2 = d;
    d2.d *= 2.0;
    for (double tau : {0.5, 0.3}) CHECK(select_lambda2(d2, tau, 300, 9) == 2.0 * select_lambda2(d, tau, 300, 9));
  }
  SUBCASE("tiny design against the exact distribution") {
    // subjects with m = 3 and m = 5, alpha = 1/2 each, one column of ones
    WeightedDesign d;
    d.d = Matrix::Ones(8, 1);
    d.y = Vector::Zero(8);
    d.weight.resize(8);
    for (int r = 0; r < 8; ++r) d.weight(r) = r < 3 ? 0.5 / 3 : 0.5 / 5;
    d.n_rf = 2;
    const double lambda2 = select_lambda2(d, 0.5, 100000, 77);
    std::vector<double> atoms;
    for (int mask = 0; mask < 256; ++mask) {
      double s = 0.0;
      for (int r = 0; r < 8; ++r) s += d.weight(r) * (0.5 - ((mask >> r) & 1));
      atoms.push_back(2.0 * std::abs(s));
    }
    std::sort(atoms.begin(), atoms.end());
    auto quantile = [&](double p) { return atoms[static_cast<std::size_t>(std::ceil(p * 256.0)) - 1]; };
    const double se = std::sqrt(0.9 * 0.1 / 100000.0);
    CHECK(lambda2 / 1.1 >= quantile(0.9 - 3 * se) - 1e-12);
    CHECK(lambda2 / 1.1 <= quantile(0.9 + 3 * se) + 1e-12);
  }
  SUBCASE("vectorized kernel equals a plain transcription on the same stream") {
    for (double tau : {0.5, 0.25}) {
      WeightedDesign d = toy_design(17, 70, 3);
      d.weight(4) = 0.0;
      const int n_sim = 150;
      std::vector<double> draws;
      Rng rng(5);
      const auto threshold = static_cast<std::uint64_t>(std::ldexp(tau, 32));
      const Index p = d.cols();
      const Index words = ((p + 31) / 32 * 32 + 63) / 64;
      for (int s = 0; s < n_sim; ++s) {
        std::vector<std::vector<int>> bit;
        for (Index r = 0; r < d.rows(); ++r) {
          if (d.weight(r) <= 0.0) continue;
          std::vector<int> row(static_cast<std::size_t>(words * 64), 0);
          if (tau == 0.5) {
            for (Index q = 0; q < words; ++q) {
              const std::uint64_t u = rng();
              for (int b = 0; b < 64; ++b) row[static_cast<std::size_t>(q * 64 + b)] = (u >> b) & 1U;
            }
          } else {
            for (Index t = 0; t < p; t += 2) {
              const std::uint64_t u = rng();
              row[static_cast<std::size_t>(t)] = (u & 0xffffffffULL) < threshold;
              if (t + 1 < p) row[static_cast<std::size_t>(t + 1)] = (u >> 32) < threshold;
            }
          }
          bit.push_back(row);
        }
        double m = 0.0;
        for (Index t = 0; t < p; ++t) {
          double base = 0.0, acc = 0.0;
          std::size_t k = 0;
          for (Index r = 0; r < d.rows(); ++r) {
            if (d.weight(r) <= 0.0) continue;
            const double c = d.weight(r) * d.d(r, t);
            base += c;
            if (bit[k++][static_cast<std::size_t>(t)]) acc += c;
          }
          m = std::max(m, std::abs(tau * base - acc));
        }
        draws.push_back(static_cast<double>(d.n_rf) * m);
      }
      std::sort(draws.begin(), draws.end());
      const double pos = 0.9 * (n_sim - 1);
      const auto lo = static_cast<std::size_t>(pos);
      const double q = draws[lo] + (pos - lo) * (draws[lo + 1] - draws[lo]);
      CHECK(select_lambda2(d, tau, n_sim, 5) == doctest::Approx(1.1 * q).epsilon(1e-12));
    }
  }
}

TEST_CASE("nuisance fit") {
  SUBCASE("noiseless projection is recovered") {
    Rng rng = make_rng(3, {1});
    std::normal_distribution<double> nd;
    std::vector<SubjectRecord> subjects;
    const Vector ell = (Vector(4) << 0.5, 1.0, 0.0, -2.0).finished();
    for (int i = 0; i < 60; ++i) {
      SubjectRecord s;
      s.id = std::to_string(i);
      s.x = {uniform01(rng)};
      for (int j = 0; j < 3; ++j) {
        Observation o;
        o.w = {1.0, nd(rng), nd(rng), nd(rng)};
        o.t = {Eigen::Map<const Vector>(o.w.data(), 4).dot(ell)};
        o.y = o.t[0] + nd(rng);
        s.obs.push_back(o);
      }
      subjects.push_back(s);
    }
    const PanelDataset data = PanelDataset::from_subjects(subjects);
    std::vector<std::size_t> all(60);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const std::vector<double> alpha(60, 1.0 / 60);
    const NuisanceDesigns nd_designs = build_nuisance_designs(data, all, alpha, false);
    PenaltyConfig cfg;
    cfg.lambda1 = {1e-9};
    cfg.lambda2 = 0.1;
    const NuisanceFit fit = fit_nuisance(nd_designs, {0.5, KernelType::gaussian, 0.3}, cfg);
    CHECK((fit.L.col(0) - ell).cwiseAbs().maxCoeff() <= 1e-6);
  }
  SUBCASE("weights concentrated on one subject") {
    SimConfig sim;
    sim.n = 10;
    sim.p_w = 12;
    sim.seed = 4;
    const PanelDataset data = gen_dataset(sim);
    std::vector<std::size_t> all(data.n_subjects());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<double> alpha(all.size(), 0.0);
    alpha[3] = 1.0;
    const NuisanceDesigns many = build_nuisance_designs(data, all, alpha, false);
    const std::vector<std::size_t> only{3};
    const std::vector<double> one{1.0};
    const NuisanceDesigns single = build_nuisance_designs(data, only, one, false);
    PenaltyConfig cfg;
    cfg.lambda1 = {0.05};
    cfg.lambda2 = 0.05;
    const SmoothSpec spec{0.5, KernelType::gaussian, 0.3};
    const NuisanceFit a = fit_nuisance(many, spec, cfg);
    const NuisanceFit b = fit_nuisance(single, spec, cfg);
    CHECK((a.L - b.L).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.theta_init - b.theta_init).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("Setting 1 at x0 = 0.5 recovers beta") {
    int good = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      SimConfig sim;
      sim.n = 500;
      sim.p_w = 201;
      sim.seed = seed;
      const PanelDataset data = gen_dataset(sim);
      std::vector<std::size_t> all(data.n_subjects());
      std::iota(all.begin(), all.end(), std::size_t{0});
      const std::vector<double> alpha(all.size(), 1.0 / static_cast<double>(all.size()));
      const NuisanceDesigns designs = build_nuisance_designs(data, all, alpha, false);
      NuisanceOptions opts;
      const double n = static_cast<double>(all.size());
      const NuisanceFit fit =
          tune_and_fit_nuisance(designs, {0.5, KernelType::gaussian, bandwidth_rule(0.5, n / 2, n, 202)}, n / 2, n,
                                opts, seed);
      // theta varies with x, so only beta (fixed in Setting 1) is compared
      good += (fit.beta - true_beta(1, 0.5, 201)).norm() <= 0.5;
    }
    CHECK(good >= 8);
  }
}
