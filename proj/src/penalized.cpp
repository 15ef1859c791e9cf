#include "oqrf/penalized.hpp"

#include "oqrf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace oqrf {

void WeightedDesign::validate() const {
  if (d.rows() == 0 || d.cols() == 0) throw ValidationError("design is empty");
  if (weight.size() != d.rows() || y.size() != d.rows()) throw ValidationError("design rows disagree");
  if (intercept && (*intercept < 0 || *intercept >= d.cols())) throw ValidationError("intercept column out of range");
  if (n_rf < 1) throw ValidationError("n_rf must be >= 1");
  double total = 0.0;
  for (Index r = 0; r < weight.size(); ++r) {
    if (!(weight(r) >= 0.0) || !std::isfinite(weight(r))) throw ValidationError("row weights must be finite and >= 0");
    total += weight(r);
  }
  if (!(total > 0.0)) throw ValidationError("design has zero total weight");
}

namespace {

double soft_threshold(double v, double a) {
  if (v > a) return v - a;
  if (v < -a) return v + a;
  return 0.0;
}

bool is_penalized(const WeightedDesign& d, Index j) { return !d.intercept || *d.intercept != j; }

double l1_penalized(const WeightedDesign& d, const Vector& z) {
  double s = 0.0;
  for (Index j = 0; j < z.size(); ++j) {
    if (is_penalized(d, j)) s += std::abs(z(j));
  }
  return s;
}

// Sufficient statistics of the weighted least-squares part.
struct Gram {
  Matrix G;  // D' W D
  Vector c;  // D' W y
  double yy = 0.0;

  explicit Gram(const WeightedDesign& d) {
    const Index p = d.cols();
    const Vector sw = d.weight.cwiseSqrt();
    const Matrix dw = d.d.array().colwise() * sw.array();
    G = Matrix::Zero(p, p);
    G.selfadjointView<Eigen::Lower>().rankUpdate(dw.transpose());
    G.triangularView<Eigen::StrictlyUpper>() = G.transpose();
    c = d.d.transpose() * d.weight.cwiseProduct(d.y);
    yy = d.weight.dot(d.y.cwiseProduct(d.y));
  }
};

double kkt_gap_from_gradient(const WeightedDesign& d, const Vector& grad, const Vector& coef, double pen) {
  double gap = 0.0;
  for (Index j = 0; j < coef.size(); ++j) {
    double viol;
    if (!is_penalized(d, j)) {
      viol = std::abs(grad(j));
    } else if (coef(j) == 0.0) {
      viol = std::max(0.0, std::abs(grad(j)) - pen);
    } else {
      viol = std::abs(grad(j) + (coef(j) > 0.0 ? pen : -pen));
    }
    gap = std::max(gap, viol);
  }
  return gap;
}

LassoFit lasso_cd(const WeightedDesign& d, const Gram& g, double pen, Vector coef, const LassoOptions& opts) {
  const Index p = d.cols();
  Vector q = g.G * coef;
  LassoFit fit;
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    for (Index j = 0; j < p; ++j) {
      const double gjj = g.G(j, j);
      double next = 0.0;
      if (gjj > 0.0) {
        const double rho = g.c(j) - q(j) + gjj * coef(j);
        next = is_penalized(d, j) ? soft_threshold(rho, 0.5 * pen) / gjj : rho / gjj;
      }
      const double delta = next - coef(j);
      if (delta != 0.0) {
        q.noalias() += delta * g.G.col(j);
        coef(j) = next;
      }
    }
    q.noalias() = g.G * coef;
    const Vector grad = 2.0 * (q - g.c);
    fit.kkt_gap = kkt_gap_from_gradient(d, grad, coef, pen);
    fit.sweeps = sweep;
    if (fit.kkt_gap <= opts.tol) {
      fit.objective = g.yy - 2.0 * coef.dot(g.c) + coef.dot(q) + pen * l1_penalized(d, coef);
      fit.coef = std::move(coef);
      return fit;
    }
  }
  throw ConvergenceError("weighted lasso did not converge", coef, fit.kkt_gap, fit.sweeps);
}

double weighted_sse(const WeightedDesign& d, const Vector& coef) {
  const Vector r = d.y - d.d * coef;
  return d.weight.dot(r.cwiseProduct(r));
}

Index count_active(const WeightedDesign& d, const Vector& coef) {
  Index k = 0;
  for (Index j = 0; j < coef.size(); ++j) {
    if (is_penalized(d, j) && coef(j) != 0.0) ++k;
  }
  return k;
}

}  // namespace

LassoFit weighted_lasso(const WeightedDesign& design, double lambda, const LassoOptions& opts, const Vector* init) {
  design.validate();
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  const Gram g(design);
  Vector start = init ? *init : Vector::Zero(design.cols());
  return lasso_cd(design, g, lambda / static_cast<double>(design.n_rf), std::move(start), opts);
}

double lasso_kkt_gap(const WeightedDesign& design, double lambda, const Vector& coef) {
  const Vector r = design.y - design.d * coef;
  const Vector grad = -2.0 * (design.d.transpose() * design.weight.cwiseProduct(r));
  return kkt_gap_from_gradient(design, grad, coef, lambda / static_cast<double>(design.n_rf));
}

// ---------------------------------------------------------------------------
// Smoothed penalized quantile regression

namespace {

class SmoothedQr {
 public:
  SmoothedQr(const WeightedDesign& d, const SmoothSpec& spec, double lambda)
      : d_(d), spec_(spec), pen_(lambda / static_cast<double>(d.n_rf)) {}

  double pen() const { return pen_; }

  double value(const Vector& z) const {
    const Vector fit = d_.d * z;
    double f = 0.0;
    for (Index r = 0; r < fit.size(); ++r) f += d_.weight(r) * smoothed_loss(spec_, d_.y(r) - fit(r));
    return f;
  }

  double value_grad(const Vector& z, Vector& grad) const {
    const Vector fit = d_.d * z;
    Vector s(fit.size());
    double f = 0.0;
    for (Index r = 0; r < fit.size(); ++r) {
      const double u = d_.y(r) - fit(r);
      f += d_.weight(r) * smoothed_loss(spec_, u);
      s(r) = -d_.weight(r) * smoothed_score(spec_, u);
    }
    grad.noalias() = d_.d.transpose() * s;
    return f;
  }

  Vector prox(const Vector& v, double step) const {
    Vector out = v;
    const double a = pen_ * step;
    for (Index j = 0; j < v.size(); ++j) {
      if (is_penalized(d_, j)) out(j) = soft_threshold(v(j), a);
    }
    return out;
  }

  double total(const Vector& z, double smooth) const { return smooth + pen_ * l1_penalized(d_, z); }

  // Largest eigenvalue of D' W D times sup K / h.
  double lipschitz_bound() const {
    Vector v = Vector::Ones(d_.cols()) / std::sqrt(static_cast<double>(d_.cols()));
    double lam = 0.0;
    for (int it = 0; it < 30; ++it) {
      const Vector dv = d_.d * v;
      Vector next = d_.d.transpose() * d_.weight.cwiseProduct(dv);
      const double nrm = next.norm();
      if (!(nrm > 0.0)) break;
      lam = nrm;
      v = next / nrm;
    }
    return std::max(lam, 1e-12) * kernel_density(spec_.kernel, 0.0) / spec_.h;
  }

  // ||z - prox(z - grad / L)|| with backtracking on L (L is updated in place).
  double step_residual(const Vector& z, double& lipschitz) const {
    Vector g(z.size());
    const double fz = value_grad(z, g);
    for (int k = 0; k < 60; ++k) {
      const Vector w = prox(z - g / lipschitz, 1.0 / lipschitz);
      const Vector dz = w - z;
      const double fw = value(w);
      if (fw <= fz + g.dot(dz) + 0.5 * lipschitz * dz.squaredNorm() + 1e-14 * (1.0 + std::abs(fz))) return dz.norm();
      lipschitz *= 2.0;
    }
    return std::numeric_limits<double>::infinity();
  }

 private:
  const WeightedDesign& d_;
  SmoothSpec spec_;
  double pen_;
};

}  // namespace

double smoothed_qr_objective(const WeightedDesign& design, const SmoothSpec& spec, double lambda, const Vector& coef) {
  SmoothedQr prob(design, spec, lambda);
  return prob.total(coef, prob.value(coef));
}

double check_qr_objective(const WeightedDesign& design, double tau, double lambda, const Vector& coef) {
  const Vector fit = design.d * coef;
  double f = 0.0;
  for (Index r = 0; r < fit.size(); ++r) f += design.weight(r) * check_loss(tau, design.y(r) - fit(r));
  return f + lambda / static_cast<double>(design.n_rf) * l1_penalized(design, coef);
}

double smoothed_qr_step_residual(const WeightedDesign& design, const SmoothSpec& spec, double lambda, const Vector& coef,
                                 double lipschitz) {
  SmoothedQr prob(design, spec, lambda);
  double l = lipschitz;
  return prob.step_residual(coef, l);
}

QrFit weighted_l1_smoothed_qr(const WeightedDesign& design, const SmoothSpec& spec, double lambda, const QrOptions& opts,
                              const Vector* init) {
  design.validate();
  spec.validate();
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  const SmoothedQr prob(design, spec, lambda);
  const Index p = design.cols();

  Vector x = init ? *init : Vector::Zero(p);
  if (x.size() != p) throw ValidationError("initial coefficient vector has wrong length");
  double fx_total = prob.total(x, prob.value(x));
  Vector y = x;
  double t = 1.0;
  const double l_max = prob.lipschitz_bound();
  double lip = 0.25 * l_max;
  const double l_floor = 1e-6 * l_max;

  QrFit fit;
  fit.objective_trace.push_back(fx_total);
  Vector gy(p);
  for (int it = 1; it <= opts.max_iter; ++it) {
    const double fy = prob.value_grad(y, gy);
    lip = std::max(0.9 * lip, l_floor);
    Vector z;
    double fz = 0.0;
    double step = 0.0;
    for (int k = 0; k < 60; ++k) {
      z = prob.prox(y - gy / lip, 1.0 / lip);
      const Vector dz = z - y;
      fz = prob.value(z);
      step = dz.norm();
      if (fz <= fy + gy.dot(dz) + 0.5 * lip * dz.squaredNorm() + 1e-14 * (1.0 + std::abs(fy))) break;
      lip *= 2.0;
    }
    const double fz_total = prob.total(z, fz);
    // Near the optimum the guaranteed decrease falls below rounding noise, so
    // equality is judged with the same slack as the line search.
    if (fz_total <= fx_total + 1e-14 * (1.0 + std::abs(fx_total))) {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = z + ((t - 1.0) / t_next) * (z - x);
      x = std::move(z);
      fx_total = fz_total;
      t = t_next;
    } else {
      // momentum restart
      y = x;
      t = 1.0;
    }
    fit.objective_trace.push_back(fx_total);
    fit.iterations = it;
    if (step <= opts.tol) {
      double l_check = lip;
      const double res = prob.step_residual(x, l_check);
      if (res <= opts.tol) {
        fit.coef = std::move(x);
        fit.objective = fx_total;
        fit.step_norm = res;
        return fit;
      }
    }
  }
  double l_check = lip;
  const double res = prob.step_residual(x, l_check);
  if (res <= opts.tol) {
    fit.coef = std::move(x);
    fit.objective = fx_total;
    fit.step_norm = res;
    return fit;
  }
  throw ConvergenceError("smoothed quantile regression did not converge", x, res, fit.iterations);
}

QrFit weighted_l1_qr(const WeightedDesign& design, double tau, double lambda, const QrOptions& opts, const Vector* init,
                     const ContinuationOptions& cont) {
  if (!(cont.h_start > 0.0) || !(cont.h_min > 0.0) || cont.h_min > cont.h_start) {
    throw ValidationError("continuation ladder needs 0 < h_min <= h_start");
  }
  std::vector<double> ladder;
  for (double h = cont.h_start; h > cont.h_min; h *= 0.5) ladder.push_back(h);
  ladder.push_back(cont.h_min);

  Vector coef = init ? *init : Vector::Zero(design.cols());
  QrFit fit;
  int total_iter = 0;
  for (std::size_t k = 0; k < ladder.size(); ++k) {
    const bool last = k + 1 == ladder.size();
    QrOptions stage = opts;
    if (!last) stage.tol = std::max(opts.tol, cont.stage_tol);
    const SmoothSpec spec{tau, cont.kernel, ladder[k]};
    fit = weighted_l1_smoothed_qr(design, spec, lambda, stage, &coef);
    total_iter += fit.iterations;
    coef = fit.coef;
  }
  fit.iterations = total_iter;
  return fit;
}

// ---------------------------------------------------------------------------
// Tuning rules

Lambda1Choice select_lambda1(const WeightedDesign& design, double s, double n, double p_w,
                             const std::vector<int>& c_grid, const LassoOptions& opts) {
  design.validate();
  if (c_grid.empty()) throw ValidationError("lambda1 c grid is empty");
  const Gram g(design);
  const double n_rf = static_cast<double>(design.n_rf);
  const double unit = std::sqrt(s * std::log(p_w) / n) / 100.0;

  // Warm-started path from the largest penalty down.
  std::vector<std::size_t> order(c_grid.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return c_grid[a] > c_grid[b]; });

  Lambda1Choice best;
  best.bic.assign(c_grid.size(), std::numeric_limits<double>::infinity());
  std::vector<LassoFit> fits(c_grid.size());
  Vector warm = Vector::Zero(design.cols());
  for (auto k : order) {
    const double pen = c_grid[k] * unit;
    fits[k] = lasso_cd(design, g, pen, warm, opts);
    warm = fits[k].coef;
    const double sse = std::max(weighted_sse(design, fits[k].coef), std::numeric_limits<double>::min());
    best.bic[k] = std::log(sse) + std::log(n_rf) / n_rf * static_cast<double>(count_active(design, fits[k].coef));
  }
  std::size_t arg = 0;
  for (std::size_t k = 1; k < c_grid.size(); ++k) {
    if (best.bic[k] < best.bic[arg]) arg = k;
  }
  best.c = c_grid[arg];
  best.lambda = n_rf * c_grid[arg] * unit;
  best.fit = std::move(fits[arg]);
  return best;
}

double select_lambda2(const WeightedDesign& design, double tau, int n_sim, std::uint64_t seed) {
  design.validate();
  if (n_sim < 100) throw ValidationError("lambda2 simulation needs n_sim >= 100");
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0,1)");

  std::vector<Index> rows;
  for (Index r = 0; r < design.rows(); ++r) {
    if (design.weight(r) > 0.0) rows.push_back(r);
  }
  const Index p = design.cols();
  const Index nr = static_cast<Index>(rows.size());
  // C_rt = w_r D_rt, columns zero-padded to a multiple of 32
  const Index stride = (p + 31) / 32 * 32;
  RowMatrix c = RowMatrix::Zero(nr, stride);
  for (Index k = 0; k < nr; ++k) c.row(k).head(p) = design.weight(rows[k]) * design.d.row(rows[k]);
  const Vector base = tau * c.colwise().sum().transpose();

  // Indicator bits 1{u_rt <= tau}, packed 64 per word, one row after another.
  const Index words = (stride + 63) / 64;
  std::vector<std::uint64_t> bits(static_cast<std::size_t>(nr * words));
  const bool half = tau == 0.5;
  const auto threshold = static_cast<std::uint64_t>(std::min(std::ldexp(tau, 32), 4294967295.0));
  std::vector<double> acc(static_cast<std::size_t>(stride));
  std::vector<double> draws(static_cast<std::size_t>(n_sim));
  Rng rng(seed);
  for (int s = 0; s < n_sim; ++s) {
    for (Index k = 0; k < nr; ++k) {
      std::uint64_t* out = bits.data() + k * words;
      if (half) {
        // one fair bit per entry
        for (Index q = 0; q < words; ++q) out[q] = rng();
      } else {
        // two 32-bit uniforms per draw, resolution 2^-32
        std::fill(out, out + words, std::uint64_t{0});
        for (Index t = 0; t < p; t += 2) {
          const std::uint64_t u = rng();
          if ((u & 0xffffffffULL) < threshold) out[t / 64] |= std::uint64_t{1} << (t % 64);
          if (t + 1 < p && (u >> 32) < threshold) out[(t + 1) / 64] |= std::uint64_t{1} << ((t + 1) % 64);
        }
      }
    }
    // acc_t = sum_r C_rt bit_rt, rows summed in order for every column;
    // 32 columns per pass keep four independent accumulators in flight
    for (Index t0 = 0; t0 < stride; t0 += 32) {
      const Index q = t0 / 64;
      const int shift = static_cast<int>(t0 % 64);
#if defined(__AVX512F__)
      __m512d a0 = _mm512_setzero_pd(), a1 = a0, a2 = a0, a3 = a0;
      for (Index k = 0; k < nr; ++k) {
        const std::uint64_t b = bits[static_cast<std::size_t>(k * words + q)] >> shift;
        const double* row = c.row(k).data() + t0;
        a0 = _mm512_mask_add_pd(a0, static_cast<__mmask8>(b & 0xffU), a0, _mm512_loadu_pd(row));
        a1 = _mm512_mask_add_pd(a1, static_cast<__mmask8>((b >> 8) & 0xffU), a1, _mm512_loadu_pd(row + 8));
        a2 = _mm512_mask_add_pd(a2, static_cast<__mmask8>((b >> 16) & 0xffU), a2, _mm512_loadu_pd(row + 16));
        a3 = _mm512_mask_add_pd(a3, static_cast<__mmask8>((b >> 24) & 0xffU), a3, _mm512_loadu_pd(row + 24));
      }
      _mm512_storeu_pd(acc.data() + t0, a0);
      _mm512_storeu_pd(acc.data() + t0 + 8, a1);
      _mm512_storeu_pd(acc.data() + t0 + 16, a2);
      _mm512_storeu_pd(acc.data() + t0 + 24, a3);
#else
      double a[32] = {};
      for (Index k = 0; k < nr; ++k) {
        const std::uint64_t b = bits[static_cast<std::size_t>(k * words + q)] >> shift;
        const double* row = c.row(k).data() + t0;
        for (int j = 0; j < 32; ++j) {
          if ((b >> j) & 1U) a[j] += row[j];
        }
      }
      std::copy(a, a + 32, acc.data() + t0);
#endif
    }
    double m = 0.0;
    for (Index t = 0; t < p; ++t) m = std::max(m, std::abs(base(t) - acc[static_cast<std::size_t>(t)]));
    draws[static_cast<std::size_t>(s)] = static_cast<double>(design.n_rf) * m;
  }
  std::sort(draws.begin(), draws.end());
  // linear interpolation between order statistics
  const double pos = 0.9 * static_cast<double>(n_sim - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, draws.size() - 1);
  const double q = draws[lo] + (pos - static_cast<double>(lo)) * (draws[hi] - draws[lo]);
  return 1.1 * q;
}

// ---------------------------------------------------------------------------
// Nuisance fit

NuisanceDesigns build_nuisance_designs(const PanelDataset& data, std::span<const std::size_t> subjects,
                                       std::span<const double> alpha, bool penalize_intercept) {
  if (subjects.size() != alpha.size()) throw ValidationError("subject and weight lists differ in length");
  const auto p_t = static_cast<Index>(data.p_t());
  const auto p_w = static_cast<Index>(data.p_w());
  Index rows = 0;
  Index n_rf = 0;
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    if (alpha[k] > 0.0) {
      rows += static_cast<Index>(data.m(subjects[k]));
      ++n_rf;
    }
  }
  if (n_rf == 0) throw ValidationError("no subject carries positive weight");

  NuisanceDesigns out;
  out.p_t = p_t;
  out.p_w = p_w;
  WeightedDesign& o = out.outcome;
  o.weight.resize(rows);
  o.d.resize(rows, p_t + p_w);
  o.y.resize(rows);
  o.n_rf = n_rf;
  if (!penalize_intercept) o.intercept = p_t;
  Index r = 0;
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    if (!(alpha[k] > 0.0)) continue;
    const auto i = subjects[k];
    const double w = alpha[k] / static_cast<double>(data.m(i));
    for (std::size_t src = data.row_begin(i); src < data.row_end(i); ++src, ++r) {
      const auto s = static_cast<Index>(src);
      o.weight(r) = w;
      o.y(r) = data.y()(s);
      o.d.row(r).head(p_t) = data.t().row(s);
      o.d.row(r).tail(p_w) = data.w().row(s);
    }
  }
  out.treatment.resize(static_cast<std::size_t>(p_t));
  for (Index v = 0; v < p_t; ++v) {
    WeightedDesign& tv = out.treatment[static_cast<std::size_t>(v)];
    tv.weight = o.weight;
    tv.d = o.d.rightCols(p_w);
    tv.y = o.d.col(v);
    tv.n_rf = n_rf;
    if (!penalize_intercept) tv.intercept = 0;
  }
  return out;
}

PenaltyConfig tune_penalties(const NuisanceDesigns& designs, double tau, double s, double n, const NuisanceOptions& opts,
                             std::uint64_t seed) {
  PenaltyConfig cfg;
  cfg.penalize_intercept = opts.penalize_intercept;
  for (const auto& tv : designs.treatment) {
    cfg.lambda1.push_back(select_lambda1(tv, s, n, static_cast<double>(designs.p_w), opts.c_grid, opts.lasso).lambda);
  }
  cfg.lambda2 = select_lambda2(designs.outcome, tau, opts.lambda2_nsim, seed);
  return cfg;
}

namespace {

void fit_outcome(const NuisanceDesigns& designs, const SmoothSpec& spec, double lambda2, const NuisanceOptions& opts,
                 NuisanceFit& out) {
  QrFit qr = opts.outcome_solver == OutcomeSolver::smoothed
                 ? weighted_l1_smoothed_qr(designs.outcome, spec, lambda2, opts.qr)
                 : weighted_l1_qr(designs.outcome, spec.tau, lambda2, opts.qr);
  out.theta_init = qr.coef.head(designs.p_t);
  out.beta = qr.coef.tail(designs.p_w);
  out.diagnostics.qr_iterations = qr.iterations;
  out.diagnostics.qr_objective = qr.objective;
  out.diagnostics.qr_active = count_active(designs.outcome, qr.coef);
}

}  // namespace

NuisanceFit fit_nuisance(const NuisanceDesigns& designs, const SmoothSpec& spec, const PenaltyConfig& cfg,
                         const NuisanceOptions& opts) {
  if (cfg.lambda1.size() != designs.treatment.size()) throw ValidationError("need one lambda1 per treatment column");
  NuisanceFit out;
  out.L.resize(designs.p_w, designs.p_t);
  for (std::size_t v = 0; v < designs.treatment.size(); ++v) {
    LassoFit f = weighted_lasso(designs.treatment[v], cfg.lambda1[v], opts.lasso);
    out.L.col(static_cast<Index>(v)) = f.coef;
    out.diagnostics.lasso_sweeps.push_back(f.sweeps);
    out.diagnostics.lasso_active.push_back(count_active(designs.treatment[v], f.coef));
  }
  fit_outcome(designs, spec, cfg.lambda2, opts, out);
  return out;
}

NuisanceFit tune_and_fit_nuisance(const NuisanceDesigns& designs, const SmoothSpec& spec, double s, double n,
                                  const NuisanceOptions& opts, std::uint64_t seed, PenaltyConfig* used) {
  NuisanceFit out;
  PenaltyConfig cfg;
  cfg.penalize_intercept = opts.penalize_intercept;
  out.L.resize(designs.p_w, designs.p_t);
  for (std::size_t v = 0; v < designs.treatment.size(); ++v) {
    Lambda1Choice ch =
        select_lambda1(designs.treatment[v], s, n, static_cast<double>(designs.p_w), opts.c_grid, opts.lasso);
    cfg.lambda1.push_back(ch.lambda);
    out.L.col(static_cast<Index>(v)) = ch.fit.coef;
    out.diagnostics.lasso_sweeps.push_back(ch.fit.sweeps);
    out.diagnostics.lasso_active.push_back(count_active(designs.treatment[v], ch.fit.coef));
    out.diagnostics.lambda1_c.push_back(ch.c);
  }
  cfg.lambda2 = select_lambda2(designs.outcome, spec.tau, opts.lambda2_nsim, seed);
  fit_outcome(designs, spec, cfg.lambda2, opts, out);
  if (used) *used = cfg;
  return out;
}

}  // namespace oqrf
