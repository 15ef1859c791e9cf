#include "oqrf/score.hpp"

#include <algorithm>
#include <cmath>

namespace oqrf {

ThetaSolver parse_theta_solver(std::string_view name) {
  if (name == "auto") return ThetaSolver::automatic;
  if (name == "grid") return ThetaSolver::grid;
  if (name == "iterative") return ThetaSolver::iterative;
  throw ValidationError("unknown theta solver '" + std::string(name) + "'");
}

std::string to_string(ThetaSolver s) {
  switch (s) {
    case ThetaSolver::automatic: return "auto";
    case ThetaSolver::grid: return "grid";
    case ThetaSolver::iterative: return "iterative";
  }
  return "?";
}

ScoreSystem::ScoreSystem(const PanelDataset& data, std::span<const std::size_t> subjects, std::span<const double> alpha,
                         const NuisanceFit& nuisance, double tau)
    : p_t_(static_cast<Index>(data.p_t())), tau_(tau) {
  if (subjects.size() != alpha.size()) throw ValidationError("subject and weight lists differ in length");
  const auto p_w = static_cast<Index>(data.p_w());
  if (nuisance.L.rows() != p_w || nuisance.L.cols() != p_t_ || nuisance.beta.size() != p_w) {
    throw SchemaError("nuisance dimensions do not match the data");
  }
  Index rows = 0;
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    if (alpha[k] > 0.0) {
      rows += static_cast<Index>(data.m(subjects[k]));
      ++n_rf_;
      max_alpha_ = std::max(max_alpha_, alpha[k]);
    }
  }
  if (rows == 0) throw ValidationError("no subject carries positive weight");
  weight_.resize(rows);
  y_.resize(rows);
  offset_.resize(rows);
  t_.resize(rows, p_t_);
  lw_.resize(rows, p_t_);
  Index r = 0;
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    if (!(alpha[k] > 0.0)) continue;
    const auto i = subjects[k];
    const double w = alpha[k] / static_cast<double>(data.m(i));
    for (std::size_t src = data.row_begin(i); src < data.row_end(i); ++src, ++r) {
      const auto s = static_cast<Index>(src);
      weight_(r) = w;
      y_(r) = data.y()(s);
      offset_(r) = data.w().row(s).dot(nuisance.beta.transpose());
      t_.row(r) = data.t().row(s);
      lw_.row(r) = data.w().row(s) * nuisance.L;
    }
  }
  e_ = t_ - lw_;
}

OrthScoreEval ScoreSystem::eval(const Vector& theta) const {
  if (theta.size() != p_t_) throw SchemaError("theta has wrong length");
  OrthScoreEval out;
  out.value = Vector::Zero(p_t_);
  const Vector fit = t_ * theta + offset_;
  for (Index r = 0; r < rows(); ++r) {
    const double phi = tau_ - (y_(r) <= fit(r) ? 1.0 : 0.0);
    out.value.noalias() += (weight_(r) * phi) * e_.row(r).transpose();
  }
  out.norm = out.value.norm();
  out.max_alpha = max_alpha_;
  return out;
}

double ScoreSystem::eval_scalar(double theta) const {
  double v = 0.0;
  for (Index r = 0; r < rows(); ++r) {
    const double phi = tau_ - (y_(r) <= theta * t_(r, 0) + offset_(r) ? 1.0 : 0.0);
    v += weight_(r) * phi * e_(r, 0);
  }
  return v;
}

OrthScoreEval eval_score(const PanelDataset& data, std::span<const std::size_t> subjects, std::span<const double> alpha,
                         const NuisanceFit& nuisance, const Vector& theta, double tau) {
  return ScoreSystem(data, subjects, alpha, nuisance, tau).eval(theta);
}

namespace {

GridResult scan(const ScoreSystem& sys, double lo, double hi, double step) {
  GridResult best;
  best.resolution = step;
  const auto n = static_cast<long long>(std::floor((hi - lo) / step + 1e-9));
  for (long long k = 0; k <= n; ++k) {
    const double th = lo + static_cast<double>(k) * step;
    const double s = std::abs(sys.eval_scalar(th));
    ++best.evaluations;
    if (k == 0 || s < best.abs_score) {
      best.theta = th;
      best.abs_score = s;
    }
  }
  return best;
}

}  // namespace

GridResult solve_theta_grid(const ScoreSystem& sys, double lo, double hi, double step, double refine_step) {
  if (sys.p_t() != 1) throw ValidationError("grid search needs a scalar treatment");
  if (!(step > 0.0) || !(hi >= lo)) throw ValidationError("invalid theta grid");
  GridResult best = scan(sys, lo, hi, step);
  if (refine_step > 0.0) {
    GridResult fine = scan(sys, best.theta - step, best.theta + step, refine_step);
    fine.evaluations += best.evaluations;
    if (fine.abs_score < best.abs_score || (fine.abs_score == best.abs_score && fine.theta < best.theta)) return fine;
    best.evaluations = fine.evaluations;
    best.resolution = refine_step;
  }
  return best;
}

GridResult solve_theta_grid(const ScoreSystem& sys, double center, const GridOptions& opts) {
  return solve_theta_grid(sys, center - opts.half_width, center + opts.half_width, opts.step, opts.refine_step);
}

IterativeResult solve_theta_iterative(const ScoreSystem& sys, const Vector& theta0, const IterativeOptions& opts) {
  if (theta0.size() != sys.p_t()) throw SchemaError("initial theta has wrong length");
  WeightedDesign design;
  design.weight = sys.weight();
  design.d = sys.e();
  design.n_rf = sys.n_rf();
  IterativeResult out;
  Vector theta = theta0;
  for (int k = 1; k <= opts.max_rounds; ++k) {
    design.y = sys.y() - sys.lw() * theta - sys.offset();
    const QrFit fit = weighted_l1_qr(design, sys.tau(), 0.0, opts.qr, &theta, opts.continuation);
    const Vector step = fit.coef - theta;
    // an unchanged surrogate means the next round would solve the same problem
    const bool same_surrogate = sys.rows() == 0 || (sys.lw() * step).cwiseAbs().maxCoeff() == 0.0;
    theta = fit.coef;
    out.rounds = k;
    if (step.norm() <= opts.tol || same_surrogate) {
      out.converged = true;
      break;
    }
  }
  out.score_norm = sys.eval(theta).norm;
  out.theta = std::move(theta);
  return out;
}

ThetaSolution solve_theta(const ScoreSystem& sys, const Vector& theta0, const ThetaOptions& opts) {
  ThetaSolver s = opts.solver;
  if (s == ThetaSolver::automatic) s = sys.p_t() == 1 ? ThetaSolver::grid : ThetaSolver::iterative;
  ThetaSolution out;
  if (s == ThetaSolver::grid) {
    const GridResult g = solve_theta_grid(sys, theta0(0), opts.grid);
    out.theta = Vector::Constant(1, g.theta);
    out.score_norm = g.abs_score;
    out.grid_resolution = g.resolution;
  } else {
    IterativeResult it = solve_theta_iterative(sys, theta0, opts.iterative);
    out.theta = std::move(it.theta);
    out.score_norm = it.score_norm;
    out.rounds = it.rounds;
  }
  return out;
}

}  // namespace oqrf
