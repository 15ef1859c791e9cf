#pragma once

#include "oqrf/common.hpp"
#include "oqrf/panel_data.hpp"
#include "oqrf/penalized.hpp"

#include <span>
#include <string>
#include <string_view>

namespace oqrf {

/// grid: scalar grid search; iterative: weighted-QR fixed point;
/// automatic: grid when p_t == 1, iterative otherwise.
enum class ThetaSolver { automatic, grid, iterative };

ThetaSolver parse_theta_solver(std::string_view name);
std::string to_string(ThetaSolver s);

struct OrthScoreEval {
  Vector value;  // sum_i alpha_i sum_j (1/m_i) psi_ij
  double norm = 0.0;
  double max_alpha = 0.0;
};

/// Rows of a weighted sample with the nuisance plugged in. Only subjects with
/// alpha_i > 0 are kept; row weights are alpha_i / m_i.
class ScoreSystem {
 public:
  ScoreSystem(const PanelDataset& data, std::span<const std::size_t> subjects, std::span<const double> alpha,
              const NuisanceFit& nuisance, double tau);

  /// sum_r w_r (tau - 1{y_r <= theta' t_r + beta' w_r}) (t_r - L' w_r)
  OrthScoreEval eval(const Vector& theta) const;
  /// Scalar-treatment score value (p_t == 1).
  double eval_scalar(double theta) const;

  Index rows() const noexcept { return y_.size(); }
  Index p_t() const noexcept { return p_t_; }
  Index n_rf() const noexcept { return n_rf_; }
  double tau() const noexcept { return tau_; }
  double max_alpha() const noexcept { return max_alpha_; }
  const Vector& weight() const noexcept { return weight_; }
  const Vector& y() const noexcept { return y_; }
  const Matrix& t() const noexcept { return t_; }
  const Matrix& e() const noexcept { return e_; }     // t - L' w
  const Matrix& lw() const noexcept { return lw_; }   // L' w
  const Vector& offset() const noexcept { return offset_; }  // beta' w

 private:
  Index p_t_ = 0;
  Index n_rf_ = 0;
  double tau_ = 0.5;
  double max_alpha_ = 0.0;
  Vector weight_, y_, offset_;
  Matrix t_, e_, lw_;
};

OrthScoreEval eval_score(const PanelDataset& data, std::span<const std::size_t> subjects, std::span<const double> alpha,
                         const NuisanceFit& nuisance, const Vector& theta, double tau);

struct GridOptions {
  double half_width = 3.0;
  double step = 0.01;
  double refine_step = 0.001;  // 0 disables the refinement pass
};

struct GridResult {
  double theta = 0.0;
  double abs_score = 0.0;
  double resolution = 0.0;  // step of the last pass
  int evaluations = 0;
};

/// Argmin of |score| over lo + k * step <= hi; ties go to the smallest theta.
/// With refine_step > 0 a second pass scans [best - step, best + step] at refine_step.
GridResult solve_theta_grid(const ScoreSystem& sys, double lo, double hi, double step, double refine_step = 0.0);
/// Grid centered at `center` (normally the preliminary estimate).
GridResult solve_theta_grid(const ScoreSystem& sys, double center, const GridOptions& opts = {});

struct IterativeOptions {
  int max_rounds = 20;
  double tol = 1e-6;
  QrOptions qr;
  ContinuationOptions continuation;
};

struct IterativeResult {
  Vector theta;
  int rounds = 0;
  bool converged = false;
  double score_norm = 0.0;
};

/// Fixed-point iteration: regress the surrogate y - (theta_k' L' + beta') w on
/// e = t - L' w by unpenalized weighted QR until successive iterates agree.
IterativeResult solve_theta_iterative(const ScoreSystem& sys, const Vector& theta0, const IterativeOptions& opts = {});

struct ThetaOptions {
  ThetaSolver solver = ThetaSolver::automatic;
  GridOptions grid;
  IterativeOptions iterative;
};

struct ThetaSolution {
  Vector theta;
  double score_norm = 0.0;
  int rounds = 0;            // iterative rounds (0 for grid)
  double grid_resolution = 0.0;  // 0 for iterative
};

/// Dispatches on opts.solver, starting from `theta0` (grid center / first iterate).
ThetaSolution solve_theta(const ScoreSystem& sys, const Vector& theta0, const ThetaOptions& opts);

}  // namespace oqrf
