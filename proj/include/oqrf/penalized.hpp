#pragma once

#include "oqrf/common.hpp"
#include "oqrf/panel_data.hpp"
#include "oqrf/skernel.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace oqrf {

/// Rows (weight, d, y) of a locally weighted regression problem. Row weights
/// are alpha_i / m_i, so a subject's rows share its forest weight. Penalties
/// enter every objective as (lambda / n_rf) * ||coef without intercept||_1.
struct WeightedDesign {
  Vector weight;
  Matrix d;
  Vector y;
  std::optional<Index> intercept;  // column excluded from the l1 penalty
  Index n_rf = 1;                  // subjects with positive weight

  Index rows() const { return d.rows(); }
  Index cols() const { return d.cols(); }
  /// Throws ValidationError on shape mismatch, negative or all-zero weights.
  void validate() const;
};

struct LassoOptions {
  double tol = 1e-8;  // KKT tolerance
  int max_sweeps = 10000;
};

struct LassoFit {
  Vector coef;
  int sweeps = 0;
  double kkt_gap = 0.0;
  double objective = 0.0;
};

/// Cyclic coordinate descent with covariance updates on
///   sum_r w_r (y_r - d_r' l)^2 + (lambda / n_rf) ||l_{-intercept}||_1.
LassoFit weighted_lasso(const WeightedDesign& design, double lambda, const LassoOptions& opts = {},
                        const Vector* init = nullptr);

/// Largest KKT violation of `coef` for the lasso objective above.
double lasso_kkt_gap(const WeightedDesign& design, double lambda, const Vector& coef);

struct QrOptions {
  double tol = 1e-7;  // proximal-gradient step norm at return
  int max_iter = 10000;
};

struct QrFit {
  Vector coef;
  int iterations = 0;
  double objective = 0.0;
  double step_norm = 0.0;
  std::vector<double> objective_trace;  // nonincreasing
};

/// Monotone accelerated proximal gradient with backtracking on
///   sum_r w_r rho_{tau h}(y_r - d_r' z) + (lambda / n_rf) ||z_{-intercept}||_1.
QrFit weighted_l1_smoothed_qr(const WeightedDesign& design, const SmoothSpec& spec, double lambda,
                              const QrOptions& opts = {}, const Vector* init = nullptr);

/// Objective value of the smoothed problem at `coef`.
double smoothed_qr_objective(const WeightedDesign& design, const SmoothSpec& spec, double lambda, const Vector& coef);
/// Objective value of the non-smoothed (check loss) problem at `coef`.
double check_qr_objective(const WeightedDesign& design, double tau, double lambda, const Vector& coef);
/// Proximal-gradient fixed-point residual ||z - prox(z - grad/L)|| at a given L.
double smoothed_qr_step_residual(const WeightedDesign& design, const SmoothSpec& spec, double lambda, const Vector& coef,
                                 double lipschitz);

struct ContinuationOptions {
  double h_start = 1.0;
  double h_min = 0.01;
  KernelType kernel = KernelType::gaussian;
  double stage_tol = 1e-5;  // intermediate stages; the last stage uses QrOptions::tol
};

/// Non-smoothed l1-penalized QR by smoothing continuation: the smoothed solver
/// runs over h = h_start, h_start/2, ... down to h_min with warm starts, and the
/// final stage's solution is returned.
QrFit weighted_l1_qr(const WeightedDesign& design, double tau, double lambda, const QrOptions& opts = {},
                     const Vector* init = nullptr, const ContinuationOptions& cont = {});

struct Lambda1Choice {
  double lambda = 0.0;
  int c = 0;
  std::vector<double> bic;  // one entry per grid value
  LassoFit fit;             // fit at the chosen lambda
};

inline std::vector<int> default_c_grid() { return {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}; }

/// lambda / n_rf = (c / 100) sqrt(s log(p_w) / n) for c in the grid; picks the
/// c minimizing log(weighted SSE) + (log n_rf / n_rf) * #nonzero penalized coefs.
Lambda1Choice select_lambda1(const WeightedDesign& design, double s, double n, double p_w,
                             const std::vector<int>& c_grid = default_c_grid(), const LassoOptions& opts = {});

/// 1.1 x the empirical 0.9-quantile of
///   Lambda = n_rf max_t | sum_r w_r D_rt (tau - 1{u_rt <= tau}) |,  u iid U(0,1).
double select_lambda2(const WeightedDesign& design, double tau, int n_sim, std::uint64_t seed);

struct PenaltyConfig {
  std::vector<double> lambda1;  // one per treatment column
  double lambda2 = 0.0;
  bool penalize_intercept = false;
};

struct NuisanceDiagnostics {
  std::vector<int> lasso_sweeps;
  std::vector<Index> lasso_active;
  int qr_iterations = 0;
  double qr_objective = 0.0;
  Index qr_active = 0;
  std::vector<int> lambda1_c;
};

/// Local nuisance estimate at a target point: L (p_w x p_t), beta (p_w) and
/// the preliminary effect theta_init (p_t) read off the joint QR fit.
struct NuisanceFit {
  Matrix L;
  Vector beta;
  Vector theta_init;
  NuisanceDiagnostics diagnostics;
};

/// Per-target regression problems: treatment[v] regresses T^(v) on W, and
/// outcome regresses Y on D = [T, W] (intercept at column p_t).
struct NuisanceDesigns {
  std::vector<WeightedDesign> treatment;
  WeightedDesign outcome;
  Index p_t = 0;
  Index p_w = 0;
};

/// Rows of every subject with alpha_i > 0, weighted alpha_i / m_i.
/// `subjects` indexes into `data`; `alpha` is aligned with `subjects`.
NuisanceDesigns build_nuisance_designs(const PanelDataset& data, std::span<const std::size_t> subjects,
                                       std::span<const double> alpha, bool penalize_intercept);

enum class OutcomeSolver { smoothed, nonsmoothed };

struct NuisanceOptions {
  std::vector<int> c_grid = default_c_grid();
  int lambda2_nsim = 1000;
  bool penalize_intercept = false;
  LassoOptions lasso;
  QrOptions qr;
  OutcomeSolver outcome_solver = OutcomeSolver::smoothed;
};

/// Tuning rules for every nuisance penalty (lambda1 per column by BIC, lambda2
/// by simulation). `s` and `n` are the subsample size and subject count.
PenaltyConfig tune_penalties(const NuisanceDesigns& designs, double tau, double s, double n,
                             const NuisanceOptions& opts, std::uint64_t seed);

/// Column v of L by weighted lasso; (theta_init, beta) by the penalized QR.
NuisanceFit fit_nuisance(const NuisanceDesigns& designs, const SmoothSpec& spec, const PenaltyConfig& cfg,
                         const NuisanceOptions& opts = {});

/// tune_penalties followed by fit_nuisance, reusing the lasso fits computed
/// during lambda1 selection. The penalties used are written to `used`.
NuisanceFit tune_and_fit_nuisance(const NuisanceDesigns& designs, const SmoothSpec& spec, double s, double n,
                                  const NuisanceOptions& opts, std::uint64_t seed, PenaltyConfig* used = nullptr);

}  // namespace oqrf
