#pragma once

#include "oqrf/common.hpp"
#include "oqrf/estimator.hpp"
#include "oqrf/panel_data.hpp"
#include "oqrf/rng.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace oqrf {

enum class ErrorModel { normal, t3, cauchy };

ErrorModel parse_error_model(std::string_view name);
std::string to_string(ErrorModel e);

struct SimConfig {
  int setting = 1;
  int n = 400;  // subjects per half; the dataset holds 2n
  int p_w = 201;
  ErrorModel error = ErrorModel::normal;
  double rho_w = 0.5;
  double rho_eps = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Number of effect modifiers of a setting (1 or 2).
std::size_t modifier_dim(int setting);

/// theta*(x). Setting 3 uses x = (x1, x2) with x2 in {0, 1}.
double true_theta(int setting, std::span<const double> x);
/// beta*(x) and l*(x) for a continuous modifier value x (length p_w).
Vector true_beta(int setting, double x, int p_w);
Vector true_ell(int setting, double x, int p_w);

/// Correlated draw with AR(1) correlation rho^|p-q|: Gaussian, then scaled by
/// sqrt(chi2_df / df) for the t3 (df 3) and Cauchy (df 1) models.
Vector gen_errors(ErrorModel model, int m, double rho, Rng& rng);

/// 2n subjects; subject i draws from the stream derive_seed(cfg.seed, {i}).
PanelDataset gen_dataset(const SimConfig& cfg);

/// 50 points on [0.02, 0.98]; setting 3 crosses them with x2 in {0, 1}.
std::vector<std::vector<double>> eval_grid(int setting);

struct Metrics {
  double bias = 0.0;
  double root_mise = 0.0;
};

/// curves[replicate][grid point]. bias: grid mean of |replicate-mean error|;
/// root_mise: sqrt of the grid mean of the replicate-mean squared error.
Metrics metrics(const std::vector<std::vector<double>>& curves, const std::vector<double>& truth);

struct McFailure {
  int replicate = 0;
  std::string message;
};

struct McReport {
  Method method = Method::oqrf;
  std::vector<std::vector<double>> grid;
  std::vector<double> truth;
  std::vector<int> replicates;              // ids of successful replicates
  std::vector<std::vector<double>> curves;  // aligned with `replicates`
  std::vector<McFailure> failures;
  Metrics metrics;
};

/// Monte Carlo over `replicates` datasets. Replicate r uses the data seed
/// derive_seed(sim.seed, {r, 0}) and the fit seed derive_seed(sim.seed, {r, 1}),
/// so every method sees identical datasets and forests. One report per method.
std::vector<McReport> run_mc(const SimConfig& sim, std::span<const Method> methods, int replicates,
                             const std::vector<std::vector<double>>& grid, const EstimatorConfig& est, int threads = 1);

/// iid rows at a fixed modifier value with antithetic treatment noise (each
/// W row appears with e and -e). Gaussian errors; 2 * n_pairs rows.
ProbeSample make_probe_sample(int setting, double x0, int n_pairs, int p_w, double tau, std::uint64_t seed);

/// Unit probe directions: "nuisance" moves beta and L jointly on confounders
/// 1..10, "beta" and "L" move one of them, "theta" moves the effect only.
ProbeDirection probe_direction(std::string_view kind, int p_w, int p_t = 1);

}  // namespace oqrf
