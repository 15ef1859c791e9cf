#pragma once

#include "oqrf/common.hpp"
#include "oqrf/forest.hpp"
#include "oqrf/panel_data.hpp"
#include "oqrf/penalized.hpp"
#include "oqrf/score.hpp"
#include "oqrf/skernel.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace oqrf {

/// oqrf: smoothed nuisance + orthogonal score; oqrf_nc: nuisance beta from the
/// non-smoothed penalized QR; naive: the preliminary estimate read off the
/// smoothed nuisance fit.
enum class Method { oqrf, oqrf_nc, naive };

Method parse_method(std::string_view name);
std::string to_string(Method m);

struct EstimatorConfig {
  double tau = 0.5;
  KernelType kernel = KernelType::gaussian;
  std::optional<double> bandwidth;  // absent: bandwidth_rule
  ForestConfig forest;
  NuisanceOptions nuisance;
  ThetaOptions theta;
  Method method = Method::oqrf;
  /// Trees per bootstrap replicate; absent: min(B, max(100, B / 5)).
  std::optional<int> boot_trees;

  void validate() const;
};

/// Split of the data, the two halves and their forests.
struct FittedForests {
  SubjectSplit split;
  PanelDataset half1;  // nuisance half (subset of the input in d1 order)
  PanelDataset half2;  // effect half
  Forest forest1;
  Forest forest2;
  SmoothSpec spec;
  std::uint64_t seed = 0;
};

/// Smoothing spec for a half of n_half subjects.
SmoothSpec resolve_spec(const EstimatorConfig& cfg, std::size_t n_half, std::size_t p_t, std::size_t p_w);

/// Splits the data with seed-derived streams and grows one forest per half.
FittedForests fit_forests(const PanelDataset& data, const EstimatorConfig& cfg, std::uint64_t seed, int threads = 1);
/// Grows forests on given halves (used by the bootstrap).
FittedForests fit_forests_on(PanelDataset half1, PanelDataset half2, const EstimatorConfig& cfg, std::uint64_t seed,
                             int threads = 1);

struct EffectEstimate {
  Method method = Method::oqrf;
  Vector theta;
  Vector theta_init;  // preliminary estimate from the nuisance fit
  double score_norm = 0.0;
  double max_alpha = 0.0;
  int rounds = 0;
  double grid_resolution = 0.0;
  NuisanceDiagnostics nuisance;
  PenaltyConfig penalties;
};

/// Estimates theta(x0) for each requested method. Methods share the forest
/// weights; oqrf and naive also share the smoothed nuisance fit.
std::vector<EffectEstimate> estimate_methods(const FittedForests& ff, std::span<const double> x0,
                                             const EstimatorConfig& cfg, std::span<const Method> methods);

/// Single-method estimate (cfg.method).
EffectEstimate estimate_at(const FittedForests& ff, std::span<const double> x0, const EstimatorConfig& cfg);

struct BootstrapInterval {
  Vector lower;
  Vector upper;
};

struct BootstrapResult {
  std::vector<BootstrapInterval> intervals;  // one per query point
  std::vector<std::vector<Vector>> draws;    // [query][replicate]
  int n_used = 0;
  int n_failed = 0;
};

/// Percentile interval at `level` (type-7 quantiles) of one coordinate.
std::pair<double, double> percentile_interval(std::vector<double> values, double level);

/// One bootstrap replicate driven entirely by `replicate_seed`: resamples
/// subjects with replacement within each half of `ff.split`, regrows both
/// forests with the reduced tree count and re-estimates theta at every query.
std::vector<Vector> bootstrap_replicate(const FittedForests& ff, std::span<const Vector> queries,
                                        const EstimatorConfig& cfg, std::uint64_t replicate_seed);

/// Percentile intervals from replicate draws (replicates[b][query]). More than
/// 10% failed replicates, or none left, raise an Error.
BootstrapResult summarize_bootstrap(std::vector<std::vector<Vector>> replicates, int n_failed, double level);

/// Replicate b runs bootstrap_replicate with derive_seed(seed, {b}). Failed
/// replicates are dropped and counted.
BootstrapResult bootstrap_ci(const FittedForests& ff, std::span<const Vector> queries,
                             const EstimatorConfig& cfg, int n_boot, double level, std::uint64_t seed, int threads = 1);

/// Large sample at one modifier value with known truth, used to probe the
/// sensitivity of the mean score to perturbed parameters. The error term is
/// integrated out analytically: E[1{Y <= a} | T, W] = F(a - theta*'T - beta*'W).
struct ProbeSample {
  double tau = 0.5;
  RowMatrix w;           // rows x p_w
  Matrix t;              // rows x p_t
  Vector theta;          // theta*
  Vector beta;           // beta* (excluding the tau-quantile shift)
  Matrix L;              // L* (p_w x p_t)
  std::function<double(double)> error_cdf;
  double error_quantile = 0.0;  // F^{-1}(tau)
};

struct ProbeDirection {
  Vector theta;  // p_t
  Vector beta;   // p_w
  Matrix L;      // p_w x p_t
};

struct ProbeResult {
  std::vector<double> r;
  std::vector<double> delta;
  double slope = 0.0;  // +inf when delta vanishes on the whole grid
};

/// Mean conditional score at (theta* + r g_theta, beta_tau* + r g_beta, L* + r g_L).
Vector probe_mean_score(const ProbeSample& sample, const ProbeDirection& g, double r);

/// Delta(r) = ||mean score(r) - mean score(0)|| on the r grid and the
/// least-squares slope of log Delta against log r.
ProbeResult orthogonality_probe(const ProbeSample& sample, const ProbeDirection& g, std::span<const double> r_grid);

/// n log-spaced points on [lo, hi].
std::vector<double> log_grid(double lo, double hi, int n);

}  // namespace oqrf
