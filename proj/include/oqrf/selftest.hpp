#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace oqrf {

struct SelftestOptions {
  std::optional<std::string> only;  // run a single named check
  /// Test rig: evaluate the gradient check against the negated score. The
  /// check must then fail.
  bool flip_score_sign = false;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  nlohmann::json metrics;
};

/// gradient, kkt, weights, orthogonality, shrinkage
std::vector<std::string> selftest_names();

/// Throws ValidationError if opts.only names no check.
std::vector<CheckResult> run_selftest(const SelftestOptions& opts);

nlohmann::json selftest_report(const std::vector<CheckResult>& results);

/// Largest |score - central difference of the smoothed loss| / (1 + |score|)
/// over kernels, tau in {0.2, 0.5, 0.8}, h in {0.3, 1} and u in [-5h, 5h].
double gradient_check_error(bool flip_score_sign = false);

struct OrthogonalitySlopes {
  double nuisance = 0.0;
  double theta = 0.0;
  double beta_only_max_delta = 0.0;
};

/// Probe at x0 = 0.5 of Setting 1 on 2 * n_pairs rows over 10 log-spaced
/// r in [0.02, 0.2].
OrthogonalitySlopes orthogonality_slopes(int n_pairs, std::uint64_t seed);

struct ShrinkagePair {
  double small = 0.0;  // statistic at n_small subjects
  double large = 0.0;  // statistic at n_large subjects
};

/// For each seed: grow forests on Setting-1 data with n_small and n_large
/// subjects (same config ratios) and average, over `queries` random x0, the
/// largest |x0 - X_i| among subjects with alpha_i(x0) > 0.
std::vector<ShrinkagePair> shrinkage_study(int n_seeds, int n_small, int n_large, int n_trees, int p_w, int queries,
                                           std::uint64_t seed, int threads = 1);

}  // namespace oqrf
