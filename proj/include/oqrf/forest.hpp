#pragma once

#include "oqrf/common.hpp"
#include "oqrf/panel_data.hpp"
#include "oqrf/penalized.hpp"
#include "oqrf/rng.hpp"
#include "oqrf/score.hpp"
#include "oqrf/skernel.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace oqrf {

struct ForestConfig {
  int n_trees = 500;
  double subsample_ratio = 0.5;
  int max_depth = 15;
  int min_leaf_subjects = 20;
  double min_child_fraction = 0.2;
  /// Per-split share of modifiers tried, used only when p_x > 2.
  std::optional<double> feature_fraction;
  std::uint64_t seed = 0;

  void validate() const;
};

/// What a node fit needs besides its subjects.
struct NodeFitOptions {
  NuisanceOptions nuisance;
  ThetaOptions theta;
  /// Tuning constants for lambda1: subsample size and subject count.
  double s = 1.0;
  double n = 1.0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<std::size_t> leaf_subjects;  // S2 subjects (leaf only)

  bool is_leaf() const noexcept { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::vector<std::size_t> s1;  // splitting subjects
  std::vector<std::size_t> s2;  // estimation subjects

  /// Index of the leaf reached by x (x <= threshold goes left).
  int leaf_of(std::span<const double> x) const;
};

struct Forest {
  std::size_t n_subjects = 0;
  std::size_t p_x = 0;
  ForestConfig config;
  std::vector<Tree> trees;

  std::string to_json() const;
  static Forest from_json(const std::string& text);
};

/// Node-level quantities used by the split criterion.
struct SplitScratch {
  Vector theta;  // node effect estimate
  Matrix A;      // p_t x p_t Hessian approximation (before ridge)
  Matrix rho;    // one row per node subject: influence values
  double mu = 0.5;
};

/// A^{-1} applied to each row of `psi_sums` (subject-level score sums), with
/// the ridge epsilon = 1e-8 tr(A) / p_t. Throws ValidationError if the
/// stabilized matrix is not finite or has condition number above 1e12.
Matrix influence_values(const Matrix& A, const Matrix& psi_sums);

/// Fits the node nuisance, effect and Hessian on S1 subjects `subjects` with
/// weights 1 / (n_P m_i), and returns the influence values. Throws on any
/// numerical failure; callers turn such nodes into leaves.
SplitScratch node_fit(const PanelDataset& data, std::span<const std::size_t> subjects, const SmoothSpec& spec,
                      const NodeFitOptions& opts, std::uint64_t seed);

/// mu * max_v D_v + (1 - mu) * mean_v D_v with
/// D_v = left_sum_v^2 / n_left + right_sum_v^2 / n_right.
double heterogeneity_score(const Vector& left_sum, const Vector& right_sum, double n_left, double n_right, double mu);

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;
};

/// Exhaustive search over midpoints of consecutive distinct S1 values of each
/// listed feature. Both children need at least min_child_fraction * n_P S1
/// subjects and, when `s2_subjects` is given, min_leaf_subjects S2 subjects.
/// Ties go to the lower feature index, then the lower threshold. Returns
/// nothing unless the best score is positive.
std::optional<Split> best_split(const RowMatrix& x, std::span<const std::size_t> s1_subjects, const Matrix& rho,
                                double mu, const ForestConfig& cfg, std::span<const int> features,
                                std::span<const std::size_t> s2_subjects = {});

/// Grows a single tree from its own random stream.
Tree grow_tree(const PanelDataset& data, const ForestConfig& cfg, const SmoothSpec& spec, const NodeFitOptions& opts,
               std::size_t tree_index);

/// B honest trees; tree b uses the stream derive_seed(cfg.seed, {b}).
/// opts.s and opts.n are filled in from the data and cfg.
Forest grow_forest(const PanelDataset& data, const ForestConfig& cfg, const SmoothSpec& spec,
                   NodeFitOptions opts = {}, int threads = 1);

/// alpha_i(x0) averaged over trees whose leaf at x0 holds S2 subjects.
/// Sums to 1 unless no tree contributes, in which case all weights are 0.
Vector forest_weights(const Forest& forest, std::span<const double> x0);

}  // namespace oqrf
