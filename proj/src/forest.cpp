#include "oqrf/forest.hpp"

#include "oqrf/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oqrf {

using nlohmann::json;

void ForestConfig::validate() const {
  if (n_trees < 1) throw ValidationError("n_trees must be >= 1");
  if (!(subsample_ratio > 0.0 && subsample_ratio <= 1.0)) throw ValidationError("subsample_ratio must lie in (0,1]");
  if (max_depth < 0) throw ValidationError("max_depth must be >= 0");
  if (min_leaf_subjects < 1) throw ValidationError("min_leaf_subjects must be >= 1");
  if (!(min_child_fraction > 0.0 && min_child_fraction <= 0.2)) {
    throw ValidationError("min_child_fraction must lie in (0,0.2]");
  }
  if (feature_fraction && !(*feature_fraction > 0.0 && *feature_fraction <= 1.0)) {
    throw ValidationError("feature_fraction must lie in (0,1]");
  }
}

int Tree::leaf_of(std::span<const double> x) const {
  int k = 0;
  while (!nodes[static_cast<std::size_t>(k)].is_leaf()) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(k)];
    k = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
  }
  return k;
}

// ---------------------------------------------------------------------------
// Node fit

Matrix influence_values(const Matrix& A, const Matrix& psi_sums) {
  const Index p = A.rows();
  if (A.cols() != p || psi_sums.cols() != p) throw SchemaError("influence: dimension mismatch");
  const double eps = 1e-8 * A.trace() / static_cast<double>(p);
  const Matrix B = A + eps * Matrix::Identity(p, p);
  if (!B.allFinite()) throw ValidationError("node Hessian is not finite");
  const Vector sv = Eigen::JacobiSVD<Matrix>(B).singularValues();
  const double cond = sv(0) / sv(p - 1);
  if (!(cond <= 1e12)) throw ValidationError("node Hessian is singular");
  return B.partialPivLu().solve(psi_sums.transpose()).transpose();
}

SplitScratch node_fit(const PanelDataset& data, std::span<const std::size_t> subjects, const SmoothSpec& spec,
                      const NodeFitOptions& opts, std::uint64_t seed) {
  const std::size_t n_p = subjects.size();
  if (n_p < 2) throw ValidationError("node needs at least 2 subjects");
  const std::vector<double> alpha(n_p, 1.0 / static_cast<double>(n_p));
  const NuisanceDesigns designs = build_nuisance_designs(data, subjects, alpha, opts.nuisance.penalize_intercept);
  const NuisanceFit nf = tune_and_fit_nuisance(designs, spec, opts.s, opts.n, opts.nuisance, seed);
  const ScoreSystem sys(data, subjects, alpha, nf, spec.tau);
  const ThetaSolution sol = solve_theta(sys, nf.theta_init, opts.theta);

  SplitScratch out;
  out.theta = sol.theta;
  const Index p_t = sys.p_t();
  out.A = Matrix::Zero(p_t, p_t);
  Matrix psi = Matrix::Zero(static_cast<Index>(n_p), p_t);
  const Vector fit = sys.t() * sol.theta + sys.offset();
  Index r = 0;
  for (std::size_t k = 0; k < n_p; ++k) {
    const double inv_m = 1.0 / static_cast<double>(data.m(subjects[k]));
    for (std::size_t j = 0; j < data.m(subjects[k]); ++j, ++r) {
      const double u = fit(r) - sys.y()(r);
      const double kh = kernel_density(spec.kernel, u / spec.h) / spec.h;
      out.A.noalias() -= (sys.weight()(r) * kh) * sys.e().row(r).transpose() * sys.t().row(r);
      const double phi = spec.tau - (sys.y()(r) <= fit(r) ? 1.0 : 0.0);
      psi.row(static_cast<Index>(k)) += (inv_m * phi) * sys.e().row(r);
    }
  }
  out.rho = influence_values(out.A, psi);
  if (!out.rho.allFinite()) throw ValidationError("influence values are not finite");
  return out;
}

// ---------------------------------------------------------------------------
// Split search

double heterogeneity_score(const Vector& left_sum, const Vector& right_sum, double n_left, double n_right, double mu) {
  const Index p = left_sum.size();
  double mx = 0.0;
  double total = 0.0;
  for (Index v = 0; v < p; ++v) {
    const double d = left_sum(v) * left_sum(v) / n_left + right_sum(v) * right_sum(v) / n_right;
    mx = v == 0 ? d : std::max(mx, d);
    total += d;
  }
  return mu * mx + (1.0 - mu) * total / static_cast<double>(p);
}

std::optional<Split> best_split(const RowMatrix& x, std::span<const std::size_t> s1_subjects, const Matrix& rho,
                                double mu, const ForestConfig& cfg, std::span<const int> features,
                                std::span<const std::size_t> s2_subjects) {
  const std::size_t n_p = s1_subjects.size();
  if (static_cast<std::size_t>(rho.rows()) != n_p) throw SchemaError("influence rows do not match node subjects");
  if (n_p < 2) return std::nullopt;
  const double min_child = std::max(1.0, cfg.min_child_fraction * static_cast<double>(n_p));
  const bool check_s2 = !s2_subjects.empty();
  const Index p_t = rho.cols();
  const Vector total = rho.colwise().sum().transpose();

  std::optional<Split> best;
  std::vector<std::size_t> order(n_p);
  std::vector<double> s2_vals;
  for (int f : features) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return x(static_cast<Index>(s1_subjects[a]), f) < x(static_cast<Index>(s1_subjects[b]), f);
    });
    if (check_s2) {
      s2_vals.clear();
      for (auto i : s2_subjects) s2_vals.push_back(x(static_cast<Index>(i), f));
      std::sort(s2_vals.begin(), s2_vals.end());
    }
    Vector left = Vector::Zero(p_t);
    for (std::size_t k = 1; k < n_p; ++k) {
      left += rho.row(static_cast<Index>(order[k - 1])).transpose();
      const double a = x(static_cast<Index>(s1_subjects[order[k - 1]]), f);
      const double b = x(static_cast<Index>(s1_subjects[order[k]]), f);
      if (!(a < b)) continue;
      const auto n_left = static_cast<double>(k);
      const auto n_right = static_cast<double>(n_p - k);
      if (n_left < min_child || n_right < min_child) continue;
      double thr = a + 0.5 * (b - a);
      if (!(thr < b)) thr = a;
      if (check_s2) {
        const auto s2_left = static_cast<std::size_t>(std::upper_bound(s2_vals.begin(), s2_vals.end(), thr) -
                                                      s2_vals.begin());
        const auto need = static_cast<std::size_t>(cfg.min_leaf_subjects);
        if (s2_left < need || s2_vals.size() - s2_left < need) continue;
      }
      const double score = heterogeneity_score(left, total - left, n_left, n_right, mu);
      if (!best || score > best->score + 1e-12 * std::abs(best->score)) best = Split{f, thr, score};
    }
  }
  if (best && best->score > 0.0) return best;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Tree growth

namespace {

struct Pending {
  int node;
  int depth;
  std::vector<std::size_t> s1;
  std::vector<std::size_t> s2;
};

std::vector<int> sample_features(std::size_t p_x, const ForestConfig& cfg, Rng& rng) {
  std::vector<int> all(p_x);
  std::iota(all.begin(), all.end(), 0);
  if (p_x <= 2 || !cfg.feature_fraction) return all;
  const auto k = std::min<std::size_t>(
      p_x, static_cast<std::size_t>(std::ceil(std::max(1.0, *cfg.feature_fraction * static_cast<double>(p_x)))));
  for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + uniform_index(rng, p_x - i)]);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

Tree grow_tree(const PanelDataset& data, const ForestConfig& cfg, const SmoothSpec& spec, const NodeFitOptions& opts,
               std::size_t tree_index) {
  const std::uint64_t tree_seed = derive_seed(cfg.seed, {tree_index});
  Rng rng(tree_seed);
  const std::size_t n = data.n_subjects();
  const auto s = std::min(n, static_cast<std::size_t>(std::ceil(cfg.subsample_ratio * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t k = 0; k < s; ++k) std::swap(idx[k], idx[k + uniform_index(rng, n - k)]);

  Tree tree;
  tree.s1.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(s / 2));
  tree.s2.assign(idx.begin() + static_cast<std::ptrdiff_t>(s / 2), idx.begin() + static_cast<std::ptrdiff_t>(s));
  std::sort(tree.s1.begin(), tree.s1.end());
  std::sort(tree.s2.begin(), tree.s2.end());

  const auto r = static_cast<std::size_t>(cfg.min_leaf_subjects);
  tree.nodes.emplace_back();
  std::vector<Pending> stack;
  stack.push_back({0, 0, tree.s1, tree.s2});
  while (!stack.empty()) {
    Pending cur = std::move(stack.back());
    stack.pop_back();
    const auto node_id = static_cast<std::uint64_t>(cur.node);

    std::optional<Split> split;
    if (cur.depth < cfg.max_depth && cur.s1.size() >= 2 * r && cur.s2.size() >= 2 * r) {
      Rng node_rng(derive_seed(tree_seed, {node_id}));
      const double mu = uniform01(node_rng);
      const std::vector<int> features = sample_features(data.p_x(), cfg, node_rng);
      try {
        SplitScratch sc = node_fit(data, cur.s1, spec, opts, derive_seed(tree_seed, {node_id, 1}));
        split = best_split(data.x(), cur.s1, sc.rho, mu, cfg, features, cur.s2);
      } catch (const Error&) {
        split.reset();
      }
    }
    if (!split) {
      tree.nodes[static_cast<std::size_t>(cur.node)].leaf_subjects = std::move(cur.s2);
      continue;
    }

    Pending lo{static_cast<int>(tree.nodes.size()), cur.depth + 1, {}, {}};
    Pending hi{lo.node + 1, cur.depth + 1, {}, {}};
    for (auto i : cur.s1) {
      (data.x()(static_cast<Index>(i), split->feature) <= split->threshold ? lo.s1 : hi.s1).push_back(i);
    }
    for (auto i : cur.s2) {
      (data.x()(static_cast<Index>(i), split->feature) <= split->threshold ? lo.s2 : hi.s2).push_back(i);
    }
    TreeNode& nd = tree.nodes[static_cast<std::size_t>(cur.node)];
    nd.feature = split->feature;
    nd.threshold = split->threshold;
    nd.left = lo.node;
    nd.right = hi.node;
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    stack.push_back(std::move(hi));
    stack.push_back(std::move(lo));
  }
  return tree;
}

Forest grow_forest(const PanelDataset& data, const ForestConfig& cfg, const SmoothSpec& spec, NodeFitOptions opts,
                   int threads) {
  cfg.validate();
  spec.validate();
  const std::size_t n = data.n_subjects();
  if (n < 2 * static_cast<std::size_t>(cfg.min_leaf_subjects)) {
    throw ValidationError("forest needs at least 2 * min_leaf_subjects subjects (have " + std::to_string(n) + ")");
  }
  opts.n = static_cast<double>(n);
  opts.s = std::min(static_cast<double>(n), std::ceil(cfg.subsample_ratio * static_cast<double>(n)));

  Forest forest;
  forest.n_subjects = n;
  forest.p_x = data.p_x();
  forest.config = cfg;
  forest.trees.resize(static_cast<std::size_t>(cfg.n_trees));
  parallel_for(forest.trees.size(), threads,
               [&](std::size_t b) { forest.trees[b] = grow_tree(data, cfg, spec, opts, b); });
  return forest;
}

Vector forest_weights(const Forest& forest, std::span<const double> x0) {
  if (x0.size() != forest.p_x) throw SchemaError("query point has wrong dimension");
  Vector alpha = Vector::Zero(static_cast<Index>(forest.n_subjects));
  std::size_t contributing = 0;
  for (const Tree& tree : forest.trees) {
    const TreeNode& leaf = tree.nodes[static_cast<std::size_t>(tree.leaf_of(x0))];
    if (leaf.leaf_subjects.empty()) continue;
    const double w = 1.0 / static_cast<double>(leaf.leaf_subjects.size());
    for (auto i : leaf.leaf_subjects) alpha(static_cast<Index>(i)) += w;
    ++contributing;
  }
  if (contributing > 0) alpha /= static_cast<double>(contributing);
  return alpha;
}

// ---------------------------------------------------------------------------
// Serialization

std::string Forest::to_json() const {
  json j;
  j["format"] = "oqrf-forest";
  j["format_version"] = 1;
  j["n_subjects"] = n_subjects;
  j["p_x"] = p_x;
  json c;
  c["n_trees"] = config.n_trees;
  c["subsample_ratio"] = config.subsample_ratio;
  c["max_depth"] = config.max_depth;
  c["min_leaf_subjects"] = config.min_leaf_subjects;
  c["min_child_fraction"] = config.min_child_fraction;
  c["feature_fraction"] = config.feature_fraction ? json(*config.feature_fraction) : json(nullptr);
  c["seed"] = config.seed;
  j["config"] = c;
  json ts = json::array();
  for (const Tree& t : trees) {
    json jt;
    jt["s1"] = t.s1;
    jt["s2"] = t.s2;
    json nodes = json::array();
    for (const TreeNode& nd : t.nodes) {
      if (nd.is_leaf()) {
        nodes.push_back({{"leaf", nd.leaf_subjects}});
      } else {
        nodes.push_back({{"f", nd.feature}, {"t", nd.threshold}, {"l", nd.left}, {"r", nd.right}});
      }
    }
    jt["nodes"] = std::move(nodes);
    ts.push_back(std::move(jt));
  }
  j["trees"] = std::move(ts);
  return j.dump();
}

Forest Forest::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("forest JSON: ") + e.what(), 0);
  }
  try {
    if (j.at("format") != "oqrf-forest") throw SchemaError("not a forest document");
    Forest f;
    f.n_subjects = j.at("n_subjects").get<std::size_t>();
    f.p_x = j.at("p_x").get<std::size_t>();
    const json& c = j.at("config");
    f.config.n_trees = c.at("n_trees").get<int>();
    f.config.subsample_ratio = c.at("subsample_ratio").get<double>();
    f.config.max_depth = c.at("max_depth").get<int>();
    f.config.min_leaf_subjects = c.at("min_leaf_subjects").get<int>();
    f.config.min_child_fraction = c.at("min_child_fraction").get<double>();
    if (!c.at("feature_fraction").is_null()) f.config.feature_fraction = c.at("feature_fraction").get<double>();
    f.config.seed = c.at("seed").get<std::uint64_t>();
    for (const json& jt : j.at("trees")) {
      Tree t;
      t.s1 = jt.at("s1").get<std::vector<std::size_t>>();
      t.s2 = jt.at("s2").get<std::vector<std::size_t>>();
      for (const json& jn : jt.at("nodes")) {
        TreeNode nd;
        if (jn.contains("leaf")) {
          nd.leaf_subjects = jn.at("leaf").get<std::vector<std::size_t>>();
        } else {
          nd.feature = jn.at("f").get<int>();
          nd.threshold = jn.at("t").get<double>();
          nd.left = jn.at("l").get<int>();
          nd.right = jn.at("r").get<int>();
        }
        t.nodes.push_back(std::move(nd));
      }
      const auto nn = static_cast<int>(t.nodes.size());
      for (int k = 0; k < nn; ++k) {
        const TreeNode& nd = t.nodes[static_cast<std::size_t>(k)];
        if (!nd.is_leaf() && (nd.left <= k || nd.left >= nn || nd.right <= k || nd.right >= nn ||
                              nd.feature >= static_cast<int>(f.p_x))) {
          throw SchemaError("forest JSON: invalid node reference");
        }
        for (auto i : nd.leaf_subjects) {
          if (i >= f.n_subjects) throw SchemaError("forest JSON: subject index out of range");
        }
      }
      if (t.nodes.empty()) throw SchemaError("forest JSON: empty tree");
      f.trees.push_back(std::move(t));
    }
    return f;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("forest JSON: ") + e.what());
  }
}

}  // namespace oqrf
