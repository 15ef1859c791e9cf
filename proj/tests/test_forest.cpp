#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oqrf/forest.hpp"
#include "oqrf/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace oqrf;

namespace {

PanelDataset small_data(int n_half, std::uint64_t seed, int setting = 1) {
  SimConfig sim;
  sim.setting = setting;
  sim.n = n_half;
  sim.p_w = 12;
  sim.seed = seed;
  return gen_dataset(sim);
}

ForestConfig small_config(int trees, std::uint64_t seed) {
  ForestConfig c;
  c.n_trees = trees;
  c.min_leaf_subjects = 5;
  c.seed = seed;
  return c;
}

const SmoothSpec kSpec{0.5, KernelType::gaussian, 0.2};

RowMatrix column(const std::vector<double>& v) {
  RowMatrix x(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Index>(i), 0) = v[i];
  return x;
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

Tree leaf_tree(std::vector<std::size_t> members) {
  Tree t;
  TreeNode leaf;
  leaf.leaf_subjects = members;
  t.nodes.push_back(leaf);
  t.s2 = std::move(members);
  return t;
}

}  // namespace

TEST_CASE("heterogeneity score") {
  const Vector one = Vector::Constant(1, 1.0);
  CHECK(heterogeneity_score(one, -one, 1, 1, 0.3) == 2.0);
  for (double mu : {0.0, 0.4, 1.0}) {
    CHECK(heterogeneity_score(Vector::Constant(1, 3.0), Vector::Constant(1, -1.0), 3, 2, mu) ==
          doctest::Approx(9.0 / 3 + 1.0 / 2));
  }
  const Vector l = (Vector(2) << 2.0, 1.0).finished();
  const Vector r = (Vector(2) << -1.0, 3.0).finished();
  const double d1 = 4.0 / 2 + 1.0 / 4, d2 = 1.0 / 2 + 9.0 / 4;
  CHECK(heterogeneity_score(l, r, 2, 4, 0.25) == doctest::Approx(0.25 * std::max(d1, d2) + 0.75 * 0.5 * (d1 + d2)));
}

TEST_CASE("influence values") {
  SUBCASE("zero scores give zero influence") {
    const Matrix a = Matrix::Constant(1, 1, -0.7);
    CHECK(influence_values(a, Matrix::Zero(5, 1)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("doubling A halves the influence exactly") {
    Matrix a(2, 2);
    a << -1.3, 0.2, 0.1, -0.8;
    Matrix psi(3, 2);
    psi << 0.3, -0.1, 0.05, 0.2, -0.4, 0.7;
    const Matrix r1 = influence_values(a, psi);
    const Matrix r2 = influence_values(2.0 * a, psi);
    CHECK(((0.5 * r1).array() == r2.array()).all());
  }
  SUBCASE("three subjects against a dense solve") {
    Matrix a(2, 2);
    a << 2.0, 0.3, -0.4, 1.1;
    Matrix psi(3, 2);
    psi << 1.0, 2.0, -0.5, 0.25, 0.0, 3.0;
    const double eps = 1e-8 * a.trace() / 2.0;
    const Matrix b = a + eps * Matrix::Identity(2, 2);
    const Matrix inv = b.fullPivLu().inverse();
    const Matrix got = influence_values(a, psi);
    for (Index i = 0; i < 3; ++i) CHECK((got.row(i).transpose() - inv * psi.row(i).transpose()).norm() <= 1e-10);
  }
  SUBCASE("singular or non-finite Hessian") {
    CHECK_THROWS_AS(influence_values(Matrix::Zero(2, 2), Matrix::Zero(1, 2)), ValidationError);
    // the ridge cancels the second eigenvalue: diag(1, x) + eps I with eps = -x
    const double x = -5e-9 / (1.0 + 5e-9);
    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = 1.0;
    a(1, 1) = x;
    CHECK_THROWS_AS(influence_values(a, Matrix::Zero(1, 2)), ValidationError);
    a(1, 1) = std::nan("");
    CHECK_THROWS_AS(influence_values(a, Matrix::Zero(1, 2)), ValidationError);
    // rank one plus the ridge stays below the condition limit
    a << 1.0, 1.0, 1.0, 1.0;
    CHECK(influence_values(a, Matrix::Zero(1, 2)).norm() == 0.0);
  }
}

TEST_CASE("best split") {
  ForestConfig cfg;
  cfg.min_child_fraction = 0.2;
  const std::vector<int> f0{0};
  SUBCASE("identical influence values: tie goes to the first admissible midpoint") {
    const RowMatrix x = column({0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.0});
    const Matrix rho = Matrix::Ones(10, 1);
    RowMatrix x2(10, 2);
    x2.col(0) = x.col(0);
    x2.col(1) = -x.col(0);
    const std::vector<int> both{0, 1};
    const auto s = best_split(x2, iota_n(10), rho, 0.5, cfg, both);
    REQUIRE(s);
    CHECK(s->feature == 0);
    // at least 2 subjects per child: the cut between the 2nd and 3rd smallest values
    CHECK(s->threshold == doctest::Approx(0.15));
  }
  SUBCASE("sign pattern is found by exhaustive search") {
    std::vector<double> xs;
    for (int i = 0; i < 40; ++i) xs.push_back((i + 0.5) / 40.0 + 0.003 * std::sin(i));
    const RowMatrix x = column(xs);
    Matrix rho(40, 1);
    for (int i = 0; i < 40; ++i) rho(i, 0) = xs[i] > 0.5 ? 1.0 : -1.0;
    const auto s = best_split(x, iota_n(40), rho, 0.5, cfg, f0);
    REQUIRE(s);
    // oracle: score every midpoint directly
    std::vector<double> sorted = xs;
    std::sort(sorted.begin(), sorted.end());
    double best = -1, best_thr = 0;
    for (std::size_t k = 8; k + 8 <= 40; ++k) {
      const double thr = 0.5 * (sorted[k - 1] + sorted[k]);
      double l = 0, r = 0;
      for (int i = 0; i < 40; ++i) (xs[i] <= thr ? l : r) += rho(i, 0);
      const double sc = l * l / k + r * r / (40 - k);
      if (sc > best) best = sc, best_thr = thr;
    }
    CHECK(s->threshold == doctest::Approx(best_thr));
    CHECK(s->score == doctest::Approx(best));
    CHECK(std::abs(s->threshold - 0.5) <= 1.0 / 40 + 0.01);
  }
  SUBCASE("no admissible split") {
    ForestConfig strict = cfg;
    strict.min_child_fraction = 0.5;
    const Matrix rho = (Matrix(3, 1) << 1.0, -1.0, 2.0).finished();
    CHECK_FALSE(best_split(column({0.1, 0.2, 0.3}), iota_n(3), rho, 0.5, strict, f0));
  }
  SUBCASE("zero influence gives no split") {
    CHECK_FALSE(best_split(column({0.1, 0.2, 0.3, 0.4, 0.5}), iota_n(5), Matrix::Zero(5, 1), 0.5, cfg, f0));
  }
  SUBCASE("estimation-side leaf size is respected") {
    std::vector<double> xs;
    for (int i = 0; i < 30; ++i) xs.push_back(i / 30.0);
    const RowMatrix x = column(xs);
    std::vector<std::size_t> s1, s2;
    for (std::size_t i = 0; i < 30; ++i) (i % 2 ? s2 : s1).push_back(i);
    Matrix rho(15, 1);
    for (int k = 0; k < 15; ++k) rho(k, 0) = k < 4 ? 5.0 : -1.0;
    ForestConfig c = cfg;
    c.min_leaf_subjects = 6;
    const auto s = best_split(x, s1, rho, 0.5, c, f0, s2);
    REQUIRE(s);
    const auto left = std::count_if(s2.begin(), s2.end(), [&](std::size_t i) { return xs[i] <= s->threshold; });
    CHECK(left >= 6);
    CHECK(static_cast<long>(s2.size()) - left >= 6);
  }
}

TEST_CASE("forest weights") {
  Forest f;
  f.n_subjects = 10;
  f.p_x = 1;
  f.trees.push_back(leaf_tree({3, 7}));
  const double x0[] = {0.5};
  Vector a = forest_weights(f, x0);
  CHECK(a(3) == 0.5);
  CHECK(a(7) == 0.5);
  CHECK(a.sum() == 1.0);
  f.trees.front() = leaf_tree({3});
  f.trees.push_back(leaf_tree({3, 7}));
  a = forest_weights(f, x0);
  CHECK(a(3) == 0.75);
  CHECK(a(7) == 0.25);
  f.trees.push_back(leaf_tree({}));
  CHECK(forest_weights(f, x0)(3) == 0.75);
}

TEST_CASE("forest growth") {
  const PanelDataset data = small_data(40, 1);
  SUBCASE("tree count and distinct subsamples") {
    const Forest f = grow_forest(data, small_config(3, 2), kSpec);
    REQUIRE(f.trees.size() == 3);
    std::set<std::vector<std::size_t>> samples;
    for (const Tree& t : f.trees) {
      std::vector<std::size_t> all = t.s1;
      all.insert(all.end(), t.s2.begin(), t.s2.end());
      std::sort(all.begin(), all.end());
      CHECK(all.size() == 40);
      CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
      CHECK(t.s1.size() == 20);
      samples.insert(all);
    }
    CHECK(samples.size() == 3);
  }
  SUBCASE("depth zero gives single leaves") {
    ForestConfig c = small_config(4, 3);
    c.max_depth = 0;
    const Forest f = grow_forest(data, c, kSpec);
    for (const Tree& t : f.trees) {
      REQUIRE(t.nodes.size() == 1);
      CHECK(t.nodes[0].leaf_subjects == t.s2);
    }
  }
  SUBCASE("leaves partition the estimation subjects") {
    const Forest f = grow_forest(data, small_config(6, 4), kSpec);
    bool split_seen = false;
    for (const Tree& t : f.trees) {
      std::vector<std::size_t> members;
      for (const TreeNode& nd : t.nodes) {
        if (!nd.is_leaf()) {
          split_seen = true;
          continue;
        }
        CHECK(nd.leaf_subjects.size() >= 5);
        members.insert(members.end(), nd.leaf_subjects.begin(), nd.leaf_subjects.end());
      }
      std::sort(members.begin(), members.end());
      CHECK(members == t.s2);
    }
    CHECK(split_seen);
  }
  SUBCASE("thread count does not change the forest") {
    const Forest a = grow_forest(data, small_config(6, 5), kSpec, {}, 1);
    const Forest b = grow_forest(data, small_config(6, 5), kSpec, {}, 4);
    CHECK(a.to_json() == b.to_json());
  }
  SUBCASE("serialization round trip") {
    const Forest a = grow_forest(data, small_config(3, 6), kSpec);
    const Forest b = Forest::from_json(a.to_json());
    CHECK(b.to_json() == a.to_json());
    const double x0[] = {0.37};
    CHECK((forest_weights(a, x0).array() == forest_weights(b, x0).array()).all());
    std::string broken = a.to_json();
    broken.replace(broken.find("oqrf-forest"), 11, "other-thing");
    CHECK_THROWS(Forest::from_json(broken));
  }
  SUBCASE("too few subjects") {
    ForestConfig c = small_config(2, 7);
    c.min_leaf_subjects = 50;
    CHECK_THROWS_AS(grow_forest(data, c, kSpec), ValidationError);
  }
  SUBCASE("weights over random query points") {
    const Forest f = grow_forest(data, small_config(8, 8), kSpec);
    Rng rng = make_rng(9, {1});
    std::set<std::size_t> s2_union;
    for (const Tree& t : f.trees) s2_union.insert(t.s2.begin(), t.s2.end());
    for (int k = 0; k < 1000; ++k) {
      const double x0[] = {uniform01(rng)};
      const Vector a = forest_weights(f, x0);
      CHECK(std::abs(a.sum() - 1.0) <= 1e-12);
      CHECK((a.array() >= 0.0).all());
      for (Index i = 0; i < a.size(); ++i) {
        if (a(i) > 0) CHECK(s2_union.count(static_cast<std::size_t>(i)) == 1);
      }
    }
  }
}

TEST_CASE("honesty: estimation responses never move a split") {
  const PanelDataset data = small_data(40, 11);
  const ForestConfig cfg = small_config(1, 12);
  NodeFitOptions opts;
  opts.n = 80;
  opts.s = 40;
  const Tree t = grow_tree(data, cfg, kSpec, opts, 0);
  std::vector<SubjectRecord> subjects;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    SubjectRecord s = data.subject(i);
    if (std::binary_search(t.s2.begin(), t.s2.end(), i)) {
      for (auto& o : s.obs) o.y = 100.0 * o.y + 17.0;
    }
    subjects.push_back(s);
  }
  const PanelDataset perturbed = PanelDataset::from_subjects(subjects);
  const Tree u = grow_tree(perturbed, cfg, kSpec, opts, 0);
  REQUIRE(t.nodes.size() == u.nodes.size());
  for (std::size_t k = 0; k < t.nodes.size(); ++k) {
    CHECK(t.nodes[k].feature == u.nodes[k].feature);
    CHECK(t.nodes[k].threshold == u.nodes[k].threshold);
    CHECK(t.nodes[k].leaf_subjects == u.nodes[k].leaf_subjects);
  }
  CHECK(t.nodes.size() > 1);
}

TEST_CASE("config validation") {
  ForestConfig c;
  CHECK_NOTHROW(c.validate());
  c.min_child_fraction = 0.3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ForestConfig{};
  c.subsample_ratio = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ForestConfig{};
  c.min_leaf_subjects = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("two-dimensional modifiers split on both coordinates") {
  const PanelDataset data = small_data(60, 13, 3);
  CHECK(data.p_x() == 2);
  const Forest f = grow_forest(data, small_config(10, 14), kSpec);
  CHECK(f.p_x == 2);
  const double x0[] = {0.3, 1.0};
  CHECK(std::abs(forest_weights(f, x0).sum() - 1.0) <= 1e-12);
}
