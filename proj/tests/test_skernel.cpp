#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oqrf/common.hpp"
#include "oqrf/rng.hpp"
#include "oqrf/skernel.hpp"

#include <cmath>
#include <functional>

using namespace oqrf;

namespace {

const KernelType kAllKernels[] = {KernelType::gaussian, KernelType::epanechnikov, KernelType::uniform};

// Independent kernel densities written from their textbook definitions.
double density_oracle(KernelType k, double z) {
  switch (k) {
    case KernelType::gaussian:
      return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    case KernelType::epanechnikov:
      return std::abs(z) <= 1.0 ? 0.75 * (1.0 - z * z) : 0.0;
    case KernelType::uniform:
      return std::abs(z) <= 1.0 ? 0.5 : 0.0;
  }
  return 0.0;
}

double support(KernelType k) { return k == KernelType::gaussian ? 12.0 : 1.0; }

double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb, double whole,
               double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-13) {
  if (b <= a) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return simpson(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50);
}

// Integral over the kernel support split at the given interior breakpoints.
double integrate_pieces(const std::function<double(double)>& f, double lo, double hi, std::vector<double> cuts) {
  cuts.push_back(lo);
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = std::clamp(cuts[i], lo, hi), b = std::clamp(cuts[i + 1], lo, hi);
    total += integrate(f, a, b);
  }
  return total;
}

double cdf_oracle(KernelType k, double u) {
  const double s = support(k);
  if (u <= -s) return 0.0;
  return integrate_pieces([&](double z) { return density_oracle(k, z); }, -s, std::min(u, s), {0.0});
}

// rho_{tau h}(u) = integral of rho_tau(u + h z) K(z) dz
double smoothed_loss_oracle(const SmoothSpec& spec, double u) {
  const double s = support(spec.kernel);
  auto f = [&](double z) { return check_loss(spec.tau, u + spec.h * z) * density_oracle(spec.kernel, z); };
  return integrate_pieces(f, -s, s, {-u / spec.h, 0.0});
}

}  // namespace

TEST_CASE("check loss") {
  CHECK(check_loss(0.5, -2.0) == 1.0);
  CHECK(check_loss(0.9, 1.0) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(check_loss(0.9, -1.0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(check_loss(0.3, 0.0) == 0.0);
}

TEST_CASE("kernel cdf") {
  for (KernelType k : kAllKernels) {
    CHECK(kernel_cdf(k, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(kernel_cdf(k, 50.0) == 1.0);
    CHECK(kernel_cdf(k, -50.0) == 0.0);
    double prev = 0.0;
    for (int i = -400; i <= 400; ++i) {
      const double u = i / 100.0;
      const double c = kernel_cdf(k, u);
      CHECK(c >= prev);
      prev = c;
      CHECK(std::abs(c - cdf_oracle(k, u)) <= 1e-10);
      CHECK(std::abs(kernel_density(k, u) - density_oracle(k, u)) <= 1e-15);
    }
  }
  CHECK(kernel_cdf(KernelType::uniform, 1.0) == 1.0);
  CHECK(std::abs(kernel_cdf(KernelType::gaussian, 1.959964) - 0.975) <= 1e-6);
  CHECK(std::abs(normal_cdf(1.959964) - cdf_oracle(KernelType::gaussian, 1.959964)) <= 1e-12);
  CHECK(std::abs(normal_cdf(-8.0) - 6.22096057427178e-16) <= 1e-28);
}

TEST_CASE("smoothed loss matches quadrature of its defining integral") {
  for (KernelType k : kAllKernels) {
    for (double tau : {0.1, 0.5, 0.85}) {
      for (double h : {0.05, 0.4, 1.5}) {
        const SmoothSpec spec{tau, k, h};
        for (double u : {-3.0, -1.2, -0.4, -0.03, 0.0, 0.02, 0.3, 0.9, 2.5}) {
          CHECK(std::abs(smoothed_loss(spec, u) - smoothed_loss_oracle(spec, u)) <= 1e-10);
        }
      }
    }
  }
}

TEST_CASE("smoothed loss examples") {
  CHECK(smoothed_loss({0.5, KernelType::uniform, 1.0}, 0.0) == doctest::Approx(0.25).epsilon(1e-14));
  for (double tau : {0.2, 0.5, 0.7}) {
    for (double h : {0.3, 1.0}) {
      for (KernelType k : {KernelType::uniform, KernelType::epanechnikov}) {
        const SmoothSpec spec{tau, k, h};
        CHECK(smoothed_loss(spec, 2.0 * h) == doctest::Approx(check_loss(tau, 2.0 * h)).epsilon(1e-14));
        CHECK(smoothed_loss(spec, -h) == doctest::Approx(check_loss(tau, -h)).epsilon(1e-14));
        CHECK(smoothed_loss(spec, 1.7 * h) == doctest::Approx(check_loss(tau, 1.7 * h)).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("smoothed loss approaches the check loss linearly in h") {
  for (KernelType k : kAllKernels) {
    for (double u : {-0.7, 0.5}) {
      for (double h : {0.4, 0.2, 0.1, 0.05, 0.01}) {
        const SmoothSpec spec{0.3, k, h};
        // |rho_{tau h} - rho_tau| <= h * E|Z| * max(tau, 1 - tau) <= h
        CHECK(std::abs(smoothed_loss(spec, u) - check_loss(0.3, u)) <= h);
      }
    }
  }
}

TEST_CASE("smoothed score and curvature") {
  for (KernelType k : kAllKernels) {
    const SmoothSpec spec{0.3, k, 0.5};
    CHECK(smoothed_score(spec, 0.0) == doctest::Approx(0.3 - 0.5).epsilon(1e-14));
    CHECK(smoothed_score(spec, 1e6) == doctest::Approx(0.3));
    CHECK(smoothed_score(spec, -1e6) == doctest::Approx(0.3 - 1.0));
    for (double u : {-1.3, 0.2, 4.0}) {
      const double d = 1e-6;
      const double fd = (smoothed_loss(spec, u + d) - smoothed_loss(spec, u - d)) / (2 * d);
      const double sc = smoothed_score(spec, u);
      CHECK(std::abs(sc - fd) <= 1e-7 * std::max(1.0, std::abs(sc)));
    }
  }
  CHECK(std::abs(smoothed_curvature({0.5, KernelType::gaussian, 1.0}, 0.0) - 0.3989423) <= 1e-6);
  CHECK(smoothed_curvature({0.5, KernelType::uniform, 0.5}, 0.6) == 0.0);
  CHECK(smoothed_curvature({0.5, KernelType::uniform, 0.5}, -0.6) == 0.0);
  for (KernelType k : kAllKernels) {
    const SmoothSpec spec{0.6, k, 0.8};
    for (double u : {-1.1, -0.3, 0.1, 0.5, 1.4}) {
      const double d = 1e-6;
      const double fd = (smoothed_score(spec, u + d) - smoothed_score(spec, u - d)) / (2 * d);
      const double c = smoothed_curvature(spec, u);
      CHECK(c >= 0.0);
      CHECK(std::abs(c - fd) <= 1e-5 * std::max(1.0, std::abs(c)));
    }
  }
}

TEST_CASE("gradient consistency on a dense grid") {
  for (KernelType k : kAllKernels) {
    for (double tau : {0.2, 0.5, 0.8}) {
      for (double h : {0.3, 1.0}) {
        const SmoothSpec spec{tau, k, h};
        double worst = 0.0;
        for (int i = 0; i <= 400; ++i) {
          const double u = -5 * h + 10 * h * i / 400.0;
          const double d = 1e-7 * h;
          const double fd = (smoothed_loss(spec, u + d) - smoothed_loss(spec, u - d)) / (2 * d);
          const double sc = smoothed_score(spec, u);
          worst = std::max(worst, std::abs(sc - fd) / (1 + std::abs(sc)));
        }
        CHECK(worst <= 1e-6);
      }
    }
  }
}

TEST_CASE("convexity and dominance") {
  Rng rng = make_rng(5, {1});
  for (KernelType k : kAllKernels) {
    const SmoothSpec spec{0.35, k, 0.4};
    for (int i = 0; i < 1000; ++i) {
      const double u1 = 6 * uniform01(rng) - 3, u2 = 6 * uniform01(rng) - 3, l = uniform01(rng);
      CHECK(smoothed_loss(spec, l * u1 + (1 - l) * u2) <=
            l * smoothed_loss(spec, u1) + (1 - l) * smoothed_loss(spec, u2) + 1e-12);
      CHECK(smoothed_loss(spec, u1) >= check_loss(spec.tau, u1) - 1e-15);
    }
  }
}

TEST_CASE("bandwidth rule") {
  const double expected = std::sqrt(0.25) / 3.0 * std::pow(500.0 * std::log(202.0) / 1000.0, 0.25);
  CHECK(bandwidth_rule(0.5, 500, 1000, 202) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(bandwidth_rule(0.5, 500, 1000, 202) == doctest::Approx(0.2127).epsilon(2e-4));
  CHECK(bandwidth_rule(0.5, 1, 1e6, 2) == 0.1);
  CHECK(bandwidth_rule(0.5, 800, 1000, 202) >= bandwidth_rule(0.5, 200, 1000, 202));
}

TEST_CASE("spec validation and names") {
  CHECK_THROWS_AS((SmoothSpec{0.0, KernelType::gaussian, 0.1}.validate()), ValidationError);
  CHECK_THROWS_AS((SmoothSpec{0.5, KernelType::gaussian, 0.0}.validate()), ValidationError);
  CHECK_NOTHROW((SmoothSpec{0.5, KernelType::uniform, 0.1}.validate()));
  for (KernelType k : kAllKernels) CHECK(parse_kernel(to_string(k)) == k);
  CHECK_THROWS(parse_kernel("triangle"));
}
