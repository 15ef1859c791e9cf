#include "oqrf/skernel.hpp"

#include "oqrf/common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace oqrf {

KernelType parse_kernel(std::string_view name) {
  if (name == "gaussian") return KernelType::gaussian;
  if (name == "epanechnikov") return KernelType::epanechnikov;
  if (name == "uniform") return KernelType::uniform;
  throw ValidationError("unknown kernel '" + std::string(name) + "'");
}

std::string to_string(KernelType k) {
  switch (k) {
    case KernelType::gaussian: return "gaussian";
    case KernelType::epanechnikov: return "epanechnikov";
    case KernelType::uniform: return "uniform";
  }
  return "?";
}

void SmoothSpec::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0,1)");
  if (!(h > 0.0) || !std::isfinite(h)) throw ValidationError("bandwidth must be positive");
}

double normal_pdf(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double u) { return 0.5 * std::erfc(-u / std::numbers::sqrt2); }

double check_loss(double tau, double u) { return (tau - (u <= 0.0 ? 1.0 : 0.0)) * u; }

double kernel_density(KernelType k, double u) {
  switch (k) {
    case KernelType::gaussian: return normal_pdf(u);
    case KernelType::epanechnikov: return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
    case KernelType::uniform: return std::abs(u) <= 1.0 ? 0.5 : 0.0;
  }
  return 0.0;
}

double kernel_cdf(KernelType k, double u) {
  switch (k) {
    case KernelType::gaussian: return normal_cdf(u);
    case KernelType::epanechnikov:
      if (u <= -1.0) return 0.0;
      if (u >= 1.0) return 1.0;
      return 0.5 + 0.75 * (u - u * u * u / 3.0);
    case KernelType::uniform:
      if (u <= -1.0) return 0.0;
      if (u >= 1.0) return 1.0;
      return 0.5 * (u + 1.0);
  }
  return 0.0;
}

// rho_tau(v) = tau v + max(-v, 0), so the smoothed loss is tau u + E[max(-u - hZ, 0)].
double smoothed_loss(const SmoothSpec& spec, double u) {
  const double h = spec.h;
  switch (spec.kernel) {
    case KernelType::gaussian: {
      const double z = u / h;
      return (spec.tau - normal_cdf(-z)) * u + h * normal_pdf(z);
    }
    case KernelType::uniform:
      if (std::abs(u) >= h) return check_loss(spec.tau, u);
      return spec.tau * u + (h - u) * (h - u) / (4.0 * h);
    case KernelType::epanechnikov: {
      if (std::abs(u) >= h) return check_loss(spec.tau, u);
      const double a = -u / h;
      const double a2 = a * a;
      return spec.tau * u + 0.75 * h * (a2 / 2.0 - a2 * a2 / 12.0 + 2.0 * a / 3.0 + 0.25);
    }
  }
  return 0.0;
}

double smoothed_score(const SmoothSpec& spec, double residual) {
  return spec.tau - kernel_cdf(spec.kernel, -residual / spec.h);
}

double smoothed_curvature(const SmoothSpec& spec, double residual) {
  return kernel_density(spec.kernel, -residual / spec.h) / spec.h;
}

double bandwidth_rule(double tau, double s, double n, double p_total) {
  const double h = std::sqrt(tau * (1.0 - tau)) / 3.0 * std::pow(s * std::log(p_total) / n, 0.25);
  return std::max(h, 0.1);
}

}  // namespace oqrf
