#pragma once

#include <string>
#include <string_view>

namespace oqrf {

enum class KernelType { gaussian, epanechnikov, uniform };

KernelType parse_kernel(std::string_view name);
std::string to_string(KernelType k);

/// Quantile level, kernel and bandwidth of the convolution-smoothed check loss.
struct SmoothSpec {
  double tau = 0.5;
  KernelType kernel = KernelType::gaussian;
  double h = 0.1;

  /// Throws ValidationError unless 0 < tau < 1 and h > 0.
  void validate() const;
};

double normal_pdf(double u);
double normal_cdf(double u);

/// rho_tau(u) = (tau - 1{u <= 0}) u
double check_loss(double tau, double u);
inline double check_loss(const SmoothSpec& spec, double u) { return check_loss(spec.tau, u); }

/// Unit-bandwidth kernel density K(u) and its integral Kbar(u).
double kernel_density(KernelType k, double u);
double kernel_cdf(KernelType k, double u);
inline double kernel_cdf(const SmoothSpec& spec, double u) { return kernel_cdf(spec.kernel, u); }

/// rho_{tau h}(u) = E[rho_tau(u + h Z)], Z ~ K. Closed form for each kernel.
double smoothed_loss(const SmoothSpec& spec, double u);

/// d/du smoothed_loss(u) = tau - Kbar(-u / h), with u the residual y - fit.
double smoothed_score(const SmoothSpec& spec, double residual);

/// d^2/du^2 smoothed_loss(u) = K(-u / h) / h.
double smoothed_curvature(const SmoothSpec& spec, double residual);

/// max{ sqrt(tau(1-tau))/3 * (s log(p_total) / n)^(1/4), 0.1 }
double bandwidth_rule(double tau, double s, double n, double p_total);

}  // namespace oqrf
