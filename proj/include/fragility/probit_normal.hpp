#pragma once

// Probit-Normal marginals: P = Phi(Z) with Z ~ N(mu, sigma2).
//
// The latent index Z is built from lognormal hazard and capacity laws,
//   mu     = (lambda_h - lambda_c) / beta
//   sigma2 = (beta_h^2 + beta_c^2) / beta^2
// and its exceedance-probability moments have the closed form
//   m    = Phi(v)
//   zeta = Phi2(v, v, eta) - Phi(v)^2
// with v = mu / sqrt(1 + sigma2), eta = sigma2 / (1 + sigma2).

#include <span>
#include <vector>

namespace fragility {

struct HazardLaw {
  double lambda_h = 0.0;  // log-mean hazard intensity, ln(m/s)
  double beta_h = 0.0;    // epistemic log-std of hazard
};

struct CapacityLaw {
  double lambda_c = 0.0;       // log-median capacity, ln(m/s)
  double beta_c = 0.0;         // epistemic log-std of capacity
  double beta_aleatory = 1.0;  // fragility dispersion
};

struct PnMarginal {
  double mu = 0.0;
  double sigma2 = 0.0;
};

/// Mean and variance of the exceedance probability P.
struct PnMoments {
  double m = 0.5;
  double zeta = 0.0;
};

PnMarginal latent_from_physics(const HazardLaw& h, const CapacityLaw& c);

double std_normal_pdf(double x);
double std_normal_cdf(double x);
/// ln Phi(x), accurate deep into the lower tail.
double log_std_normal_cdf(double x);
/// Inverse of std_normal_cdf. Throws DomainError outside (0, 1).
double std_normal_quantile(double p);

/// Phi2(h, h, rho): P(X <= h, Y <= h) for a standard bivariate normal with
/// correlation rho. rho = +-1 are evaluated as limits.
double bivariate_equal_cdf(double h, double rho);

/// Phi2(h, h, rho) - Phi(h)^2, evaluated directly (no cancellation).
double bivariate_equal_excess(double h, double rho);

PnMoments pn_moments(const PnMarginal& p);

/// Inverse of pn_moments. The latent variance is capped at kMaxLatentVariance
/// when zeta approaches m(1-m).
PnMarginal pn_from_moments(const PnMoments& mo);

inline constexpr double kMaxLatentVariance = 1e6;

/// Log density of PN(mu, sigma2) at probability x in (0, 1). Requires sigma2 > 0.
double pn_log_density(const PnMarginal& p, double x);

/// Same density expressed at probit location q = Phi^{-1}(x).
double pn_log_density_at_probit(const PnMarginal& p, double q);

/// Clip per-state latent means (ordered by increasing severity) to
/// [-bound, bound]. Values pinned at the upper bound are separated top-down,
/// values pinned at the lower bound bottom-up, so the output stays ordinal.
std::vector<double> clip_ordinal_probit(std::span<const double> mus, double bound,
                                        double separation);

}  // namespace fragility
