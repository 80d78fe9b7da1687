#include "fragility/probit_normal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>

#include "fragility/errors.hpp"

namespace fragility {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

void require_finite(double x, const char* name) {
  if (!std::isfinite(x)) throw InvalidInput(fmt::format("{} must be finite (got {})", name, x));
}

// Acklam's rational approximation on the lower half, |rel err| < 1.2e-9.
double acklam_lower(double p) {
  static constexpr std::array<double, 6> a = {-3.969683028665376e+01, 2.209460984245205e+02,
                                              -2.759285104469687e+02, 1.383577518672690e+02,
                                              -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr std::array<double, 5> b = {-5.447609879822406e+01, 1.615858368580409e+02,
                                              -1.556989798598866e+02, 6.680131188771972e+01,
                                              -1.328068155288572e+01};
  static constexpr std::array<double, 6> c = {-7.784894002430293e-03, -3.223964580411365e-01,
                                              -2.400758277161838e+00, -2.549732539343734e+00,
                                              4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr std::array<double, 4> d = {7.784695709041462e-03, 3.224671290700398e-01,
                                              2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

PnMarginal latent_from_physics(const HazardLaw& h, const CapacityLaw& c) {
  require_finite(h.lambda_h, "lambda_h");
  require_finite(h.beta_h, "beta_h");
  require_finite(c.lambda_c, "lambda_c");
  require_finite(c.beta_c, "beta_c");
  require_finite(c.beta_aleatory, "beta_aleatory");
  if (h.beta_h < 0.0 || c.beta_c < 0.0) throw InvalidInput("epistemic log-stds must be >= 0");
  if (c.beta_aleatory <= 0.0) throw InvalidInput("fragility dispersion must be > 0");
  const double b2 = c.beta_aleatory * c.beta_aleatory;
  return {(h.lambda_h - c.lambda_c) / c.beta_aleatory,
          (h.beta_h * h.beta_h + c.beta_c * c.beta_c) / b2};
}

double std_normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double log_std_normal_cdf(double x) {
  if (x > -30.0) return std::log(std_normal_cdf(x));
  // Asymptotic series of the Mills ratio; relative error < 1e-16 here.
  const double z = 1.0 / (x * x);
  const double series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z)));
  return -0.5 * x * x - kLogSqrt2Pi - std::log(-x) + std::log(series);
}

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError(fmt::format("normal quantile needs 0 < p < 1 (got {})", p));
  }
  // Work on the lower half so the Halley residual is computed without
  // cancellation; 1 - p is exact for p >= 0.5.
  const bool upper = p > 0.5;
  const double pl = upper ? 1.0 - p : p;
  double x = acklam_lower(pl);
  const double e = std_normal_cdf(x) - pl;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return upper ? -x : x;
}

double bivariate_equal_excess(double h, double rho) {
  if (std::isnan(rho) || std::abs(rho) > 1.0) {
    throw DomainError(fmt::format("correlation must lie in [-1, 1] (got {})", rho));
  }
  require_finite(h, "h");
  if (rho == 0.0) return 0.0;
  // Phi2(h,h,rho) - Phi(h)^2 = (1/2pi) int_0^rho exp(-h^2/(1+r)) / sqrt(1-r^2) dr.
  // With r = sin(t) the endpoint singularity disappears.
  const double h2 = h * h;
  auto integrand = [h2](double t) {
    const double s = 1.0 + std::sin(t);
    if (s <= 0.0) return h2 == 0.0 ? 1.0 : 0.0;
    return std::exp(-h2 / s);
  };
  const double upper = std::asin(rho);
  double error = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
      integrand, 0.0, upper, 15, 1e-11, &error);
  if (!std::isfinite(value)) throw NumericalFailure("bivariate normal quadrature diverged");
  return value / (2.0 * std::numbers::pi);
}

double bivariate_equal_cdf(double h, double rho) {
  const double excess = bivariate_equal_excess(h, rho);
  const double p = std_normal_cdf(h);
  const double lo = std::max(0.0, 2.0 * p - 1.0);
  return std::clamp(p * p + excess, lo, p);
}

PnMoments pn_moments(const PnMarginal& p) {
  if (!std::isfinite(p.mu)) throw InvalidInput("PN latent mean must be finite");
  if (std::isnan(p.sigma2) || p.sigma2 < 0.0) throw InvalidInput("PN latent variance must be >= 0");
  if (p.sigma2 == 0.0) return {std_normal_cdf(p.mu), 0.0};
  if (std::isinf(p.sigma2)) {
    const double m = 0.5;
    return {m, m * (1.0 - m)};
  }
  const double v = p.mu / std::sqrt(1.0 + p.sigma2);
  const double eta = p.sigma2 / (1.0 + p.sigma2);
  return {std_normal_cdf(v), bivariate_equal_excess(v, eta)};
}

PnMarginal pn_from_moments(const PnMoments& mo) {
  if (!(mo.m > 0.0 && mo.m < 1.0)) {
    throw InfeasibleMoments(fmt::format("mean must lie in (0, 1) (got {})", mo.m));
  }
  const double bound = mo.m * (1.0 - mo.m);
  if (!(mo.zeta >= 0.0) || mo.zeta >= bound) {
    throw InfeasibleMoments(
        fmt::format("variance {} outside [0, m(1-m)) = [0, {})", mo.zeta, bound));
  }
  const double v = std_normal_quantile(mo.m);
  if (mo.zeta == 0.0) return {v, 0.0};

  constexpr double eta_cap = kMaxLatentVariance / (1.0 + kMaxLatentVariance);
  double eta;
  if (mo.zeta >= bivariate_equal_excess(v, eta_cap)) {
    eta = eta_cap;
  } else {
    // the excess is increasing in eta on [0, 1)
    double lo = 0.0;
    double hi = eta_cap;
    while (hi - lo > 1e-12) {
      const double mid = 0.5 * (lo + hi);
      if (bivariate_equal_excess(v, mid) < mo.zeta) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    eta = 0.5 * (lo + hi);
  }
  const double sigma2 = std::min(eta / (1.0 - eta), kMaxLatentVariance);
  return {v * std::sqrt(1.0 + sigma2), sigma2};
}

double pn_log_density_at_probit(const PnMarginal& p, double q) {
  if (!(p.sigma2 > 0.0)) throw InvalidInput("PN density requires sigma2 > 0");
  const double z = (q - p.mu) / std::sqrt(p.sigma2);
  return -0.5 * z * z + 0.5 * q * q - 0.5 * std::log(p.sigma2);
}

double pn_log_density(const PnMarginal& p, double x) {
  if (!(x > 0.0 && x < 1.0)) throw DomainError("PN density is supported on (0, 1)");
  return pn_log_density_at_probit(p, std_normal_quantile(x));
}

std::vector<double> clip_ordinal_probit(std::span<const double> mus, double bound,
                                        double separation) {
  if (!(bound > 0.0)) throw InvalidInput("clip bound must be > 0");
  if (!(separation >= 0.0)) throw InvalidInput("separation must be >= 0");
  const auto n = mus.size();
  if (static_cast<double>(n) * separation > 2.0 * bound) {
    throw InvalidInput(fmt::format("{} states with separation {} do not fit in [-{}, {}]", n,
                                   separation, bound, bound));
  }
  for (const double mu : mus) require_finite(mu, "latent mean");
  if (n == 0) return {};

  // Crossing fragility curves can put a milder state below a more severe one;
  // exceeding the severe state implies exceeding the milder one.
  std::vector<double> raw(mus.begin(), mus.end());
  for (std::size_t j = n - 1; j-- > 0;) raw[j] = std::max(raw[j], raw[j + 1]);

  std::vector<double> out(n);
  std::vector<bool> high(n), low(n);
  for (std::size_t j = 0; j < n; ++j) {
    high[j] = raw[j] > bound;
    low[j] = raw[j] < -bound;
    out[j] = std::clamp(raw[j], -bound, bound);
  }

  // Top-down from the upper bound: push successors down only while they
  // collide with a pinned predecessor.
  bool pinned = high[0];
  for (std::size_t j = 1; j < n; ++j) {
    if (pinned && out[j] > out[j - 1] - separation) {
      out[j] = out[j - 1] - separation;
    } else {
      pinned = high[j];
    }
  }
  // Bottom-up from the lower bound.
  pinned = low[n - 1];
  for (std::size_t j = n - 1; j-- > 0;) {
    if (pinned && out[j] < out[j + 1] + separation) {
      out[j] = out[j + 1] + separation;
    } else {
      pinned = low[j];
    }
  }
  return out;
}

}  // namespace fragility
