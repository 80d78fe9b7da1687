#include "fragility/beta_bridge.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <fmt/format.h>

#include "fragility/errors.hpp"

namespace fragility {

namespace {

void validate(const BetaSurrogate& b) {
  if (!(b.alpha > 0.0 && b.gamma > 0.0) || !std::isfinite(b.alpha) || !std::isfinite(b.gamma)) {
    throw InvalidInput(fmt::format("Beta shapes must be positive and finite (got {}, {})", b.alpha,
                                   b.gamma));
  }
}

constexpr double kProbitLimit = 37.0;

double log_beta_function(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// log of the Beta density at x = Phi(q), using stable log Phi(q) and log Phi(-q).
double beta_log_density_at_probit(const BetaSurrogate& b, double q, double log_norm) {
  return (b.alpha - 1.0) * log_std_normal_cdf(q) + (b.gamma - 1.0) * log_std_normal_cdf(-q) -
         log_norm;
}

}  // namespace

BetaSurrogate beta_from_pn_moments(const PnMoments& mo) {
  if (!(mo.m > 0.0 && mo.m < 1.0)) {
    throw InfeasibleMoments(fmt::format("mean must lie in (0, 1) (got {})", mo.m));
  }
  if (mo.zeta == 0.0) {
    throw DegenerateSurrogate("zero variance has no Beta surrogate; apply a variance floor");
  }
  const double bound = mo.m * (1.0 - mo.m);
  if (!(mo.zeta > 0.0) || mo.zeta >= bound) {
    throw InfeasibleMoments(
        fmt::format("variance {} outside (0, m(1-m)) = (0, {})", mo.zeta, bound));
  }
  const double concentration = bound / mo.zeta - 1.0;
  return {mo.m * concentration, (1.0 - mo.m) * concentration};
}

PnMoments beta_moments(const BetaSurrogate& b) {
  validate(b);
  const double s = b.alpha + b.gamma;
  return {b.alpha / s, b.alpha * b.gamma / (s * s * (s + 1.0))};
}

BetaSurrogate conjugate_update(const BetaSurrogate& prior,
                               std::span<const WeightedObservation> batch) {
  validate(prior);
  BetaSurrogate post = prior;
  for (const auto& ob : batch) {
    if (!(ob.weight >= 0.0) || !std::isfinite(ob.weight)) {
      throw InvalidInput(fmt::format("observation weight must be finite and >= 0 (got {})",
                                     ob.weight));
    }
    if (!(ob.y >= 0.0 && ob.y <= 1.0)) {
      throw InvalidInput(fmt::format("soft observation must lie in [0, 1] (got {})", ob.y));
    }
    post.alpha += ob.weight * ob.y;
    post.gamma += ob.weight * (1.0 - ob.y);
  }
  return post;
}

PnMarginal local_update_cycle(const PnMarginal& prior,
                              std::span<const WeightedObservation> batch) {
  const bool informative =
      std::any_of(batch.begin(), batch.end(), [](const auto& ob) { return ob.weight > 0.0; });
  if (!informative) {
    // still validate the batch contents
    conjugate_update(BetaSurrogate{}, batch);
    return prior;
  }
  PnMoments mo = pn_moments(prior);
  if (mo.zeta < kZetaFloor) {
    const double bound = mo.m * (1.0 - mo.m);
    // a floor above m(1-m) would be infeasible; keep zeta strictly inside
    mo.zeta = std::min(kZetaFloor, 0.5 * bound);
    if (!(mo.zeta > 0.0)) throw DegenerateSurrogate("prior mean is pinned at 0 or 1");
  }
  const BetaSurrogate post = conjugate_update(beta_from_pn_moments(mo), batch);
  return pn_from_moments(beta_moments(post));
}

double beta_log_density(const BetaSurrogate& b, double x) {
  validate(b);
  if (!(x > 0.0 && x < 1.0)) throw DomainError("Beta density is evaluated on (0, 1)");
  return (b.alpha - 1.0) * std::log(x) + (b.gamma - 1.0) * std::log1p(-x) -
         log_beta_function(b.alpha, b.gamma);
}

double kl_pn_beta(const PnMarginal& p, const BetaSurrogate& b, KlDirection direction) {
  validate(b);
  if (!(p.sigma2 > 0.0) || !std::isfinite(p.mu) || !std::isfinite(p.sigma2)) {
    throw InvalidInput("KL needs a PN marginal with finite mu and sigma2 > 0");
  }
  // Integrate over the probit axis q = Phi^{-1}(x), dx = phi(q) dq, where both
  // densities are smooth; |q| <= 37 covers (0, 1) to the limit of doubles.
  const double sd = std::sqrt(p.sigma2);
  const double log_norm = log_beta_function(b.alpha, b.gamma);
  auto integrand = [&](double q) {
    const double log_pn = pn_log_density_at_probit(p, q);
    const double log_beta = beta_log_density_at_probit(b, q, log_norm);
    const double log_jac = -0.5 * q * q - 0.91893853320467274178;
    if (direction == KlDirection::PnToBeta) {
      const double w = std::exp(log_pn + log_jac);
      return w == 0.0 ? 0.0 : w * (log_pn - log_beta);
    }
    const double w = std::exp(log_beta + log_jac);
    return w == 0.0 ? 0.0 : w * (log_beta - log_pn);
  };

  // Restrict to the window holding essentially all of the reference mass.
  double q_lo, q_hi;
  if (direction == KlDirection::PnToBeta) {
    q_lo = p.mu - 12.0 * sd;
    q_hi = p.mu + 12.0 * sd;
  } else {
    constexpr double tail = 1e-16;
    const double x_lo = boost::math::ibeta_inv(b.alpha, b.gamma, tail);
    const double x_hi = boost::math::ibetac_inv(b.alpha, b.gamma, tail);
    q_lo = x_lo > 0.0 ? std_normal_quantile(x_lo) : -kProbitLimit;
    q_hi = x_hi < 1.0 ? std_normal_quantile(x_hi) : kProbitLimit;
  }
  q_lo = std::clamp(q_lo, -kProbitLimit, kProbitLimit);
  q_hi = std::clamp(q_hi, -kProbitLimit, kProbitLimit);
  if (!(q_hi > q_lo)) return 0.0;

  constexpr int n_panels = 256;
  const double step = (q_hi - q_lo) / n_panels;
  double total = 0.0;
  for (int k = 0; k < n_panels; ++k) {
    const double a = q_lo + k * step;
    total += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(integrand, a, a + step,
                                                                            6, 1e-12);
  }
  if (!std::isfinite(total)) throw NumericalFailure("KL quadrature produced a non-finite value");
  return std::max(total, 0.0) / std::numbers::ln2;
}

}  // namespace fragility
