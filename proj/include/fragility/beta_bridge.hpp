#pragma once

// Moment-matched Beta surrogates for Probit-Normal marginals and the local
// conjugate update cycle PN -> Beta -> (weighted soft evidence) -> Beta -> PN.

#include <span>

#include "fragility/probit_normal.hpp"

namespace fragility {

struct BetaSurrogate {
  double alpha = 1.0;
  double gamma = 1.0;
};

/// One soft exceedance observation y in [0, 1] with its source weight w >= 0.
struct WeightedObservation {
  double y = 0.5;
  double weight = 1.0;
};

/// Variance floor applied before surrogate construction in the update cycle.
inline constexpr double kZetaFloor = 1e-10;

/// Throws DegenerateSurrogate for zeta == 0 and InfeasibleMoments when
/// zeta >= m(1-m).
BetaSurrogate beta_from_pn_moments(const PnMoments& mo);

PnMoments beta_moments(const BetaSurrogate& b);

/// alpha' = alpha + sum w y, gamma' = gamma + sum w (1 - y).
BetaSurrogate conjugate_update(const BetaSurrogate& prior,
                               std::span<const WeightedObservation> batch);

/// Full local cycle. An empty (or zero-weight) batch returns the prior unchanged.
PnMarginal local_update_cycle(const PnMarginal& prior, std::span<const WeightedObservation> batch);

enum class KlDirection { PnToBeta, BetaToPn };

/// D_KL in bits between PN(p) and Beta(b); PnToBeta is D_KL(PN || Beta).
double kl_pn_beta(const PnMarginal& p, const BetaSurrogate& b, KlDirection direction);

double beta_log_density(const BetaSurrogate& b, double x);

}  // namespace fragility
