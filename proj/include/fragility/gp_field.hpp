#pragma once

// Probit-warped heteroscedastic Gaussian process over (building, state) pairs.
//
// Pseudo-observations z_p = Z(x_p) + e_p, e_p ~ N(0, noise_p), zero-mean prior
// with the composite kernel
//
//   k(p, q) = s2 * rbf(s_p - s_q; ell1, ell2) * arch(a_p, a_q) * [j_p == j_q]
//           + alpha * s2 * [i_p == i_q] * exp(-(|z_p - z_q| + eps |j_p - j_q|) / tau)
//
// where arch = 1 for equal archetypes and rho_a otherwise. The global term
// never couples distinct damage states; the local term only acts within a
// building.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "fragility/hazard_prior.hpp"
#include "fragility/probit_normal.hpp"

namespace fragility {

struct FieldPoint {
  std::size_t building = 0;
  std::size_t state = 0;
  Point2 coords;  // kernel units (see CoordinateScaling)
  int archetype = 1;
  double z = 0.0;      // pseudo-observation mean, probit units
  double noise = 1.0;  // pseudo-observation variance, > 0
};

/// Tie-break added to the local-kernel argument per unit state distance.
inline constexpr double kStateTieBreak = 1e-8;

struct CompositeKernelParams {
  double sigma2_global = 1.0;
  double ell1 = 1.0;
  double ell2 = 1.0;
  double rho_a = 0.5;
  double alpha_local = 0.2;
  double tau = 1.0;
  double jitter = 0.0;  // extra diagonal; the Cholesky ladder starts at 1e-10 on failure

  void validate() const;
};

inline constexpr std::size_t kNumHyperparameters = 6;
/// Order used by gradients, bounds and trajectories.
inline constexpr std::array<const char*, kNumHyperparameters> kHyperparameterNames = {
    "sigma2_global", "ell1", "ell2", "rho_a", "alpha_local", "tau"};

std::array<double, kNumHyperparameters> to_array(const CompositeKernelParams& p);
CompositeKernelParams from_array(const std::array<double, kNumHyperparameters>& v,
                                 double jitter);

/// Zero-mean, unit-variance scaling per axis; axes with zero spread are
/// only centred.
struct CoordinateScaling {
  Point2 mean;
  Point2 scale{1.0, 1.0};

  static CoordinateScaling fit(std::span<const Point2> points);
  Point2 apply(const Point2& p) const {
    return {(p.x - mean.x) / scale.x, (p.y - mean.y) / scale.y};
  }
};

double kernel_entry(const FieldPoint& p, const FieldPoint& q, const CompositeKernelParams& params);

Eigen::MatrixXd kernel_matrix(std::span<const FieldPoint> points,
                              const CompositeKernelParams& params);

Eigen::MatrixXd cross_kernel(std::span<const FieldPoint> rows, std::span<const FieldPoint> cols,
                             const CompositeKernelParams& params);

struct GpPosterior {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  std::optional<Eigen::MatrixXd> covariance;
  double jitter_used = 0.0;
};

struct ExactOptions {
  std::size_t max_points = 4000;
  bool full_covariance = false;
};

/// mean = K (K + S)^{-1} z, cov = K - K (K + S)^{-1} K.
GpPosterior exact_posterior(std::span<const FieldPoint> points,
                            const CompositeKernelParams& params, const ExactOptions& options = {});

double log_marginal_likelihood(std::span<const FieldPoint> points,
                               const CompositeKernelParams& params);

struct LmlWithGradient {
  double value = 0.0;
  std::array<double, kNumHyperparameters> gradient{};  // d value / d parameter
};

LmlWithGradient log_marginal_likelihood_with_gradient(std::span<const FieldPoint> points,
                                                      const CompositeKernelParams& params);

struct ParameterRange {
  double lo = 0.0;
  double hi = 1.0;
  bool log_scale = false;
};

struct HyperparameterBounds {
  std::array<ParameterRange, kNumHyperparameters> ranges = {
      ParameterRange{1e-3, 1e2, true},  // sigma2_global
      ParameterRange{1e-2, 1e2, true},  // ell1
      ParameterRange{1e-2, 1e2, true},  // ell2
      ParameterRange{0.0, 1.0, false},  // rho_a
      ParameterRange{0.0, 1.0, false},  // alpha_local
      ParameterRange{0.05, 10.0, true}  // tau
  };
};

struct FitOptions {
  int restarts = 3;  // total starts, the first at init
  int max_iterations = 500;
  double tolerance = 1e-6;
  std::uint64_t seed = 0;
};

struct FitResult {
  CompositeKernelParams params;
  double log_marginal_likelihood = 0.0;
  double initial_log_marginal_likelihood = 0.0;
  int iterations = 0;
  int evaluations = 0;
};

/// Maximises the log marginal likelihood with L-BFGS on a bounded
/// (scaled-logit) reparameterisation. Never returns worse than init.
FitResult fit_hyperparameters(std::span<const FieldPoint> points,
                              const CompositeKernelParams& init,
                              const HyperparameterBounds& bounds = {},
                              const FitOptions& options = {});

struct SparseOptions {
  std::vector<std::size_t> inducing;  // indices into the training points
  bool analytic = true;  // closed-form optimal q(u); otherwise natural-gradient ascent
  int max_iterations = 200;
  double step = 0.5;
  double tolerance = 1e-10;
};

/// Inducing variables carry the global (spatial) term; the within-building
/// local term and the noise are block diagonal and handled exactly.
struct SparseResult {
  GpPosterior posterior;
  Eigen::VectorXd inducing_mean;        // omega, global term at the inducing points
  Eigen::MatrixXd inducing_covariance;  // Y
  std::vector<double> elbo_trace;       // one entry per accepted state, starting at q(u) = p(u)
};

SparseResult sparse_variational_posterior(std::span<const FieldPoint> points,
                                          const CompositeKernelParams& params,
                                          const SparseOptions& options);

/// k-means over standardised (x, y, archetype, state, z) features; returns
/// the distinct training points nearest each centroid, sorted.
std::vector<std::size_t> select_inducing_points(std::span<const FieldPoint> points,
                                                std::size_t count, std::uint64_t seed);

/// Per-point probability-space moments of the latent posterior marginals.
std::vector<PnMoments> posterior_to_probability(const GpPosterior& posterior);

/// Number of buildings whose means break m_mod >= m_ext >= m_comp
/// (building-major layout, kNumStates per building).
std::size_t count_ordinality_violations(std::span<const PnMoments> moments);

/// Decreasing rearrangement of latent means within each building
/// (building-major layout). Variances travel with their state slot.
void enforce_ordinality(std::span<const FieldPoint> points, GpPosterior& posterior);

}  // namespace fragility
