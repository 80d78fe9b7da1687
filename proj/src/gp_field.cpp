#include "fragility/gp_field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>
#include <fmt/format.h>

#include "fragility/errors.hpp"
#include "fragility/kmeans.hpp"
#include "fragility/rng.hpp"

namespace fragility {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kJitterFloor = 1e-10;
constexpr double kJitterCap = 1e-4;

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Kernel pieces for one pair, without the variance scale s2:
//   global = rbf * arch * [j == j*],  local = [i == i*] * exp(-d / tau)
struct PairTerms {
  double rbf = 0.0;
  double arch = 0.0;
  double dx2 = 0.0;  // squared coordinate differences
  double dy2 = 0.0;
  bool same_state = false;
  bool same_building = false;
  bool same_archetype = false;
  double local = 0.0;
  double local_distance = 0.0;
};

PairTerms pair_terms(const FieldPoint& p, const FieldPoint& q, const CompositeKernelParams& k) {
  PairTerms t;
  t.same_state = p.state == q.state;
  t.same_building = p.building == q.building;
  t.same_archetype = p.archetype == q.archetype;
  if (t.same_state) {
    const double dx = p.coords.x - q.coords.x;
    const double dy = p.coords.y - q.coords.y;
    t.dx2 = dx * dx;
    t.dy2 = dy * dy;
    t.rbf = std::exp(-0.5 * (t.dx2 / (k.ell1 * k.ell1) + t.dy2 / (k.ell2 * k.ell2)));
    t.arch = t.same_archetype ? 1.0 : k.rho_a;
  }
  if (t.same_building) {
    const double dj = std::abs(static_cast<double>(p.state) - static_cast<double>(q.state));
    t.local_distance = std::abs(p.z - q.z) + kStateTieBreak * dj;
    t.local = std::exp(-t.local_distance / k.tau);
  }
  return t;
}

double combine(const PairTerms& t, const CompositeKernelParams& k) {
  return k.sigma2_global * (t.rbf * t.arch + k.alpha_local * t.local);
}

void validate_points(std::span<const FieldPoint> points) {
  if (points.empty()) throw InvalidInput("GP needs at least one field point");
  for (const auto& p : points) {
    if (p.state >= kNumStates) throw InvalidInput("field point state index out of range");
    if (!std::isfinite(p.z) || !std::isfinite(p.coords.x) || !std::isfinite(p.coords.y)) {
      throw InvalidInput("field point has non-finite coordinates or pseudo-observation");
    }
    if (!(p.noise > 0.0) || !std::isfinite(p.noise)) {
      throw InvalidInput(fmt::format("pseudo-observation variance must be > 0 (got {})", p.noise));
    }
  }
}

// Cholesky of a symmetric matrix, escalating diagonal jitter x10 from
// `start` until it succeeds or exceeds the cap.
Eigen::LLT<MatrixXd> factor_with_jitter(MatrixXd a, double start, double& used) {
  double jitter = start;
  if (jitter > 0.0) a.diagonal().array() += jitter;
  while (true) {
    Eigen::LLT<MatrixXd> llt(a);
    if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().allFinite()) {
      used = jitter;
      return llt;
    }
    const double next = std::max(jitter * 10.0, kJitterFloor);
    if (next > kJitterCap) {
      throw NumericalFailure(
          fmt::format("Cholesky failed with diagonal jitter up to {}", jitter));
    }
    a.diagonal().array() += next - jitter;
    jitter = next;
  }
}

MatrixXd noisy_gram(std::span<const FieldPoint> points, const CompositeKernelParams& params,
                    MatrixXd* kernel_out) {
  MatrixXd k = kernel_matrix(points, params);
  MatrixXd a = k;
  for (std::size_t i = 0; i < points.size(); ++i) {
    a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += points[i].noise;
  }
  if (kernel_out) *kernel_out = std::move(k);
  return a;
}

VectorXd observations(std::span<const FieldPoint> points) {
  VectorXd z(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) z(static_cast<Eigen::Index>(i)) = points[i].z;
  return z;
}

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// Bounded reparameterisation: each hyperparameter is an affine image of a
// logistic, on a log axis for scale-type parameters.
constexpr double kStartLogitBound = 5.0;

struct Reparam {
  HyperparameterBounds bounds;

  double natural(std::size_t k, double u) const {
    const auto& r = bounds.ranges[k];
    // open interval, so rho_a and alpha_local never reach 0 or 1
    const double s = std::clamp(sigmoid(u), 1e-12, 1.0 - 1e-12);
    if (r.log_scale) {
      return std::exp(std::log(r.lo) + (std::log(r.hi) - std::log(r.lo)) * s);
    }
    return r.lo + (r.hi - r.lo) * s;
  }
  double derivative(std::size_t k, double u) const {
    const auto& r = bounds.ranges[k];
    const double s = sigmoid(u);
    if (r.log_scale) return natural(k, u) * (std::log(r.hi) - std::log(r.lo)) * s * (1.0 - s);
    return (r.hi - r.lo) * s * (1.0 - s);
  }
  double unconstrained(std::size_t k, double x) const {
    const auto& r = bounds.ranges[k];
    double s = r.log_scale ? (std::log(x) - std::log(r.lo)) / (std::log(r.hi) - std::log(r.lo))
                           : (x - r.lo) / (r.hi - r.lo);
    s = std::clamp(s, 1e-9, 1.0 - 1e-9);
    return std::log(s / (1.0 - s));
  }
};

class NegativeLml final : public ceres::FirstOrderFunction {
 public:
  NegativeLml(std::span<const FieldPoint> points, const Reparam& reparam, double jitter,
              int* evaluations)
      : points_(points), reparam_(reparam), jitter_(jitter), evaluations_(evaluations) {}

  bool Evaluate(const double* u, double* cost, double* gradient) const override {
    std::array<double, kNumHyperparameters> x{};
    for (std::size_t k = 0; k < kNumHyperparameters; ++k) x[k] = reparam_.natural(k, u[k]);
    ++*evaluations_;
    try {
      const auto params = from_array(x, jitter_);
      if (gradient == nullptr) {
        *cost = -log_marginal_likelihood(points_, params);
      } else {
        const auto r = log_marginal_likelihood_with_gradient(points_, params);
        *cost = -r.value;
        for (std::size_t k = 0; k < kNumHyperparameters; ++k) {
          gradient[k] = -r.gradient[k] * reparam_.derivative(k, u[k]);
        }
      }
    } catch (const NumericalFailure&) {
      return false;
    } catch (const InvalidInput&) {
      return false;
    }
    return std::isfinite(*cost);
  }

  int NumParameters() const override { return static_cast<int>(kNumHyperparameters); }

 private:
  std::span<const FieldPoint> points_;
  Reparam reparam_;
  double jitter_;
  int* evaluations_;
};

}  // namespace

void CompositeKernelParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidInput(fmt::format("{} must be positive and finite (got {})", name, v));
    }
  };
  positive(sigma2_global, "sigma2_global");
  positive(ell1, "ell1");
  positive(ell2, "ell2");
  positive(tau, "tau");
  if (!(rho_a > 0.0 && rho_a < 1.0)) throw InvalidInput("rho_a must lie in (0, 1)");
  if (!(alpha_local > 0.0 && alpha_local < 1.0)) {
    throw InvalidInput("alpha_local must lie in (0, 1)");
  }
  if (!(jitter >= 0.0)) throw InvalidInput("jitter must be >= 0");
}

std::array<double, kNumHyperparameters> to_array(const CompositeKernelParams& p) {
  return {p.sigma2_global, p.ell1, p.ell2, p.rho_a, p.alpha_local, p.tau};
}

CompositeKernelParams from_array(const std::array<double, kNumHyperparameters>& v,
                                 double jitter) {
  return {v[0], v[1], v[2], v[3], v[4], v[5], jitter};
}

CoordinateScaling CoordinateScaling::fit(std::span<const Point2> points) {
  CoordinateScaling s;
  if (points.empty()) return s;
  const double n = static_cast<double>(points.size());
  for (const auto& p : points) {
    s.mean.x += p.x / n;
    s.mean.y += p.y / n;
  }
  double vx = 0.0, vy = 0.0;
  for (const auto& p : points) {
    vx += (p.x - s.mean.x) * (p.x - s.mean.x) / n;
    vy += (p.y - s.mean.y) * (p.y - s.mean.y) / n;
  }
  s.scale.x = vx > 0.0 ? std::sqrt(vx) : 1.0;
  s.scale.y = vy > 0.0 ? std::sqrt(vy) : 1.0;
  return s;
}

double kernel_entry(const FieldPoint& p, const FieldPoint& q, const CompositeKernelParams& params) {
  return combine(pair_terms(p, q, params), params);
}

MatrixXd kernel_matrix(std::span<const FieldPoint> points, const CompositeKernelParams& params) {
  params.validate();
  const auto n = static_cast<Eigen::Index>(points.size());
  MatrixXd k(n, n);
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index q = 0; q <= p; ++q) {
      const double v = kernel_entry(points[static_cast<std::size_t>(p)],
                                    points[static_cast<std::size_t>(q)], params);
      k(p, q) = v;
      k(q, p) = v;
    }
  }
  if (!k.allFinite()) throw NumericalFailure("kernel matrix has non-finite entries");
  return k;
}

MatrixXd cross_kernel(std::span<const FieldPoint> rows, std::span<const FieldPoint> cols,
                      const CompositeKernelParams& params) {
  params.validate();
  MatrixXd k(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t p = 0; p < rows.size(); ++p) {
    for (std::size_t q = 0; q < cols.size(); ++q) {
      k(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) =
          kernel_entry(rows[p], cols[q], params);
    }
  }
  if (!k.allFinite()) throw NumericalFailure("kernel matrix has non-finite entries");
  return k;
}

GpPosterior exact_posterior(std::span<const FieldPoint> points,
                            const CompositeKernelParams& params, const ExactOptions& options) {
  validate_points(points);
  if (points.size() > options.max_points) {
    throw InvalidInput(fmt::format("{} points exceed the exact-solve cap of {}", points.size(),
                                   options.max_points));
  }
  MatrixXd k;
  const MatrixXd a = noisy_gram(points, params, &k);
  GpPosterior post;
  const auto llt = factor_with_jitter(a, params.jitter, post.jitter_used);
  const VectorXd z = observations(points);
  post.mean = k * llt.solve(z);
  // K (K+S)^{-1} K = V^T V with V = L^{-1} K
  const MatrixXd v = llt.matrixL().solve(k);
  post.variance = (k.diagonal() - v.colwise().squaredNorm().transpose()).cwiseMax(0.0);
  if (options.full_covariance) {
    MatrixXd cov = k;
    cov.noalias() -= v.transpose() * v;
    post.covariance = std::move(cov);
  }
  if (!post.mean.allFinite() || !post.variance.allFinite()) {
    throw NumericalFailure("GP posterior is not finite");
  }
  return post;
}

double log_marginal_likelihood(std::span<const FieldPoint> points,
                               const CompositeKernelParams& params) {
  validate_points(points);
  double jitter = 0.0;
  const auto llt = factor_with_jitter(noisy_gram(points, params, nullptr), params.jitter, jitter);
  const VectorXd z = observations(points);
  const VectorXd w = llt.matrixL().solve(z);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double n = static_cast<double>(points.size());
  const double value = -0.5 * w.squaredNorm() - 0.5 * log_det - 0.5 * n * kLog2Pi;
  if (!std::isfinite(value)) throw NumericalFailure("log marginal likelihood is not finite");
  return value;
}

LmlWithGradient log_marginal_likelihood_with_gradient(std::span<const FieldPoint> points,
                                                      const CompositeKernelParams& params) {
  validate_points(points);
  double jitter = 0.0;
  const auto llt = factor_with_jitter(noisy_gram(points, params, nullptr), params.jitter, jitter);
  const auto n = static_cast<Eigen::Index>(points.size());
  const VectorXd z = observations(points);
  const VectorXd alpha = llt.solve(z);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();

  LmlWithGradient out;
  out.value = -0.5 * z.dot(alpha) - 0.5 * log_det - 0.5 * static_cast<double>(n) * kLog2Pi;
  if (!std::isfinite(out.value)) throw NumericalFailure("log marginal likelihood is not finite");

  // dL/dθ = 0.5 tr((α αᵀ - A⁻¹) dK/dθ); A⁻¹ = L⁻ᵀ L⁻¹, lower triangle only.
  MatrixXd linv = MatrixXd::Identity(n, n);
  llt.matrixL().solveInPlace(linv);
  MatrixXd ainv = MatrixXd::Zero(n, n);
  ainv.selfadjointView<Eigen::Lower>().rankUpdate(linv.transpose());

  const auto& k = params;
  std::array<double, kNumHyperparameters> g{};
  const double l1_3 = k.ell1 * k.ell1 * k.ell1;
  const double l2_3 = k.ell2 * k.ell2 * k.ell2;
  const double tau2 = k.tau * k.tau;
  for (Eigen::Index q = 0; q < n; ++q) {
    const auto& pq = points[static_cast<std::size_t>(q)];
    for (Eigen::Index p = q; p < n; ++p) {
      const auto& pp = points[static_cast<std::size_t>(p)];
      if (!(pp.state == pq.state || pp.building == pq.building)) continue;
      const PairTerms t = pair_terms(pp, pq, k);
      const double w = (alpha(p) * alpha(q) - ainv(p, q)) * (p == q ? 0.5 : 1.0);
      const double global = t.rbf * t.arch;
      g[0] += w * (global + k.alpha_local * t.local);
      if (t.same_state) {
        g[1] += w * k.sigma2_global * global * t.dx2 / l1_3;
        g[2] += w * k.sigma2_global * global * t.dy2 / l2_3;
        if (!t.same_archetype) g[3] += w * k.sigma2_global * t.rbf;
      }
      if (t.same_building) {
        g[4] += w * k.sigma2_global * t.local;
        g[5] += w * k.alpha_local * k.sigma2_global * t.local * t.local_distance / tau2;
      }
    }
  }
  out.gradient = g;
  return out;
}

FitResult fit_hyperparameters(std::span<const FieldPoint> points,
                              const CompositeKernelParams& init,
                              const HyperparameterBounds& bounds, const FitOptions& options) {
  validate_points(points);
  init.validate();
  if (points.size() < 2) throw InvalidInput("hyperparameter fitting needs at least two points");
  for (const auto& r : bounds.ranges) {
    if (!(r.hi > r.lo) || (r.log_scale && !(r.lo > 0.0))) {
      throw InvalidInput("invalid hyperparameter bounds");
    }
  }
  FitResult best;
  best.params = init;
  try {
    best.initial_log_marginal_likelihood = log_marginal_likelihood(points, init);
  } catch (const NumericalFailure& e) {
    throw InvalidInput(fmt::format("objective is not finite at the initial hyperparameters: {}",
                                   e.what()));
  }
  best.log_marginal_likelihood = best.initial_log_marginal_likelihood;

  const Reparam reparam{bounds};
  std::array<double, kNumHyperparameters> u0{};
  const auto x0 = to_array(init);
  // Starts are kept off the saturated ends of the logit so the gradient does
  // not vanish; init itself still competes through best.
  for (std::size_t k = 0; k < kNumHyperparameters; ++k) {
    u0[k] = std::clamp(reparam.unconstrained(k, x0[k]), -kStartLogitBound, kStartLogitBound);
  }

  Rng rng(options.seed, 0x6879706572ULL);
  const int starts = std::max(1, options.restarts);
  for (int s = 0; s < starts; ++s) {
    std::array<double, kNumHyperparameters> u = u0;
    if (s > 0) {
      for (auto& v : u) v += rng.normal();
    }
    int evaluations = 0;
    ceres::GradientProblem problem(new NegativeLml(points, reparam, init.jitter, &evaluations));
    ceres::GradientProblemSolver::Options opts;
    opts.line_search_direction_type = ceres::LBFGS;
    opts.max_num_iterations = options.max_iterations;
    opts.function_tolerance = options.tolerance;
    opts.gradient_tolerance = 1e-8;
    opts.parameter_tolerance = 1e-8;
    opts.logging_type = ceres::SILENT;
    opts.minimizer_progress_to_stdout = false;
    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(opts, problem, u.data(), &summary);
    best.evaluations += evaluations;
    best.iterations += static_cast<int>(summary.iterations.size());

    std::array<double, kNumHyperparameters> x{};
    for (std::size_t k = 0; k < kNumHyperparameters; ++k) x[k] = reparam.natural(k, u[k]);
    const auto candidate = from_array(x, init.jitter);
    double value;
    try {
      candidate.validate();
      value = log_marginal_likelihood(points, candidate);
    } catch (const std::exception&) {
      continue;
    }
    if (value > best.log_marginal_likelihood) {
      best.log_marginal_likelihood = value;
      best.params = candidate;
    }
  }
  return best;
}

SparseResult sparse_variational_posterior(std::span<const FieldPoint> points,
                                          const CompositeKernelParams& params,
                                          const SparseOptions& options) {
  validate_points(points);
  params.validate();
  const auto& idx = options.inducing;
  if (idx.empty() || idx.size() > points.size()) {
    throw InvalidInput("need 1 <= inducing points <= training points");
  }
  std::vector<FieldPoint> inducing;
  inducing.reserve(idx.size());
  for (const auto i : idx) {
    if (i >= points.size()) throw InvalidInput("inducing index out of range");
    inducing.push_back(points[i]);
  }
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto m = static_cast<Eigen::Index>(inducing.size());

  // Inducing variables carry the global term g only. The local term l is
  // block diagonal by building and, together with the noise, forms the
  // per-building covariance B = K_l + S that is handled exactly.
  auto global = [&](const FieldPoint& p, const FieldPoint& q) {
    const PairTerms t = pair_terms(p, q, params);
    return params.sigma2_global * t.rbf * t.arch;
  };
  auto local = [&](const FieldPoint& p, const FieldPoint& q) {
    const PairTerms t = pair_terms(p, q, params);
    return params.alpha_local * params.sigma2_global * t.local;
  };

  std::map<std::size_t, std::vector<Eigen::Index>> by_building;
  for (Eigen::Index i = 0; i < n; ++i) {
    by_building[points[static_cast<std::size_t>(i)].building].push_back(i);
  }
  struct Block {
    std::vector<Eigen::Index> members;
    MatrixXd kg;    // global covariance within the block
    MatrixXd kl;    // local covariance within the block
    MatrixXd binv;  // (K_l + S)^{-1}
    double log_det_b = 0.0;
  };
  std::vector<Block> blocks;
  blocks.reserve(by_building.size());
  for (auto& [b, members] : by_building) {
    Block blk;
    blk.members = std::move(members);
    const auto k = static_cast<Eigen::Index>(blk.members.size());
    blk.kg.resize(k, k);
    blk.kl.resize(k, k);
    for (Eigen::Index r = 0; r < k; ++r) {
      for (Eigen::Index c = 0; c < k; ++c) {
        const auto& pr = points[static_cast<std::size_t>(blk.members[r])];
        const auto& pc = points[static_cast<std::size_t>(blk.members[c])];
        blk.kg(r, c) = global(pr, pc);
        blk.kl(r, c) = local(pr, pc);
      }
    }
    MatrixXd bmat = blk.kl;
    for (Eigen::Index r = 0; r < k; ++r) {
      bmat(r, r) += points[static_cast<std::size_t>(blk.members[r])].noise;
    }
    const Eigen::LLT<MatrixXd> llt(bmat);
    if (llt.info() != Eigen::Success) throw NumericalFailure("local block is not SPD");
    blk.binv = llt.solve(MatrixXd::Identity(k, k));
    blk.log_det_b = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    blocks.push_back(std::move(blk));
  }
  auto gather = [](const MatrixXd& mat, const std::vector<Eigen::Index>& cols) {
    MatrixXd out(mat.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      out.col(static_cast<Eigen::Index>(c)) = mat.col(cols[c]);
    }
    return out;
  };
  auto gather_vec = [](const VectorXd& v, const std::vector<Eigen::Index>& at) {
    VectorXd out(static_cast<Eigen::Index>(at.size()));
    for (std::size_t c = 0; c < at.size(); ++c) out(static_cast<Eigen::Index>(c)) = v(at[c]);
    return out;
  };

  MatrixXd kuu(m, m), kuf(m, n);
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < m; ++c) {
      kuu(r, c) = global(inducing[static_cast<std::size_t>(r)],
                         inducing[static_cast<std::size_t>(c)]);
    }
    for (Eigen::Index c = 0; c < n; ++c) {
      kuf(r, c) = global(inducing[static_cast<std::size_t>(r)], points[static_cast<std::size_t>(c)]);
    }
  }
  if (!kuu.allFinite() || !kuf.allFinite()) {
    throw NumericalFailure("kernel matrix has non-finite entries");
  }
  double jitter = 0.0;
  const auto kuu_llt = factor_with_jitter(kuu, params.jitter, jitter);
  const MatrixXd lu = kuu_llt.matrixL();
  // Whitened parameterisation u = Lu v, p(v) = N(0, I).
  const MatrixXd a = lu.triangularView<Eigen::Lower>().solve(kuf);
  const VectorXd z = observations(points);

  // Optimal natural parameters: P = I + A B^{-1} A^T, h = A B^{-1} z.
  MatrixXd a_binv(m, n);
  VectorXd binv_z(n);
  for (const auto& blk : blocks) {
    const MatrixXd ab = gather(a, blk.members) * blk.binv;
    const VectorXd bz = blk.binv * gather_vec(z, blk.members);
    for (std::size_t c = 0; c < blk.members.size(); ++c) {
      a_binv.col(blk.members[c]) = ab.col(static_cast<Eigen::Index>(c));
      binv_z(blk.members[c]) = bz(static_cast<Eigen::Index>(c));
    }
  }
  MatrixXd p_opt = MatrixXd::Identity(m, m);
  p_opt.noalias() += a_binv * a.transpose();
  const VectorXd h_opt = a * binv_z;

  struct State {
    MatrixXd precision;
    VectorXd shift;  // precision * mean
  };
  struct Evaluated {
    double elbo = 0.0;
    VectorXd mean;  // whitened
    MatrixXd cov;
    MatrixXd b;     // Lp^{-1} A, so that A^T S A = b^T b
  };
  const double log_det_b_sum = [&] {
    double acc = 0.0;
    for (const auto& blk : blocks) acc += blk.log_det_b;
    return acc;
  }();

  auto evaluate = [&](const State& s) {
    const Eigen::LLT<MatrixXd> lp(s.precision);
    if (lp.info() != Eigen::Success) throw NumericalFailure("variational precision not SPD");
    Evaluated e;
    e.mean = lp.solve(s.shift);
    e.cov = lp.solve(MatrixXd::Identity(m, m));
    e.b = lp.matrixL().solve(a);
    const VectorXd mu_g = a.transpose() * e.mean;
    double expected = -0.5 * static_cast<double>(n) * kLog2Pi - 0.5 * log_det_b_sum;
    for (const auto& blk : blocks) {
      const MatrixXd ab = gather(a, blk.members);
      const MatrixXd bb = gather(e.b, blk.members);
      const MatrixXd cov_g = blk.kg - ab.transpose() * ab + bb.transpose() * bb;
      const VectorXd r = gather_vec(z, blk.members) - gather_vec(mu_g, blk.members);
      expected -= 0.5 * r.dot(blk.binv * r);
      expected -= 0.5 * (blk.binv.cwiseProduct(cov_g)).sum();
    }
    const double log_det_s = -2.0 * lp.matrixLLT().diagonal().array().log().sum();
    const double kl =
        0.5 * (e.cov.trace() + e.mean.squaredNorm() - static_cast<double>(m) - log_det_s);
    e.elbo = expected - kl;
    return e;
  };

  SparseResult out;
  State state{MatrixXd::Identity(m, m), VectorXd::Zero(m)};
  Evaluated current = evaluate(state);
  out.elbo_trace.push_back(current.elbo);
  if (options.analytic) {
    state = {p_opt, h_opt};
    current = evaluate(state);
    out.elbo_trace.push_back(current.elbo);
  } else {
    // Natural-gradient steps: interpolate the natural parameters toward the
    // optimum, halving the step whenever the bound would drop.
    double step = std::clamp(options.step, 1e-6, 1.0);
    for (int it = 0; it < options.max_iterations && step > 1e-8; ++it) {
      State trial{(1.0 - step) * state.precision + step * p_opt,
                  (1.0 - step) * state.shift + step * h_opt};
      Evaluated next = evaluate(trial);
      if (!(next.elbo >= current.elbo)) {
        step *= 0.5;
        continue;
      }
      const double gain = next.elbo - current.elbo;
      state = std::move(trial);
      current = std::move(next);
      out.elbo_trace.push_back(current.elbo);
      if (gain < options.tolerance) break;
    }
  }

  // f = g + l with l | g, z ~ N(G (z - g), K_l - G K_l), G = K_l B^{-1}.
  out.posterior.mean.resize(n);
  out.posterior.variance.resize(n);
  const VectorXd mu_g = a.transpose() * current.mean;
  for (const auto& blk : blocks) {
    const auto k = static_cast<Eigen::Index>(blk.members.size());
    const MatrixXd ab = gather(a, blk.members);
    const MatrixXd bb = gather(current.b, blk.members);
    const MatrixXd cov_g = blk.kg - ab.transpose() * ab + bb.transpose() * bb;
    const MatrixXd g = blk.kl * blk.binv;
    const MatrixXd t = MatrixXd::Identity(k, k) - g;
    const VectorXd mg = gather_vec(mu_g, blk.members);
    const VectorXd mean = mg + g * (gather_vec(z, blk.members) - mg);
    const MatrixXd cov = t * cov_g * t.transpose() + blk.kl - g * blk.kl;
    for (Eigen::Index r = 0; r < k; ++r) {
      out.posterior.mean(blk.members[static_cast<std::size_t>(r)]) = mean(r);
      out.posterior.variance(blk.members[static_cast<std::size_t>(r)]) = std::max(cov(r, r), 0.0);
    }
  }
  out.posterior.jitter_used = jitter;
  out.inducing_mean = lu * current.mean;
  out.inducing_covariance = lu * current.cov * lu.transpose();
  if (!out.posterior.mean.allFinite() || !out.posterior.variance.allFinite()) {
    throw NumericalFailure("sparse GP posterior is not finite");
  }
  return out;
}

std::vector<std::size_t> select_inducing_points(std::span<const FieldPoint> points,
                                                std::size_t count, std::uint64_t seed) {
  if (count == 0 || count > points.size()) {
    throw InvalidInput("need 1 <= inducing count <= number of points");
  }
  const auto n = static_cast<Eigen::Index>(points.size());
  MatrixXd features(n, 5);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    features.row(i) << p.coords.x, p.coords.y, static_cast<double>(p.archetype),
        static_cast<double>(p.state), p.z;
  }
  for (Eigen::Index c = 0; c < features.cols(); ++c) {
    const double mean = features.col(c).mean();
    features.col(c).array() -= mean;
    const double sd = std::sqrt(features.col(c).squaredNorm() / static_cast<double>(n));
    if (sd > 0.0) features.col(c) /= sd;
  }
  const auto km = kmeans(features, count, seed);
  std::vector<bool> taken(points.size(), false);
  std::vector<std::size_t> chosen;
  for (Eigen::Index c = 0; c < km.centroids.rows(); ++c) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = points.size();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      const double d = (features.row(i) - km.centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<std::size_t>(i);
      }
    }
    taken[arg] = true;
    chosen.push_back(arg);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<PnMoments> posterior_to_probability(const GpPosterior& posterior) {
  std::vector<PnMoments> out(static_cast<std::size_t>(posterior.mean.size()));
  for (Eigen::Index i = 0; i < posterior.mean.size(); ++i) {
    out[static_cast<std::size_t>(i)] =
        pn_moments({posterior.mean(i), std::max(posterior.variance(i), 0.0)});
  }
  return out;
}

std::size_t count_ordinality_violations(std::span<const PnMoments> moments) {
  std::size_t violations = 0;
  for (std::size_t b = 0; b + kNumStates <= moments.size(); b += kNumStates) {
    for (std::size_t j = 1; j < kNumStates; ++j) {
      if (moments[b + j].m > moments[b + j - 1].m) {
        ++violations;
        break;
      }
    }
  }
  return violations;
}

void enforce_ordinality(std::span<const FieldPoint> points, GpPosterior& posterior) {
  std::map<std::size_t, std::vector<std::size_t>> by_building;
  for (std::size_t i = 0; i < points.size(); ++i) by_building[points[i].building].push_back(i);
  for (auto& [b, members] : by_building) {
    std::sort(members.begin(), members.end(),
              [&](std::size_t l, std::size_t r) { return points[l].state < points[r].state; });
    std::vector<double> means;
    for (const auto i : members) means.push_back(posterior.mean(static_cast<Eigen::Index>(i)));
    std::sort(means.begin(), means.end(), std::greater<>());
    for (std::size_t k = 0; k < members.size(); ++k) {
      posterior.mean(static_cast<Eigen::Index>(members[k])) = means[k];
    }
  }
}

}  // namespace fragility
