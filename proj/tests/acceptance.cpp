// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// non-zero when any selected criterion fails.
//
//   acceptance                 all criteria
//   acceptance --criterion 4   just one (repeatable)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <fmt/format.h>

#include "fragility/beta_bridge.hpp"
#include "fragility/cli_io.hpp"
#include "fragility/csv.hpp"
#include "fragility/evidence.hpp"
#include "fragility/experiment.hpp"
#include "fragility/gp_field.hpp"
#include "fragility/hazard_prior.hpp"
#include "fragility/probit_normal.hpp"
#include "fragility/rng.hpp"

using namespace fragility;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<PnMarginal> moment_grid() {
  std::vector<PnMarginal> out;
  for (int a = -12; a <= 12; ++a) {
    for (int b = 1; b <= 12; ++b) out.push_back({0.25 * a, 0.25 * b});
  }
  return out;
}

Outcome kl_envelope() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  PnMarginal at;
  for (const auto& p : moment_grid()) {
    const auto b = beta_from_pn_moments(pn_moments(p));
    const double kl = std::max(kl_pn_beta(p, b, KlDirection::PnToBeta),
                               kl_pn_beta(p, b, KlDirection::BetaToPn));
    if (kl > worst) {
      worst = kl;
      at = p;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 0.11 && secs < 60.0,
          fmt::format("max KL {:.4f} bits at mu={:g} sigma2={:g} (limit 0.11), {:.2f} s (limit 60 s)",
                      worst, at.mu, at.sigma2, secs)};
}

Outcome moment_match() {
  double worst = 0.0;
  for (const auto& p : moment_grid()) {
    const auto mo = pn_moments(p);
    const auto b = beta_from_pn_moments(mo);
    const double n = b.alpha + b.gamma;
    const double mean = b.alpha / n;
    const double var = b.alpha * b.gamma / (n * n * (n + 1.0));
    worst = std::max({worst, std::abs(mean - mo.m), std::abs(var - mo.zeta)});
  }
  return {worst < 1e-12, fmt::format("max |mean|,|var| error {:.3e} (limit 1e-12)", worst)};
}

Outcome pn_round_trip() {
  double worst = 0.0;
  for (const auto& p : moment_grid()) {
    const auto back = pn_from_moments(pn_moments(p));
    worst = std::max({worst, std::abs(back.mu - p.mu), std::abs(back.sigma2 - p.sigma2)});
  }
  const auto u = beta_from_pn_moments(pn_moments({0.0, 1.0}));
  const double uniform = std::max(std::abs(u.alpha - 1.0), std::abs(u.gamma - 1.0));
  return {worst < 1e-6 && uniform < 1e-8,
          fmt::format("round trip max error {:.3e} (limit 1e-6); PN(0,1) -> Beta({:.12f}, {:.12f}), "
                      "error {:.3e} (limit 1e-8)",
                      worst, u.alpha, u.gamma, uniform)};
}

// Posterior moments of p by brute force on a logit grid, where the Beta
// density times the Jacobian p(1-p) is p^a (1-p)^g. Endpoint singularities of
// small shapes stay integrable this way.
PnMoments grid_bayes(const BetaSurrogate& prior, std::span<const WeightedObservation> obs,
                     int points = 100'000) {
  double a = prior.alpha, g = prior.gamma;
  for (const auto& o : obs) {
    a += o.weight * o.y;
    g += o.weight * (1.0 - o.y);
  }
  const double half = std::max(40.0, 40.0 / std::min(a, g));
  const double h = 2.0 * half / points;
  std::vector<double> logw(points);
  double top = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < points; ++k) {
    const double t = -half + (k + 0.5) * h;
    // log p = -log(1 + e^-t), log(1-p) = -log(1 + e^t)
    const double lp = -std::log1p(std::exp(-std::abs(t))) - std::max(-t, 0.0);
    const double lq = -std::log1p(std::exp(-std::abs(t))) - std::max(t, 0.0);
    logw[k] = a * lp + g * lq;
    top = std::max(top, logw[k]);
  }
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (int k = 0; k < points; ++k) {
    const double t = -half + (k + 0.5) * h;
    const double p = 1.0 / (1.0 + std::exp(-t));
    const double w = std::exp(logw[k] - top);
    z += w;
    m1 += w * p;
    m2 += w * p * p;
  }
  m1 /= z;
  m2 /= z;
  return {m1, m2 - m1 * m1};
}

Outcome conjugacy() {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const PnMarginal p{rng.uniform(-3.0, 3.0), rng.uniform(0.25, 3.0)};
    const auto prior = beta_from_pn_moments(pn_moments(p));
    std::vector<WeightedObservation> obs(1 + rng.below(3));
    for (auto& o : obs) o = {rng.uniform(), rng.uniform(0.5, 8.0)};
    const auto exact = beta_moments(conjugate_update(prior, obs));
    const auto grid = grid_bayes(prior, obs);
    worst = std::max({worst, std::abs(exact.m - grid.m), std::abs(exact.zeta - grid.zeta)});
  }
  return {worst < 1e-4, fmt::format("20 cases, max |dm|,|dzeta| {:.3e} (limit 1e-4)", worst)};
}

Outcome weights() {
  const double w75 = weight_from_f1(0.75).weight;
  bool pass = w75 == 4.0;
  std::string detail = fmt::format("w(0.75) = {:.17g}", w75);
  const std::array<std::pair<double, double>, 3> table{{{0.90, 6.68}, {0.89, 6.49}, {0.78, 4.43}}};
  for (const auto& [f1, published] : table) {
    const double w = weight_from_f1(f1).weight;
    const bool ok = std::abs(w - published) <= 0.1;
    pass = pass && ok;
    detail += fmt::format("; w({:.2f}) = {:.3f} vs {:.2f} ({})", f1, w, published, ok ? "ok" : "off");
  }
  return {pass, detail + " (limit 0.1)"};
}

Outcome wind_field() {
  Rng rng(606);
  double worst = 0.0;
  std::size_t rises = 0;
  for (const double width : {400.0, 800.0, 1600.0, 3200.0}) {
    TornadoTrack track;
    track.centerline = {{0.0, 0.0}, {10000.0, 0.0}};
    track.width_total = width;
    worst = std::max({worst, std::abs(wind_speed(track.core_radius(), track) - 115.0),
                      std::abs(wind_speed(track.edge_radius(), track) - 38.0)});
    std::vector<double> radii(1000);
    for (auto& r : radii) r = rng.uniform(0.0, 2.0 * width);
    std::sort(radii.begin(), radii.end());
    for (std::size_t k = 1; k < radii.size(); ++k) {
      if (wind_speed(radii[k], track) > wind_speed(radii[k - 1], track)) ++rises;
    }
  }
  return {worst < 1e-9 && rises == 0,
          fmt::format("max |V - target| at R_core/R_edge {:.3e} (limit 1e-9); {} increases on "
                      "sorted random radii",
                      worst, rises)};
}

std::vector<FieldPoint> random_points(Rng& rng, std::size_t buildings, double spread = 2.0) {
  std::vector<FieldPoint> out;
  for (std::size_t b = 0; b < buildings; ++b) {
    const Point2 s{rng.uniform(-spread, spread), rng.uniform(-spread, spread)};
    const int arch = 1 + static_cast<int>(rng.below(4));
    const auto first = rng.below(kNumStates);
    const auto last = first + rng.below(kNumStates - first);
    for (std::size_t j = first; j <= last; ++j) {
      out.push_back({b, j, s, arch, rng.normal(), rng.uniform(0.1, 1.0)});
    }
  }
  return out;
}

CompositeKernelParams random_params(Rng& rng) {
  CompositeKernelParams p;
  p.sigma2_global = rng.uniform(0.2, 3.0);
  p.ell1 = rng.uniform(0.2, 2.0);
  p.ell2 = rng.uniform(0.2, 2.0);
  p.rho_a = rng.uniform(0.05, 0.95);
  p.alpha_local = rng.uniform(0.05, 0.95);
  p.tau = rng.uniform(0.1, 3.0);
  return p;
}

Outcome gp_correctness() {
  // one point with prior variance 1 and unit noise: mean z/2, variance 1/2
  CompositeKernelParams p;
  p.alpha_local = 0.2;
  p.sigma2_global = 1.0 / 1.2;
  const std::vector<FieldPoint> one{{0, 0, {0.0, 0.0}, 1, 2.0, 1.0}};
  const auto post = exact_posterior(one, p);
  double scalar = std::max(std::abs(post.mean(0) - 1.0), std::abs(post.variance(0) - 0.5));

  // two same-state buildings one lengthscale apart, 2x2 closed form
  const std::vector<FieldPoint> two{{0, 0, {0.0, 0.0}, 1, 1.5, 0.5},
                                    {1, 0, {1.0, 0.0}, 1, -0.5, 2.0}};
  const auto q = exact_posterior(two, p);
  const double k0 = 1.0, k1 = std::exp(-0.5) / 1.2;
  const double a00 = k0 + 0.5, a11 = k0 + 2.0, det = a00 * a11 - k1 * k1;
  const double w0 = (a11 * 1.5 - k1 * -0.5) / det, w1 = (a00 * -0.5 - k1 * 1.5) / det;
  const double m0 = k0 * w0 + k1 * w1, m1 = k1 * w0 + k0 * w1;
  const double v0 = k0 - (k0 * k0 * a11 - 2 * k0 * k1 * k1 + k1 * k1 * a00) / det;
  const double v1 = k0 - (k1 * k1 * a11 - 2 * k1 * k0 * k1 + k0 * k0 * a00) / det;
  scalar = std::max({scalar, std::abs(q.mean(0) - m0), std::abs(q.mean(1) - m1),
                     std::abs(q.variance(0) - v0), std::abs(q.variance(1) - v1)});

  Rng rng(707);
  double loud_worst = 0.0, quiet_worst = 0.0, excess = -std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 10; ++trial) {
    auto pts = random_points(rng, 20, 4.0);
    auto params = random_params(rng);
    const double scale = params.sigma2_global * (1.0 + params.alpha_local);
    auto loud = pts;
    for (auto& r : loud) r.noise = 1e6 * scale;
    loud_worst = std::max(loud_worst, exact_posterior(loud, params).mean.norm());
    auto quiet = pts;
    for (auto& r : quiet) r.noise = 1e-6 * scale;
    const auto qp = exact_posterior(quiet, params);
    for (std::size_t i = 0; i < quiet.size(); ++i) {
      quiet_worst = std::max(quiet_worst, std::abs(qp.mean(i) - quiet[i].z));
    }
    const auto fp = exact_posterior(pts, params);
    const auto k = kernel_matrix(pts, params);
    for (std::size_t i = 0; i < pts.size(); ++i) excess = std::max(excess, fp.variance(i) - k(i, i));
  }

  double min_eig = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 50; ++trial) {
    const auto pts = random_points(rng, 10 + rng.below(25));
    const Eigen::MatrixXd k = kernel_matrix(pts, random_params(rng));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k, Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());
  }

  const bool pass = scalar < 1e-12 && loud_worst < 1e-3 && quiet_worst < 1e-3 && excess <= 1e-12 &&
                    min_eig >= -1e-8;
  return {pass, fmt::format("scalar error {:.3e} (limit 1e-12); high-noise |mean| {:.3e}, "
                            "low-noise |mean - z| {:.3e} (limit 1e-3); max(post var - prior var) "
                            "{:.3e}; min kernel eigenvalue over 50 configs {:.3e}",
                            scalar, loud_worst, quiet_worst, excess, min_eig)};
}

void simulate(std::vector<FieldPoint>& pts, const CompositeKernelParams& p, Rng& rng) {
  Eigen::MatrixXd a = kernel_matrix(pts, p);
  for (std::size_t i = 0; i < pts.size(); ++i) a(i, i) += pts[i].noise + 1e-10;
  const Eigen::LLT<Eigen::MatrixXd> llt(a);
  Eigen::VectorXd e(a.rows());
  for (auto& v : e) v = rng.normal();
  const Eigen::VectorXd z = llt.matrixL() * e;
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i].z = z(i);
}

Outcome svgp() {
  Rng rng(808);
  double collapse = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<FieldPoint> pts;
    while (pts.size() < 100) {
      for (auto& q : random_points(rng, 1)) {
        q.building = pts.empty() ? 0 : pts.back().building + 1;
        if (pts.size() < 100) pts.push_back(q);
      }
    }
    const auto p = random_params(rng);
    SparseOptions opts;
    for (std::size_t i = 0; i < pts.size(); ++i) opts.inducing.push_back(i);
    const auto sparse = sparse_variational_posterior(pts, p, opts);
    const auto exact = exact_posterior(pts, p);
    collapse = std::max(collapse, (sparse.posterior.mean - exact.mean).cwiseAbs().maxCoeff());
  }

  std::vector<FieldPoint> pts;
  for (std::size_t b = 0; b < 400; ++b) {
    pts.push_back({b, 0, {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)},
                   1 + static_cast<int>(rng.below(3)), 0.0, rng.uniform(0.2, 1.0)});
  }
  const CompositeKernelParams p{1.0, 0.8, 0.8, 0.8, 0.2, 1.0};
  simulate(pts, p, rng);
  SparseOptions opts;
  opts.inducing = select_inducing_points(pts, pts.size() / 4, 7);
  const auto sparse = sparse_variational_posterior(pts, p, opts);
  const auto exact = exact_posterior(pts, p);
  const double rmse =
      std::sqrt((sparse.posterior.mean - exact.mean).squaredNorm() / double(pts.size()));
  return {collapse < 1e-6 && rmse < 0.1,
          fmt::format("inducing = all: max |mean diff| {:.3e} (limit 1e-6); n/4 inducing on 400 "
                      "points: RMSE {:.4f} (limit 0.1)",
                      collapse, rmse)};
}

// ---- end-to-end ----

ScenarioConfig default_scenario() {
  const std::filesystem::path path = std::filesystem::path(FRAGILITY_CONFIG_DIR) / "default_scenario.json";
  return parse_experiment_config(read_text_file(path), path.parent_path()).scenario;
}

struct Sweep {
  ScenarioResult result;
  std::vector<MetricsRecord> metrics;
  double seconds = 0.0;
};

Sweep run_default() {
  const auto t0 = Clock::now();
  Sweep s{run_scenario(default_scenario()), {}, 0.0};
  s.metrics = s.result.metrics();
  s.seconds = seconds_since(t0);
  return s;
}

using Key = std::tuple<double, UpdateMode, Subset, std::size_t>;  // width, mode, subset, state

std::map<Key, std::map<std::size_t, const MetricsRecord*>> by_step(const Sweep& s) {
  std::map<Key, std::map<std::size_t, const MetricsRecord*>> out;
  for (const auto& r : s.metrics) out[{r.prior_width, r.mode, r.subset, r.state}][r.step] = &r;
  return out;
}

std::string cell(double width, UpdateMode mode, std::size_t state) {
  return fmt::format("W={:g} {} {}", width, to_string(mode), state_name(state));
}

Outcome fig10(const Sweep& s, std::size_t n_batches) {
  const auto series = by_step(s);
  std::vector<std::string> bad;

  // (a) observed subset, step-to-step within 5% and final below step 0
  double worst_ratio = 0.0;
  for (const auto& [key, steps] : series) {
    const auto& [width, mode, subset, state] = key;
    if (subset != Subset::Observed) continue;
    double prev = steps.begin()->second->log_loss_vs_observer;
    for (auto it = std::next(steps.begin()); it != steps.end(); ++it) {
      const double now = it->second->log_loss_vs_observer;
      worst_ratio = std::max(worst_ratio, now / prev);
      if (now > 1.05 * prev) bad.push_back(fmt::format("a: {} step {}", cell(width, mode, state), it->first));
      prev = now;
    }
    if (steps.rbegin()->second->log_loss_vs_observer > steps.begin()->second->log_loss_vs_observer) {
      bad.push_back(fmt::format("a: {} final above step 0", cell(width, mode, state)));
    }
  }

  // (b) holdout at the last observed batch, gp below local
  double worst_gap = -std::numeric_limits<double>::infinity();
  for (const auto& [key, steps] : series) {
    const auto& [width, mode, subset, state] = key;
    if (subset != Subset::Unobserved || mode != UpdateMode::GpEnabled) continue;
    const double gp = steps.at(n_batches)->log_loss_vs_observer;
    const double local =
        series.at({width, UpdateMode::LocalOnly, subset, state}).at(n_batches)->log_loss_vs_observer;
    worst_gap = std::max(worst_gap, gp - local);
    if (!(gp < local)) bad.push_back(fmt::format("b: W={:g} {}", width, state_name(state)));
  }

  // (c) final-step spread across widths
  double worst_spread = 0.0;
  std::map<std::tuple<UpdateMode, Subset, std::size_t>, std::vector<double>> finals;
  for (const auto& [key, steps] : series) {
    const auto& [width, mode, subset, state] = key;
    finals[{mode, subset, state}].push_back(steps.rbegin()->second->log_loss_vs_observer);
  }
  for (const auto& [key, values] : finals) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    double mean = 0.0;
    for (const double v : values) mean += v / double(values.size());
    const double spread = (*hi - *lo) / mean;
    worst_spread = std::max(worst_spread, spread);
    if (spread >= 0.10) {
      bad.push_back(fmt::format("c: {} {} {}", to_string(std::get<0>(key)),
                                to_string(std::get<1>(key)), state_name(std::get<2>(key))));
    }
  }

  const bool fast = s.seconds < 600.0;
  std::string detail = fmt::format(
      "(a) max step ratio {:.4f} (limit 1.05); (b) max gp - local holdout loss at step {} {:+.4f} "
      "(limit < 0); (c) max relative spread {:.2f}% (limit 10%); sweep {:.1f} s (limit 600 s)",
      worst_ratio, n_batches, worst_gap, 100.0 * worst_spread, s.seconds);
  if (!bad.empty()) {
    detail += fmt::format("; {} violation(s), first: {}", bad.size(), bad.front());
  }
  return {bad.empty() && fast, detail};
}

Outcome fig13(const Sweep& s, std::size_t n_batches) {
  const auto series = by_step(s);
  std::size_t checked = 0;
  std::vector<std::string> bad;
  double worst_ratio = 0.0;
  for (const auto& [key, steps] : series) {
    const auto& [width, mode, subset, state] = key;
    if (subset != Subset::Observed) continue;
    const double obs = steps.at(n_batches)->var_p_median;
    const double unobs = series.at({width, mode, Subset::Unobserved, state}).at(n_batches)->var_p_median;
    ++checked;
    worst_ratio = std::max(worst_ratio, obs / unobs);
    if (!(obs < unobs)) bad.push_back(cell(width, mode, state));
  }
  std::string detail = fmt::format(
      "{} width/mode/state cells at step {}, max median var observed/unobserved {:.3f} (limit < 1)",
      checked, n_batches, worst_ratio);
  if (!bad.empty()) detail += fmt::format("; {} violation(s), first: {}", bad.size(), bad.front());
  return {bad.empty(), detail};
}

Outcome determinism(const Sweep& first) {
  const auto again = run_default();
  const auto a = metrics_csv(first.metrics);
  const auto b = metrics_csv(again.metrics);
  return {a == b, fmt::format("metrics CSV {} bytes, second run {} bytes, {}", a.size(), b.size(),
                              a == b ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("--criterion", only, "criterion number (1-11), repeatable")
      ->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);
  const std::set<int> wanted = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}
                                            : std::set<int>(only.begin(), only.end());

  const std::size_t n_batches = default_scenario().n_batches;
  std::optional<Sweep> sweep;
  auto shared = [&]() -> const Sweep& {
    if (!sweep) sweep = run_default();
    return *sweep;
  };

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"KL envelope", kl_envelope}},
      {2, {"moment-match exactness", moment_match}},
      {3, {"PN round trip", pn_round_trip}},
      {4, {"conjugacy oracle", conjugacy}},
      {5, {"weight formula", weights}},
      {6, {"wind field", wind_field}},
      {7, {"GP correctness", gp_correctness}},
      {8, {"SVGP collapse", svgp}},
      {9, {"end-to-end log loss", [&] { return fig10(shared(), n_batches); }}},
      {10, {"variance stratification", [&] { return fig13(shared(), n_batches); }}},
      {11, {"determinism", [&] { return determinism(shared()); }}},
  };

  int failed = 0;
  for (const int id : wanted) {
    const auto& [name, check] = criteria.at(id);
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    if (!o.pass) ++failed;
    std::cout << fmt::format("criterion {:2} {} {}: {}", id, o.pass ? "PASS" : "FAIL", name, o.detail)
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
