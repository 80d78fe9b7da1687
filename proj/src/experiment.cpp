#include "fragility/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "fragility/errors.hpp"
#include "fragility/kmeans.hpp"

namespace fragility {

namespace {

// Sub-stream identifiers, one per independent source of randomness.
enum Stream : std::uint64_t {
  kInventoryStream = 1,
  kTruthStream = 2,
  kObserverStream = 3,
  kCalibrationPickStream = 4,
  kCalibrationTruthStream = 5,
  kCalibrationObserverStream = 6,
  kSplitStream = 7,
  kBatchStream = 8,
  kTuningStream = 9,
  kFitSubsetStream = 11,
};

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid),
                   values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(),
                                         values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

std::vector<EvaluationSample> evaluation_samples(const ObserverModel& model,
                                                 std::span<const int> states, Rng& rng) {
  std::vector<EvaluationSample> samples;
  samples.reserve(states.size());
  for (std::size_t k = 0; k < states.size(); ++k) {
    const auto pred = observe(model, states[k], rng);
    samples.push_back({std::to_string(k), exceedance_indicators(states[k]),
                       exceedance_from_categorical(pred)});
  }
  return samples;
}

double mean_f1(std::span<const EvaluationSample> samples) {
  double total = 0.0;
  for (std::size_t j = 0; j < kNumStates; ++j) {
    const auto counts = soft_confusion(samples, j);
    const double denom = 2.0 * counts.tp + counts.fp + counts.fn;
    total += denom > 0.0 ? soft_f1(counts) : 1.0;
  }
  return total / static_cast<double>(kNumStates);
}

}  // namespace

std::string_view to_string(UpdateMode mode) {
  return mode == UpdateMode::LocalOnly ? "local-only" : "gp-enabled";
}

std::string_view to_string(SamplingStrategy strategy) {
  return strategy == SamplingStrategy::Random ? "random" : "grouped";
}

std::string_view to_string(Subset subset) {
  return subset == Subset::Observed ? "observed" : "unobserved";
}

std::string_view to_string(ObserverKind kind) {
  switch (kind) {
    case ObserverKind::Softmax:
      return "softmax";
    case ObserverKind::Perfect:
      return "perfect";
    case ObserverKind::Uniform:
      return "uniform";
  }
  return "softmax";
}

UpdateMode parse_update_mode(std::string_view text) {
  if (text == "local-only") return UpdateMode::LocalOnly;
  if (text == "gp-enabled") return UpdateMode::GpEnabled;
  throw InvalidInput(fmt::format("unknown mode '{}' (expected local-only or gp-enabled)", text));
}

SamplingStrategy parse_sampling_strategy(std::string_view text) {
  if (text == "random") return SamplingStrategy::Random;
  if (text == "grouped") return SamplingStrategy::Grouped;
  throw InvalidInput(fmt::format("unknown sampling strategy '{}' (expected random or grouped)",
                                 text));
}

ObserverKind parse_observer_kind(std::string_view text) {
  if (text == "softmax") return ObserverKind::Softmax;
  if (text == "perfect") return ObserverKind::Perfect;
  if (text == "uniform") return ObserverKind::Uniform;
  throw InvalidInput(fmt::format("unknown observer kind '{}'", text));
}

std::vector<Building> generate_inventory(const SyntheticInventory& spec, Rng& rng,
                                         std::string_view id_prefix) {
  if (spec.count == 0) throw InvalidInput("synthetic inventory needs at least one building");
  if (!(spec.half_length > 0.0) || !(spec.half_width > 0.0)) {
    throw InvalidInput("synthetic inventory extent must be > 0");
  }
  if (!(spec.residential_fraction >= 0.0 && spec.residential_fraction <= 1.0)) {
    throw InvalidInput("residential_fraction must lie in [0, 1]");
  }
  std::vector<Building> out;
  out.reserve(spec.count);
  for (std::size_t k = 0; k < spec.count; ++k) {
    Building b;
    b.id = fmt::format("{}{:05d}", id_prefix, k);
    b.position = {rng.uniform(-spec.half_length, spec.half_length),
                  rng.uniform(-spec.half_width, spec.half_width)};
    b.archetype = rng.uniform() < spec.residential_fraction
                      ? 1 + static_cast<int>(rng.below(4))
                      : 5 + static_cast<int>(rng.below(15));
    out.push_back(std::move(b));
  }
  return out;
}

GroundTruth generate_truth(std::span<const Building> inventory, const TornadoTrack& track,
                           const FragilityTable& table, Rng& rng) {
  track.validate();
  GroundTruth truth;
  truth.state.resize(inventory.size());
  truth.wind.resize(inventory.size());
  for (std::size_t i = 0; i < inventory.size(); ++i) {
    const auto& curves = table.at(inventory[i].archetype);
    const double v = wind_speed(distance_to_centerline(inventory[i].position, track), track);
    truth.wind[i] = v;
    int state = 0;
    for (std::size_t j = 0; j < kNumStates; ++j) {
      const double capacity = curves[j].median * std::exp(curves[j].dispersion * rng.normal());
      if (v >= capacity) state = static_cast<int>(j) + 1;
    }
    truth.state[i] = state;
  }
  return truth;
}

std::vector<int> exceedance_indicators(int state) {
  std::vector<int> o(kNumStates);
  for (std::size_t j = 0; j < kNumStates; ++j) o[j] = state > static_cast<int>(j) ? 1 : 0;
  return o;
}

CategoricalSoftPrediction observe(const ObserverModel& model, int true_state, Rng& rng) {
  if (true_state < 0 || true_state > static_cast<int>(kNumStates)) {
    throw InvalidInput(fmt::format("true damage state {} out of range", true_state));
  }
  switch (model.kind) {
    case ObserverKind::Perfect: {
      CategoricalSoftPrediction s(kNumStates, 0.0);
      if (true_state > 0) s[static_cast<std::size_t>(true_state - 1)] = 1.0;
      return s;
    }
    case ObserverKind::Uniform:
      return CategoricalSoftPrediction(kNumStates, 1.0 / (kNumStates + 1));
    case ObserverKind::Softmax:
      break;
  }
  std::array<double, kNumStates + 1> logits{};
  for (std::size_t k = 0; k <= kNumStates; ++k) {
    logits[k] = -std::abs(static_cast<double>(k) - true_state) / model.temperature +
                model.noise * rng.normal();
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - top);
    total += l;
  }
  CategoricalSoftPrediction s(kNumStates);
  for (std::size_t k = 1; k <= kNumStates; ++k) s[k - 1] = logits[k] / total;
  return s;
}

double mean_soft_f1(const ObserverModel& model, std::span<const int> states, std::uint64_t seed) {
  Rng rng(seed, kTuningStream);
  return mean_f1(evaluation_samples(model, states, rng));
}

ObserverModel tune_observer(const ObserverConfig& config, std::span<const int> states,
                            std::uint64_t seed) {
  ObserverModel model{config.kind, 1.0, config.noise};
  if (config.kind != ObserverKind::Softmax) return model;
  if (config.temperature) {
    model.temperature = *config.temperature;
    return model;
  }
  // F1 falls as the temperature rises; bisect on the log scale.
  double lo = std::log(1e-3), hi = std::log(1e3);
  auto f1_at = [&](double log_t) {
    ObserverModel m = model;
    m.temperature = std::exp(log_t);
    return mean_soft_f1(m, states, seed);
  };
  if (f1_at(lo) <= config.target_f1) {
    model.temperature = std::exp(lo);
    return model;
  }
  if (f1_at(hi) >= config.target_f1) {
    model.temperature = std::exp(hi);
    return model;
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f1_at(mid) > config.target_f1) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  model.temperature = std::exp(0.5 * (lo + hi));
  return model;
}

ObserverOutput simulate_observer(std::span<const int> inventory_states,
                                 std::span<const int> calibration_states,
                                 const ObserverConfig& config, std::uint64_t seed) {
  if (calibration_states.empty()) throw InvalidInput("calibration set is empty");
  ObserverOutput out;
  out.model = tune_observer(config, calibration_states, seed);

  Rng rng(seed, kObserverStream);
  out.exceedance.reserve(inventory_states.size());
  for (const int s : inventory_states) {
    out.exceedance.push_back(exceedance_from_categorical(observe(out.model, s, rng)));
  }

  Rng cal_rng(seed, kCalibrationObserverStream);
  const auto samples = evaluation_samples(out.model, calibration_states, cal_rng);
  out.calibration.resize(kNumStates);
  for (std::size_t j = 0; j < kNumStates; ++j) {
    auto& c = out.calibration[j];
    c.counts = soft_confusion(samples, j);
    if (2.0 * c.counts.tp + c.counts.fp + c.counts.fn == 0.0) {
      // no positives and no false alarms: nothing was ever wrong
      c.f1 = 1.0;
    } else {
      c.f1 = soft_f1(c.counts);
    }
    c.weight = weight_from_f1(c.f1, config.max_weight);
    out.weights[j] = c.weight.weight;
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const Point2> points,
                                                   SamplingStrategy strategy,
                                                   std::size_t n_batches, std::uint64_t seed) {
  const std::size_t n = points.size();
  if (n == 0) throw InvalidInput("cannot batch an empty observed set");
  if (n_batches == 0 || n_batches > n) {
    throw InvalidInput(fmt::format("need 1 <= n_batches <= {} (got {})", n, n_batches));
  }
  Rng rng(seed, kBatchStream);
  std::vector<std::vector<std::size_t>> batches(n_batches);

  if (strategy == SamplingStrategy::Random) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t base = n / n_batches, extra = n % n_batches;
    std::size_t at = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t size = base + (b < extra ? 1 : 0);
      batches[b].assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                        order.begin() + static_cast<std::ptrdiff_t>(at + size));
      at += size;
    }
  } else {
    Eigen::MatrixXd data(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) {
      data(static_cast<Eigen::Index>(i), 0) = points[i].x;
      data(static_cast<Eigen::Index>(i), 1) = points[i].y;
    }
    const auto km = kmeans(data, n_batches, seed);
    for (std::size_t i = 0; i < n; ++i) batches[km.labels[i]].push_back(i);
    auto centroid_distance = [&](std::size_t a, std::size_t b) {
      return (km.centroids.row(static_cast<Eigen::Index>(a)) -
              km.centroids.row(static_cast<Eigen::Index>(b)))
          .squaredNorm();
    };
    while (true) {
      std::size_t big = 0, small = 0;
      for (std::size_t b = 1; b < n_batches; ++b) {
        if (batches[b].size() > batches[big].size()) big = b;
        if (batches[b].size() < batches[small].size()) small = b;
      }
      if (batches[big].size() - batches[small].size() <= 1) break;
      std::size_t target = n_batches;
      for (std::size_t b = 0; b < n_batches; ++b) {
        if (batches[b].size() + 2 > batches[big].size()) continue;
        if (target == n_batches || centroid_distance(big, b) < centroid_distance(big, target)) {
          target = b;
        }
      }
      const Eigen::RowVector2d c = km.centroids.row(static_cast<Eigen::Index>(target));
      auto& from = batches[big];
      std::size_t pick = 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < from.size(); ++k) {
        const double d = (data.row(static_cast<Eigen::Index>(from[k])) - c).squaredNorm();
        if (d < best) {
          best = d;
          pick = k;
        }
      }
      batches[target].push_back(from[pick]);
      from.erase(from.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    rng.shuffle(std::span<std::vector<std::size_t>>(batches));
  }
  for (auto& b : batches) std::sort(b.begin(), b.end());
  return batches;
}

double log_loss(double m, double y) {
  const double p = std::clamp(m, 1e-12, 1.0 - 1e-12);
  double loss = 0.0;
  if (y > 0.0) loss -= y * std::log(p);
  if (y < 1.0) loss -= (1.0 - y) * std::log1p(-p);
  return std::max(loss, 0.0);
}

TornadoTrack ScenarioConfig::default_true_track() {
  TornadoTrack t;
  t.centerline = {{-4000.0, -300.0}, {4000.0, 300.0}};
  t.width_total = 1600.0;
  return t;
}

void ScenarioConfig::validate() const {
  true_track.validate();
  if (!(true_track.width_total > 0.0)) throw InvalidInput("true track width must be > 0");
  if (prior_widths.empty()) throw InvalidInput("prior_widths must not be empty");
  for (const double w : prior_widths) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidInput("prior widths must be >= 0");
  }
  if (n_batches == 0) throw InvalidInput("n_batches must be >= 1");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw InvalidInput("holdout_fraction must lie in (0, 1)");
  }
  if (strategies.empty()) throw InvalidInput("at least one sampling strategy is required");
  if (modes.empty()) throw InvalidInput("at least one update mode is required");
  if (!(observer.target_f1 > 0.0 && observer.target_f1 < 1.0)) {
    throw InvalidInput("observer target_f1 must lie in (0, 1)");
  }
  if (!(observer.noise >= 0.0)) throw InvalidInput("observer noise must be >= 0");
  if (observer.temperature && !(*observer.temperature > 0.0)) {
    throw InvalidInput("observer temperature must be > 0");
  }
  if (observer.calibration_size == 0) throw InvalidInput("calibration_size must be >= 1");
  if (!(observer.max_weight > 0.0)) throw InvalidInput("max_weight must be > 0");
  if (!(prior.beta_hazard >= 0.0) || !(prior.beta_capacity >= 0.0)) {
    throw InvalidInput("epistemic dispersions must be >= 0");
  }
  if (!(prior.clip_bound > 0.0) || !(prior.separation >= 0.0) || !(prior.wind_floor > 0.0)) {
    throw InvalidInput("prior clip_bound and wind_floor must be > 0, separation >= 0");
  }
  gp.init.validate();
  if (gp.exact_cap == 0 || gp.max_inducing == 0) {
    throw InvalidInput("gp exact_cap and max_inducing must be >= 1");
  }
}

World build_world(const ScenarioConfig& config) {
  config.validate();
  World w;
  w.table = config.fragility_table ? FragilityTable::read_csv(*config.fragility_table)
                                   : FragilityTable::builtin();
  if (config.inventory_file) {
    w.inventory = read_inventory_csv(*config.inventory_file);
  } else {
    Rng rng(config.seed, kInventoryStream);
    w.inventory = generate_inventory(config.synthetic, rng);
  }
  const std::size_t n = w.inventory.size();
  if (n < 2) throw InvalidInput("the experiment needs at least two buildings");
  for (const auto& b : w.inventory) w.table.at(b.archetype);

  Rng truth_rng(config.seed, kTruthStream);
  w.truth = generate_truth(w.inventory, config.true_track, w.table, truth_rng);

  // Calibration buildings: resampled sites with independent capacities,
  // never part of the updated inventory.
  Rng pick_rng(config.seed, kCalibrationPickStream);
  std::vector<Building> calibration;
  calibration.reserve(config.observer.calibration_size);
  for (std::size_t k = 0; k < config.observer.calibration_size; ++k) {
    Building b = w.inventory[pick_rng.below(n)];
    b.id = fmt::format("cal{:05d}", k);
    calibration.push_back(std::move(b));
  }
  Rng cal_truth_rng(config.seed, kCalibrationTruthStream);
  const auto cal_truth = generate_truth(calibration, config.true_track, w.table, cal_truth_rng);

  w.observer = simulate_observer(w.truth.state, cal_truth.state, config.observer, config.seed);
  w.calibration_f1 = 0.0;
  for (const auto& c : w.observer.calibration) {
    w.calibration_f1 += c.f1 / static_cast<double>(kNumStates);
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng(config.seed, kSplitStream);
  split_rng.shuffle(std::span<std::size_t>(perm));
  auto n_hold = static_cast<std::size_t>(std::llround(config.holdout_fraction * double(n)));
  n_hold = std::clamp<std::size_t>(n_hold, 1, n - 1);
  w.holdout.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_hold));
  w.observed.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_hold), perm.end());
  std::sort(w.holdout.begin(), w.holdout.end());
  std::sort(w.observed.begin(), w.observed.end());
  if (config.n_batches > w.observed.size()) {
    throw InvalidInput(fmt::format("n_batches {} exceeds the {} observed buildings",
                                   config.n_batches, w.observed.size()));
  }

  std::vector<Point2> observed_points;
  for (const auto i : w.observed) observed_points.push_back(w.inventory[i].position);
  for (const auto strategy : config.strategies) {
    auto local = make_batches(observed_points, strategy, config.n_batches,
                              splitmix64(config.seed + static_cast<std::uint64_t>(strategy)));
    for (auto& batch : local) {
      for (auto& k : batch) k = w.observed[k];
    }
    w.batches.push_back(std::move(local));
  }

  std::vector<Point2> all;
  for (const auto& b : w.inventory) all.push_back(b.position);
  w.scaling = CoordinateScaling::fit(all);
  return w;
}

GpLayer gp_reporting_layer(std::span<const Building> buildings, std::span<const PnMarginal> stage1,
                           const CoordinateScaling& scaling, const GpSettings& settings,
                           const CompositeKernelParams& start, std::size_t step,
                           std::uint64_t seed) {
  const std::size_t n = buildings.size();
  if (stage1.size() != n * kNumStates) {
    throw InvalidInput(fmt::format("field has {} cells for {} buildings", stage1.size(), n));
  }
  std::vector<FieldPoint> points;
  points.reserve(stage1.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = buildings[i];
    for (std::size_t j = 0; j < kNumStates; ++j) {
      const auto& p = stage1[i * kNumStates + j];
      points.push_back({i, j, scaling.apply(b.position), b.archetype, p.mu,
                        std::max(p.sigma2, kMinPseudoNoise)});
    }
  }

  // Hyperparameters are fitted on a fixed subsample of buildings.
  std::vector<std::size_t> fit_buildings(n);
  std::iota(fit_buildings.begin(), fit_buildings.end(), 0);
  if (settings.fit_buildings > 0 && settings.fit_buildings < n) {
    Rng rng(seed, kFitSubsetStream);
    rng.shuffle(std::span<std::size_t>(fit_buildings));
    fit_buildings.resize(settings.fit_buildings);
    std::sort(fit_buildings.begin(), fit_buildings.end());
  }
  std::vector<FieldPoint> fit_points;
  fit_points.reserve(fit_buildings.size() * kNumStates);
  for (const auto i : fit_buildings) {
    for (std::size_t j = 0; j < kNumStates; ++j) fit_points.push_back(points[i * kNumStates + j]);
  }

  GpLayer layer;
  FitOptions fo;
  fo.restarts = step == 0 ? settings.cold_restarts : settings.warm_restarts;
  fo.max_iterations = settings.max_iterations;
  fo.tolerance = settings.tolerance;
  fo.seed = splitmix64(seed ^ (0x9000 + step));
  layer.fit = fit_hyperparameters(fit_points, start, {}, fo);
  if (step > 0) {
    // a fresh start guards against a warm start stranded on a bound
    fo.restarts = 1;
    auto fresh = fit_hyperparameters(fit_points, settings.init, {}, fo);
    fresh.iterations += layer.fit.iterations;
    if (fresh.log_marginal_likelihood > layer.fit.log_marginal_likelihood) {
      layer.fit = fresh;
    } else {
      layer.fit.iterations = fresh.iterations;
    }
  }

  const auto& params = layer.fit.params;
  if (points.size() <= settings.exact_cap) {
    layer.posterior = exact_posterior(points, params, {.max_points = settings.exact_cap});
  } else {
    SparseOptions so;
    so.inducing = select_inducing_points(
        points, std::max<std::size_t>(1, std::min(settings.max_inducing, points.size() / 4)),
        seed);
    layer.posterior = sparse_variational_posterior(points, params, so).posterior;
  }
  if (settings.enforce_ordinality) enforce_ordinality(points, layer.posterior);
  layer.reported = posterior_to_probability(layer.posterior);
  return layer;
}

RunResult run_online_experiment(const ScenarioConfig& config, const World& world,
                                double prior_width, SamplingStrategy strategy, UpdateMode mode) {
  const auto strategy_it = std::find(config.strategies.begin(), config.strategies.end(), strategy);
  if (strategy_it == config.strategies.end()) {
    throw InvalidInput(fmt::format("strategy {} is not part of this scenario",
                                   to_string(strategy)));
  }
  const auto& batches =
      world.batches[static_cast<std::size_t>(strategy_it - config.strategies.begin())];

  TornadoTrack track = config.true_track;
  track.width_total = prior_width;
  const auto field = build_prior_field(world.inventory, track, world.table, config.prior);
  std::vector<PnMarginal> stage1 = field.marginals;

  RunResult run;
  run.prior_width = prior_width;
  run.strategy = strategy;
  run.mode = mode;

  CompositeKernelParams params = config.gp.init;

  auto evaluate = [&](std::size_t step) {
    FieldSnapshot snap;
    snap.step = step;
    snap.stage1 = stage1;
    if (mode == UpdateMode::LocalOnly) {
      snap.reported.reserve(stage1.size());
      for (const auto& p : stage1) snap.reported.push_back(pn_moments(p));
    } else {
      auto layer = gp_reporting_layer(world.inventory, stage1, world.scaling, config.gp, params,
                                      step, config.seed);
      params = layer.fit.params;
      run.trajectory.push_back(
          {step, params, layer.fit.log_marginal_likelihood, layer.fit.iterations});
      snap.reported = std::move(layer.reported);
      snap.gp = std::move(layer.posterior);
    }
    snap.ordinality_violations = count_ordinality_violations(snap.reported);

    for (const auto subset : {Subset::Observed, Subset::Unobserved}) {
      const auto& members = subset == Subset::Observed ? world.observed : world.holdout;
      for (std::size_t j = 0; j < kNumStates; ++j) {
        double vs_observer = 0.0, vs_truth = 0.0;
        std::vector<double> variances;
        variances.reserve(members.size());
        for (const auto i : members) {
          const auto& mo = snap.reported[i * kNumStates + j];
          vs_observer += log_loss(mo.m, world.observer.exceedance[i][j]);
          vs_truth += log_loss(mo.m, world.truth.state[i] > static_cast<int>(j) ? 1.0 : 0.0);
          variances.push_back(mo.zeta);
        }
        const double count = static_cast<double>(members.size());
        run.metrics.push_back({step, mode, strategy, prior_width, subset, j, vs_observer / count,
                               vs_truth / count, median(std::move(variances))});
      }
    }
    run.snapshots.push_back(std::move(snap));
  };

  auto assimilate = [&](std::size_t i) {
    for (std::size_t j = 0; j < kNumStates; ++j) {
      const WeightedObservation obs{world.observer.exceedance[i][j], world.observer.weights[j]};
      auto& cell = stage1[i * kNumStates + j];
      cell = local_update_cycle(cell, std::span(&obs, 1));
    }
  };

  evaluate(0);
  for (std::size_t t = 0; t < batches.size(); ++t) {
    for (const auto i : batches[t]) assimilate(i);
    evaluate(t + 1);
  }
  for (const auto i : world.holdout) assimilate(i);
  evaluate(batches.size() + 1);
  return run;
}

std::vector<MetricsRecord> ScenarioResult::metrics() const {
  std::vector<MetricsRecord> all;
  for (const auto& r : runs) all.insert(all.end(), r.metrics.begin(), r.metrics.end());
  return all;
}

ScenarioResult run_scenario(const ScenarioConfig& config) {
  ScenarioResult result;
  result.world = build_world(config);
  for (const double width : config.prior_widths) {
    for (const auto strategy : config.strategies) {
      for (const auto mode : config.modes) {
        result.runs.push_back(run_online_experiment(config, result.world, width, strategy, mode));
      }
    }
  }
  return result;
}

}  // namespace fragility
