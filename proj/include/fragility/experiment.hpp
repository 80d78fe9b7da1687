#pragma once

// Online-learning experiment on a synthetic city: ground truth from a "true"
// tornado, a simulated image classifier as the observation source, an
// observed/holdout split released in batches, and log-loss tracking for
// local-only versus GP-enabled updating.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fragility/beta_bridge.hpp"
#include "fragility/evidence.hpp"
#include "fragility/gp_field.hpp"
#include "fragility/hazard_prior.hpp"
#include "fragility/rng.hpp"

namespace fragility {

enum class UpdateMode { LocalOnly, GpEnabled };
enum class SamplingStrategy { Random, Grouped };
enum class Subset { Observed, Unobserved };
enum class ObserverKind { Softmax, Perfect, Uniform };

std::string_view to_string(UpdateMode mode);          // "local-only" | "gp-enabled"
std::string_view to_string(SamplingStrategy strategy);  // "random" | "grouped"
std::string_view to_string(Subset subset);            // "observed" | "unobserved"
std::string_view to_string(ObserverKind kind);        // "softmax" | "perfect" | "uniform"
UpdateMode parse_update_mode(std::string_view text);
SamplingStrategy parse_sampling_strategy(std::string_view text);
ObserverKind parse_observer_kind(std::string_view text);

/// Buildings scattered uniformly over a rectangle centred on the origin.
struct SyntheticInventory {
  std::size_t count = 500;
  double half_length = 3000.0;  // metres along x
  double half_width = 1500.0;   // metres along y
  double residential_fraction = 0.7;  // archetypes 1-4; the rest uniform over 5-19
};

std::vector<Building> generate_inventory(const SyntheticInventory& spec, Rng& rng,
                                         std::string_view id_prefix = "b");

/// Damage state per building: 0 none, 1 moderate, 2 extensive, 3 complete.
struct GroundTruth {
  std::vector<int> state;
  std::vector<double> wind;  // m/s at the building
};

/// Samples an independent lognormal capacity per damage state and assigns
/// the highest state whose capacity the true wind exceeds.
GroundTruth generate_truth(std::span<const Building> inventory, const TornadoTrack& track,
                           const FragilityTable& table, Rng& rng);

/// Exceedance indicators o_j = [state > j] for j = 0..2.
std::vector<int> exceedance_indicators(int state);

/// Synthetic classifier over {none, moderate, extensive, complete}:
/// softmax(-|k - s| / temperature + noise * N(0, 1)).
struct ObserverModel {
  ObserverKind kind = ObserverKind::Softmax;
  double temperature = 1.0;
  double noise = 0.5;
};

/// Damaged-state masses (moderate, extensive, complete) for one building.
CategoricalSoftPrediction observe(const ObserverModel& model, int true_state, Rng& rng);

struct ObserverConfig {
  ObserverKind kind = ObserverKind::Softmax;
  double target_f1 = 0.9;          // mean soft F1 over states on the calibration set
  double noise = 0.5;
  std::optional<double> temperature;  // fixed; otherwise tuned to target_f1
  std::size_t calibration_size = 300;
  double max_weight = kDefaultMaxWeight;
};

/// Mean soft F1 across states for a model on the given true states, using a
/// fixed stream so that repeated calls see the same noise.
double mean_soft_f1(const ObserverModel& model, std::span<const int> states, std::uint64_t seed);

/// Bisection on log temperature to hit target_f1 (clamped to what the noise
/// level can reach).
ObserverModel tune_observer(const ObserverConfig& config, std::span<const int> states,
                            std::uint64_t seed);

struct ObserverOutput {
  ObserverModel model;
  std::vector<std::vector<double>> exceedance;  // per inventory building, y_j
  std::vector<StateCalibration> calibration;    // per state
  std::array<double, kNumStates> weights{};
};

/// Observer predictions for the inventory, plus per-state weights calibrated
/// on a separate synthetic calibration set.
ObserverOutput simulate_observer(std::span<const int> inventory_states,
                                 std::span<const int> calibration_states,
                                 const ObserverConfig& config, std::uint64_t seed);

/// Partition of positions 0..points.size()-1 into n_batches sets whose sizes
/// differ by at most one. Grouped batches are spatial k-means clusters,
/// balanced by moving boundary points to the nearest undersized cluster.
std::vector<std::vector<std::size_t>> make_batches(std::span<const Point2> points,
                                                   SamplingStrategy strategy,
                                                   std::size_t n_batches, std::uint64_t seed);

/// Binary cross-entropy of prediction m against soft target y, with m
/// clamped to [1e-12, 1 - 1e-12].
double log_loss(double m, double y);

struct GpSettings {
  CompositeKernelParams init;
  int cold_restarts = 3;
  int warm_restarts = 1;
  int max_iterations = 500;
  double tolerance = 1e-6;
  std::size_t fit_buildings = 200;  // hyperparameters fitted on this many buildings; 0 = all
  std::size_t exact_cap = 4000;
  std::size_t max_inducing = 512;
  bool enforce_ordinality = false;
};

/// Floor on pseudo-observation noise handed to the GP.
inline constexpr double kMinPseudoNoise = 1e-6;

struct GpLayer {
  FitResult fit;
  GpPosterior posterior;
  std::vector<PnMoments> reported;
};

/// GP reporting layer over Stage-1 marginals (building-major): hyperparameters
/// fitted on a seeded subsample starting from `start` (step 0 is a cold fit
/// with cold_restarts; later steps add a fresh start from settings.init), then
/// the exact posterior over all cells, sparse above exact_cap.
GpLayer gp_reporting_layer(std::span<const Building> buildings, std::span<const PnMarginal> stage1,
                           const CoordinateScaling& scaling, const GpSettings& settings,
                           const CompositeKernelParams& start, std::size_t step,
                           std::uint64_t seed);

struct ScenarioConfig {
  std::optional<std::filesystem::path> inventory_file;
  std::optional<std::filesystem::path> fragility_table;  // builtin table when empty
  SyntheticInventory synthetic;
  TornadoTrack true_track = default_true_track();
  std::vector<double> prior_widths{0.0, 800.0, 3200.0};
  std::size_t n_batches = 8;
  double holdout_fraction = 0.2;
  std::vector<SamplingStrategy> strategies{SamplingStrategy::Random};
  std::vector<UpdateMode> modes{UpdateMode::LocalOnly, UpdateMode::GpEnabled};
  ObserverConfig observer;
  PriorOptions prior;
  GpSettings gp;
  std::uint64_t seed = 20240501;

  static TornadoTrack default_true_track();
  void validate() const;
};

/// Everything shared by the runs of one scenario: the same city, truth,
/// observations, split and batches for every prior width and mode.
struct World {
  FragilityTable table;
  std::vector<Building> inventory;
  GroundTruth truth;
  ObserverOutput observer;
  double calibration_f1 = 0.0;
  std::vector<std::size_t> observed;  // building indices, sorted
  std::vector<std::size_t> holdout;   // building indices, sorted
  std::vector<std::vector<std::vector<std::size_t>>> batches;  // per strategy, building indices
  CoordinateScaling scaling;
};

World build_world(const ScenarioConfig& config);

struct MetricsRecord {
  std::size_t step = 0;
  UpdateMode mode = UpdateMode::LocalOnly;
  SamplingStrategy strategy = SamplingStrategy::Random;
  double prior_width = 0.0;
  Subset subset = Subset::Observed;
  std::size_t state = 0;
  double log_loss_vs_observer = 0.0;
  double log_loss_vs_truth = 0.0;
  double var_p_median = 0.0;
};

/// Per-cell field at one step: Stage-1 marginals plus the reported
/// probability-space layer (GP posterior in gp-enabled mode).
struct FieldSnapshot {
  std::size_t step = 0;
  std::vector<PnMarginal> stage1;  // building-major
  std::vector<PnMoments> reported;
  std::optional<GpPosterior> gp;
  std::size_t ordinality_violations = 0;
};

struct HyperparameterRecord {
  std::size_t step = 0;
  CompositeKernelParams params;
  double log_marginal_likelihood = 0.0;
  int iterations = 0;
};

struct RunResult {
  double prior_width = 0.0;
  SamplingStrategy strategy = SamplingStrategy::Random;
  UpdateMode mode = UpdateMode::LocalOnly;
  std::vector<MetricsRecord> metrics;
  std::vector<FieldSnapshot> snapshots;  // steps 0..n_batches+1
  std::vector<HyperparameterRecord> trajectory;  // gp-enabled only
};

/// Step 0 is the prior, steps 1..n_batches release the observed batches and
/// step n_batches+1 assimilates the holdout at once.
RunResult run_online_experiment(const ScenarioConfig& config, const World& world,
                                double prior_width, SamplingStrategy strategy, UpdateMode mode);

struct ScenarioResult {
  World world;
  std::vector<RunResult> runs;  // widths x strategies x modes, in that nesting order
  std::vector<MetricsRecord> metrics() const;
};

ScenarioResult run_scenario(const ScenarioConfig& config);

}  // namespace fragility
