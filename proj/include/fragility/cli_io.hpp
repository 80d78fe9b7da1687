#pragma once

// Configuration parsing, field/metrics file formats, run manifests and the
// three CLI commands (prior, update, experiment).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fragility/experiment.hpp"

namespace fragility {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kArtifactVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 2;
inline constexpr int kExitNumericalFailure = 3;

// ---------------------------------------------------------------------------
// Field files

/// One (building, state) row of a field file. mu/sigma2 always hold the
/// Stage-1 marginal; m/var_p hold the reported layer (GP posterior in gp mode).
struct FieldRecord {
  std::string building_id;
  std::size_t state = 0;
  PnMoments reported;
  PnMarginal stage1;
  Point2 position;
  int archetype = 1;
  std::optional<double> gp_mean;
  std::optional<double> gp_var;
};

/// Records in building-major order. `gp` adds the gp_mean/gp_var columns.
std::vector<FieldRecord> make_field_records(std::span<const Building> buildings,
                                            std::span<const PnMarginal> stage1,
                                            std::span<const PnMoments> reported,
                                            const GpPosterior* gp = nullptr);

/// Columns building_id,state,m,var_p,mu,sigma2,x_m,y_m,archetype[,gp_mean,gp_var].
std::string field_csv(std::span<const FieldRecord> records);

/// Every building must list each state exactly once; rows come back in
/// building-major order of first appearance.
std::vector<FieldRecord> read_field_csv(const std::filesystem::path& path);

/// FeatureCollection of Point features in planar metres.
std::string field_geojson(std::span<const FieldRecord> records);

// ---------------------------------------------------------------------------
// Observation and weight files

struct ObservationRecord {
  std::string building_id;
  std::size_t state = 0;
  double y = 0.0;
  std::string source;
};

/// Columns building_id,state,y,source; y in [0, 1].
std::vector<ObservationRecord> read_observations_csv(const std::filesystem::path& path);
std::string observations_csv(std::span<const ObservationRecord> records);

/// (source, state) -> weight. Columns source,state,weight; weight >= 0.
using WeightTable = std::map<std::pair<std::string, std::size_t>, double>;
WeightTable read_weights_csv(const std::filesystem::path& path);
std::string weights_csv(const WeightTable& weights);

// ---------------------------------------------------------------------------
// Experiment outputs

std::string metrics_csv(std::span<const MetricsRecord> records);
/// One row per hyperparameter fit: step, the six kernel parameters, LML, iterations.
std::string hyperparameter_csv(std::span<const HyperparameterRecord> records);
std::string trajectory_csv(std::span<const RunResult> runs);
std::string ordinality_csv(std::span<const RunResult> runs);
/// File stem for one run's snapshot, e.g. "w800_random_gp-enabled_step03".
std::string snapshot_stem(const RunResult& run, std::size_t step);

// ---------------------------------------------------------------------------
// Configuration

struct PriorCommandConfig {
  std::filesystem::path inventory;
  std::optional<std::filesystem::path> fragility_table;
  TornadoTrack track;
  PriorOptions prior;
  std::uint64_t seed = 0;
};

struct UpdateCommandConfig {
  std::filesystem::path field;
  std::filesystem::path observations;
  std::filesystem::path weights;
  UpdateMode mode = UpdateMode::LocalOnly;
  GpSettings gp;
  std::uint64_t seed = 0;
};

enum class SnapshotPolicy { None, Final, All };

struct ExperimentCommandConfig {
  ScenarioConfig scenario;
  SnapshotPolicy csv_snapshots = SnapshotPolicy::All;
  SnapshotPolicy geojson_snapshots = SnapshotPolicy::Final;
};

/// Strict JSON parsing: schema_version must match, unknown keys and type
/// mismatches throw InvalidInput naming the field path (e.g. $.gp.init.tau).
/// Relative paths resolve against `base_dir`.
PriorCommandConfig parse_prior_config(const std::string& text,
                                      const std::filesystem::path& base_dir);
UpdateCommandConfig parse_update_config(const std::string& text,
                                        const std::filesystem::path& base_dir);
ExperimentCommandConfig parse_experiment_config(const std::string& text,
                                                const std::filesystem::path& base_dir);

// ---------------------------------------------------------------------------
// Manifest

std::string sha256_hex(std::string_view bytes);

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

/// Writes files under an output directory and records their digests.
class OutputWriter {
 public:
  explicit OutputWriter(std::filesystem::path out_dir);
  void write(const std::string& relative_path, std::string_view content);
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  const std::filesystem::path& directory() const { return out_dir_; }

  /// manifest.json with command, config digest, seed, version, UTC timestamp
  /// and every file written so far.
  void write_manifest(const std::string& command, std::string_view config_bytes,
                      std::uint64_t seed);

 private:
  std::filesystem::path out_dir_;
  std::vector<ManifestEntry> entries_;
};

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
};

/// Each command throws on failure; run_command maps exceptions to exit codes
/// and prints the message to stderr.
void cmd_prior(const CommandOptions& options);
void cmd_update(const CommandOptions& options);
void cmd_experiment(const CommandOptions& options);

int run_command(const std::string& name, const CommandOptions& options);

}  // namespace fragility
