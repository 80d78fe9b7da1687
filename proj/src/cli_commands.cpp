#include <iostream>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "fragility/cli_io.hpp"
#include "fragility/csv.hpp"
#include "fragility/errors.hpp"

namespace fragility {

namespace {

struct LoadedConfig {
  std::string bytes;
  std::filesystem::path base_dir;
};

LoadedConfig load_config(const CommandOptions& options) {
  if (options.config.empty()) throw InvalidInput("--config is required");
  LoadedConfig c;
  c.bytes = read_text_file(options.config);
  c.base_dir = options.config.has_parent_path() ? options.config.parent_path()
                                                : std::filesystem::path(".");
  return c;
}

void require_out(const CommandOptions& options) {
  if (options.out.empty()) throw InvalidInput("--out is required unless --dry-run is given");
}

std::vector<Building> buildings_of(std::span<const FieldRecord> records) {
  std::vector<Building> out;
  out.reserve(records.size() / kNumStates);
  for (std::size_t k = 0; k < records.size(); k += kNumStates) {
    out.push_back({records[k].building_id, records[k].position, records[k].archetype});
  }
  return out;
}

std::string list_first(const std::vector<std::string>& items, std::size_t limit = 10) {
  std::string out;
  for (std::size_t k = 0; k < items.size() && k < limit; ++k) {
    if (k > 0) out += ", ";
    out += items[k];
  }
  if (items.size() > limit) out += ", ...";
  return out;
}

bool wanted(SnapshotPolicy policy, std::size_t step, std::size_t last) {
  return policy == SnapshotPolicy::All || (policy == SnapshotPolicy::Final && step == last);
}

std::string calibration_csv(const World& world) {
  std::string out = "state,tp,fp,fn,f1,weight,clamped,temperature\n";
  for (std::size_t j = 0; j < world.observer.calibration.size(); ++j) {
    const auto& c = world.observer.calibration[j];
    out += fmt::format("{},{},{},{},{},{},{},{}\n", state_name(j), format_double(c.counts.tp),
                       format_double(c.counts.fp), format_double(c.counts.fn),
                       format_double(c.f1), format_double(c.weight.weight),
                       c.weight.clamped ? "true" : "false",
                       format_double(world.observer.model.temperature));
  }
  return out;
}

std::string buildings_csv(const ScenarioConfig& config, const World& world) {
  std::vector<std::string> split(world.inventory.size(), "observed");
  for (const auto i : world.holdout) split[i] = "holdout";
  std::vector<std::vector<std::size_t>> batch_of(config.strategies.size(),
                                                 std::vector<std::size_t>(world.inventory.size(), 0));
  for (std::size_t s = 0; s < config.strategies.size(); ++s) {
    for (std::size_t b = 0; b < world.batches[s].size(); ++b) {
      for (const auto i : world.batches[s][b]) batch_of[s][i] = b + 1;
    }
  }
  std::string out = "building_id,x_m,y_m,archetype,true_state,true_wind_mps,subset";
  for (const auto s : config.strategies) out += fmt::format(",batch_{}", to_string(s));
  out += '\n';
  for (std::size_t i = 0; i < world.inventory.size(); ++i) {
    const auto& b = world.inventory[i];
    out += fmt::format("{},{},{},{},{},{},{}", b.id, format_double(b.position.x),
                       format_double(b.position.y), b.archetype, world.truth.state[i],
                       format_double(world.truth.wind[i]), split[i]);
    // 0 marks holdout buildings, which arrive together after the last batch
    for (std::size_t s = 0; s < config.strategies.size(); ++s) out += fmt::format(",{}", batch_of[s][i]);
    out += '\n';
  }
  return out;
}

}  // namespace

void cmd_prior(const CommandOptions& options) {
  const auto loaded = load_config(options);
  auto config = parse_prior_config(loaded.bytes, loaded.base_dir);
  if (options.seed) config.seed = *options.seed;
  const auto inventory = read_inventory_csv(config.inventory);
  const auto table = config.fragility_table ? FragilityTable::read_csv(*config.fragility_table)
                                            : FragilityTable::builtin();
  const auto field = build_prior_field(inventory, config.track, table, config.prior);
  if (options.dry_run) return;
  require_out(options);

  std::vector<PnMoments> reported;
  reported.reserve(field.size());
  for (const auto& p : field.marginals) reported.push_back(pn_moments(p));
  const auto records = make_field_records(inventory, field.marginals, reported);
  OutputWriter out(options.out);
  out.write("field.csv", field_csv(records));
  out.write("field.geojson", field_geojson(records));
  out.write_manifest("prior", loaded.bytes, config.seed);
}

void cmd_update(const CommandOptions& options) {
  const auto loaded = load_config(options);
  auto config = parse_update_config(loaded.bytes, loaded.base_dir);
  if (options.seed) config.seed = *options.seed;
  const auto records = read_field_csv(config.field);
  const auto observations = read_observations_csv(config.observations);
  const auto weights = read_weights_csv(config.weights);

  const auto buildings = buildings_of(records);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < buildings.size(); ++i) index.emplace(buildings[i].id, i);

  std::vector<std::string> unknown_ids, missing_weights;
  std::vector<std::vector<WeightedObservation>> batches(records.size());
  for (const auto& o : observations) {
    const auto it = index.find(o.building_id);
    if (it == index.end()) {
      if (std::find(unknown_ids.begin(), unknown_ids.end(), o.building_id) == unknown_ids.end()) {
        unknown_ids.push_back(o.building_id);
      }
      continue;
    }
    const auto w = weights.find({o.source, o.state});
    if (w == weights.end()) {
      const auto key = fmt::format("{}/{}", o.source, state_name(o.state));
      if (std::find(missing_weights.begin(), missing_weights.end(), key) == missing_weights.end()) {
        missing_weights.push_back(key);
      }
      continue;
    }
    batches[it->second * kNumStates + o.state].push_back({o.y, w->second});
  }
  if (!unknown_ids.empty()) {
    throw InvalidInput(fmt::format("observations reference {} building id(s) not in the field: {}",
                                   unknown_ids.size(), list_first(unknown_ids)));
  }
  if (!missing_weights.empty()) {
    throw InvalidInput(fmt::format("no weight for source/state: {}", list_first(missing_weights)));
  }
  if (options.dry_run) return;
  require_out(options);

  std::vector<PnMarginal> stage1;
  stage1.reserve(records.size());
  for (std::size_t k = 0; k < records.size(); ++k) {
    stage1.push_back(batches[k].empty() ? records[k].stage1
                                        : local_update_cycle(records[k].stage1, batches[k]));
  }

  OutputWriter out(options.out);
  if (config.mode == UpdateMode::LocalOnly) {
    std::vector<PnMoments> reported;
    reported.reserve(stage1.size());
    for (const auto& p : stage1) reported.push_back(pn_moments(p));
    const auto updated = make_field_records(buildings, stage1, reported);
    out.write("field.csv", field_csv(updated));
    out.write("field.geojson", field_geojson(updated));
  } else {
    std::vector<Point2> positions;
    for (const auto& b : buildings) positions.push_back(b.position);
    const auto layer = gp_reporting_layer(buildings, stage1, CoordinateScaling::fit(positions),
                                          config.gp, config.gp.init, 0, config.seed);
    const auto updated = make_field_records(buildings, stage1, layer.reported, &layer.posterior);
    out.write("field.csv", field_csv(updated));
    out.write("field.geojson", field_geojson(updated));
    const HyperparameterRecord row{0, layer.fit.params, layer.fit.log_marginal_likelihood,
                                   layer.fit.iterations};
    out.write("trajectory.csv", hyperparameter_csv(std::span(&row, 1)));
  }
  out.write_manifest("update", loaded.bytes, config.seed);
}

void cmd_experiment(const CommandOptions& options) {
  const auto loaded = load_config(options);
  auto config = parse_experiment_config(loaded.bytes, loaded.base_dir);
  auto& scenario = config.scenario;
  if (options.seed) scenario.seed = *options.seed;
  if (options.dry_run) {
    if (scenario.inventory_file) read_inventory_csv(*scenario.inventory_file);
    if (scenario.fragility_table) FragilityTable::read_csv(*scenario.fragility_table);
    return;
  }
  require_out(options);

  const auto result = run_scenario(scenario);
  const auto& world = result.world;
  OutputWriter out(options.out);
  out.write("metrics.csv", metrics_csv(result.metrics()));
  out.write("trajectory.csv", trajectory_csv(result.runs));
  out.write("ordinality.csv", ordinality_csv(result.runs));
  out.write("calibration.csv", calibration_csv(world));
  out.write("buildings.csv", buildings_csv(scenario, world));

  std::vector<ObservationRecord> observations;
  for (std::size_t i = 0; i < world.inventory.size(); ++i) {
    for (std::size_t j = 0; j < kNumStates; ++j) {
      observations.push_back({world.inventory[i].id, j, world.observer.exceedance[i][j], "observer"});
    }
  }
  out.write("observations.csv", observations_csv(observations));
  WeightTable weights;
  for (std::size_t j = 0; j < kNumStates; ++j) weights[{"observer", j}] = world.observer.weights[j];
  out.write("weights.csv", weights_csv(weights));

  for (const auto& run : result.runs) {
    const std::size_t last = run.snapshots.empty() ? 0 : run.snapshots.back().step;
    for (const auto& snap : run.snapshots) {
      const bool csv = wanted(config.csv_snapshots, snap.step, last);
      const bool geojson = wanted(config.geojson_snapshots, snap.step, last);
      if (!csv && !geojson) continue;
      const auto records = make_field_records(world.inventory, snap.stage1, snap.reported,
                                              snap.gp ? &*snap.gp : nullptr);
      const auto stem = "snapshots/" + snapshot_stem(run, snap.step);
      if (csv) out.write(stem + ".csv", field_csv(records));
      if (geojson) out.write(stem + ".geojson", field_geojson(records));
    }
  }
  out.write_manifest("experiment", loaded.bytes, scenario.seed);
}

int run_command(const std::string& name, const CommandOptions& options) {
  try {
    if (name == "prior") {
      cmd_prior(options);
    } else if (name == "update") {
      cmd_update(options);
    } else if (name == "experiment") {
      cmd_experiment(options);
    } else {
      throw InvalidInput(fmt::format("unknown command '{}'", name));
    }
    return kExitOk;
  } catch (const NumericalFailure& e) {
    std::cerr << "error: numerical failure: " << e.what() << '\n';
    return kExitNumericalFailure;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  }
}

}  // namespace fragility
