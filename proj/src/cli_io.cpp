#include "fragility/cli_io.hpp"

#include <chrono>
#include <cmath>
#include <set>
#include <unordered_map>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "fragility/csv.hpp"
#include "fragility/errors.hpp"

namespace fragility {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string state_label(std::size_t state) { return state_name(state); }

std::string width_label(double width) { return fmt::format("{:g}", width); }

void append_row(std::string& out, std::initializer_list<std::string_view> fields) {
  bool first = true;
  for (const auto f : fields) {
    if (!first) out += ',';
    out.append(f);
    first = false;
  }
  out += '\n';
}

void require_unit_interval(double v, const CsvTable& t, std::size_t row, std::string_view what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw InvalidInput(fmt::format("{}:{}: {} must lie in [0, 1] (got {})", t.source(), t.line(row),
                                   what, v));
  }
}

}  // namespace

std::vector<FieldRecord> make_field_records(std::span<const Building> buildings,
                                            std::span<const PnMarginal> stage1,
                                            std::span<const PnMoments> reported,
                                            const GpPosterior* gp) {
  const std::size_t cells = buildings.size() * kNumStates;
  if (stage1.size() != cells || reported.size() != cells) {
    throw InvalidInput("field layers do not match the building count");
  }
  if (gp && static_cast<std::size_t>(gp->mean.size()) != cells) {
    throw InvalidInput("GP posterior does not match the building count");
  }
  std::vector<FieldRecord> out;
  out.reserve(cells);
  for (std::size_t i = 0; i < buildings.size(); ++i) {
    for (std::size_t j = 0; j < kNumStates; ++j) {
      const std::size_t k = i * kNumStates + j;
      FieldRecord r;
      r.building_id = buildings[i].id;
      r.state = j;
      r.reported = reported[k];
      r.stage1 = stage1[k];
      r.position = buildings[i].position;
      r.archetype = buildings[i].archetype;
      if (gp) {
        r.gp_mean = gp->mean[static_cast<Eigen::Index>(k)];
        r.gp_var = gp->variance[static_cast<Eigen::Index>(k)];
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::string field_csv(std::span<const FieldRecord> records) {
  const bool with_gp = !records.empty() && records.front().gp_mean.has_value();
  std::string out = "building_id,state,m,var_p,mu,sigma2,x_m,y_m,archetype";
  out += with_gp ? ",gp_mean,gp_var\n" : "\n";
  for (const auto& r : records) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}", r.building_id, state_label(r.state),
                       format_double(r.reported.m), format_double(r.reported.zeta),
                       format_double(r.stage1.mu), format_double(r.stage1.sigma2),
                       format_double(r.position.x), format_double(r.position.y), r.archetype);
    if (with_gp) {
      out += fmt::format(",{},{}", format_double(r.gp_mean.value_or(NAN)),
                         format_double(r.gp_var.value_or(NAN)));
    }
    out += '\n';
  }
  return out;
}

std::vector<FieldRecord> read_field_csv(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto c_id = t.column("building_id");
  const auto c_state = t.column("state");
  const auto c_m = t.column("m");
  const auto c_var = t.column("var_p");
  const auto c_mu = t.column("mu");
  const auto c_s2 = t.column("sigma2");
  const auto c_x = t.column("x_m");
  const auto c_y = t.column("y_m");
  const auto c_arch = t.column("archetype");
  const bool with_gp = t.has_column("gp_mean") && t.has_column("gp_var");

  std::vector<std::string> order;
  std::unordered_map<std::string, std::array<std::optional<FieldRecord>, kNumStates>> cells;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    FieldRecord rec;
    rec.building_id = t.text(r, c_id);
    try {
      rec.state = state_index(t.text(r, c_state));
    } catch (const InvalidInput& e) {
      throw InvalidInput(fmt::format("{}:{}: {}", t.source(), t.line(r), e.what()));
    }
    rec.reported = {t.number(r, c_m), t.number(r, c_var)};
    rec.stage1 = {t.number(r, c_mu), t.number(r, c_s2)};
    rec.position = {t.number(r, c_x), t.number(r, c_y)};
    rec.archetype = static_cast<int>(t.integer(r, c_arch));
    if (!std::isfinite(rec.stage1.mu) || !(rec.stage1.sigma2 >= 0.0) ||
        !std::isfinite(rec.stage1.sigma2)) {
      throw InvalidInput(fmt::format("{}:{}: mu must be finite and sigma2 finite and >= 0",
                                     t.source(), t.line(r)));
    }
    require_unit_interval(rec.reported.m, t, r, "m");
    if (with_gp) {
      rec.gp_mean = t.number(r, t.column("gp_mean"));
      rec.gp_var = t.number(r, t.column("gp_var"));
    }
    auto [it, inserted] = cells.try_emplace(rec.building_id);
    if (inserted) order.push_back(rec.building_id);
    auto& slot = it->second[rec.state];
    if (slot) {
      throw InvalidInput(fmt::format("{}:{}: duplicate row for building '{}' state {}", t.source(),
                                     t.line(r), rec.building_id, state_label(rec.state)));
    }
    if (!inserted) {
      const auto& other = it->second[0] ? *it->second[0]
                          : it->second[1] ? *it->second[1]
                                          : *it->second[2];
      if (other.archetype != rec.archetype || other.position.x != rec.position.x ||
          other.position.y != rec.position.y) {
        throw InvalidInput(fmt::format("{}:{}: building '{}' has inconsistent location or archetype",
                                       t.source(), t.line(r), rec.building_id));
      }
    }
    slot = std::move(rec);
  }
  std::vector<FieldRecord> out;
  out.reserve(order.size() * kNumStates);
  for (const auto& id : order) {
    auto& slots = cells.at(id);
    for (std::size_t j = 0; j < kNumStates; ++j) {
      if (!slots[j]) {
        throw InvalidInput(fmt::format("{}: building '{}' has no row for state {}", t.source(), id,
                                       state_label(j)));
      }
      out.push_back(std::move(*slots[j]));
    }
  }
  return out;
}

std::string field_geojson(std::span<const FieldRecord> records) {
  ordered_json features = ordered_json::array();
  for (const auto& r : records) {
    ordered_json props = {{"building_id", r.building_id},
                          {"state", state_label(r.state)},
                          {"m", r.reported.m},
                          {"var_p", r.reported.zeta},
                          {"mu", r.stage1.mu},
                          {"sigma2", r.stage1.sigma2},
                          {"archetype", r.archetype},
                          {"planar_coordinates", true}};
    if (r.gp_mean) {
      props["gp_mean"] = *r.gp_mean;
      props["gp_var"] = *r.gp_var;
    }
    features.push_back({{"type", "Feature"},
                        {"id", r.building_id + ":" + state_label(r.state)},
                        {"geometry", {{"type", "Point"},
                                      {"coordinates", {r.position.x, r.position.y}}}},
                        {"properties", std::move(props)}});
  }
  ordered_json doc = {{"type", "FeatureCollection"},
                      {"coordinate_system", {{"type", "planar"}, {"units", "m"}}},
                      {"features", std::move(features)}};
  return doc.dump(1) + "\n";
}

std::vector<ObservationRecord> read_observations_csv(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto c_id = t.column("building_id");
  const auto c_state = t.column("state");
  const auto c_y = t.column("y");
  const auto c_src = t.column("source");
  std::vector<ObservationRecord> out;
  out.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    ObservationRecord o;
    o.building_id = t.text(r, c_id);
    try {
      o.state = state_index(t.text(r, c_state));
    } catch (const InvalidInput& e) {
      throw InvalidInput(fmt::format("{}:{}: {}", t.source(), t.line(r), e.what()));
    }
    o.y = t.number(r, c_y);
    require_unit_interval(o.y, t, r, "y");
    o.source = t.text(r, c_src);
    out.push_back(std::move(o));
  }
  return out;
}

std::string observations_csv(std::span<const ObservationRecord> records) {
  std::string out = "building_id,state,y,source\n";
  for (const auto& o : records) {
    append_row(out, {o.building_id, state_label(o.state), format_double(o.y), o.source});
  }
  return out;
}

WeightTable read_weights_csv(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto c_src = t.column("source");
  const auto c_state = t.column("state");
  const auto c_w = t.column("weight");
  WeightTable out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    std::size_t state = 0;
    try {
      state = state_index(t.text(r, c_state));
    } catch (const InvalidInput& e) {
      throw InvalidInput(fmt::format("{}:{}: {}", t.source(), t.line(r), e.what()));
    }
    const double w = t.number(r, c_w);
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw InvalidInput(fmt::format("{}:{}: weight must be finite and >= 0", t.source(),
                                     t.line(r)));
    }
    if (!out.emplace(std::pair{t.text(r, c_src), state}, w).second) {
      throw InvalidInput(fmt::format("{}:{}: duplicate weight for source '{}' state {}",
                                     t.source(), t.line(r), t.text(r, c_src), state_label(state)));
    }
  }
  return out;
}

std::string weights_csv(const WeightTable& weights) {
  std::string out = "source,state,weight\n";
  for (const auto& [key, w] : weights) {
    append_row(out, {key.first, state_label(key.second), format_double(w)});
  }
  return out;
}

std::string metrics_csv(std::span<const MetricsRecord> records) {
  std::string out =
      "step,mode,strategy,prior_width_m,subset,state,log_loss_vs_observer,log_loss_vs_truth,"
      "var_p_median\n";
  for (const auto& m : records) {
    append_row(out, {std::to_string(m.step), to_string(m.mode), to_string(m.strategy),
                     format_double(m.prior_width), to_string(m.subset), state_label(m.state),
                     format_double(m.log_loss_vs_observer), format_double(m.log_loss_vs_truth),
                     format_double(m.var_p_median)});
  }
  return out;
}

std::string hyperparameter_csv(std::span<const HyperparameterRecord> records) {
  std::string out =
      "step,sigma2_global,ell1,ell2,rho_a,alpha_local,tau,log_marginal_likelihood,iterations\n";
  for (const auto& h : records) {
    const auto& p = h.params;
    append_row(out, {std::to_string(h.step), format_double(p.sigma2_global), format_double(p.ell1),
                     format_double(p.ell2), format_double(p.rho_a), format_double(p.alpha_local),
                     format_double(p.tau), format_double(h.log_marginal_likelihood),
                     std::to_string(h.iterations)});
  }
  return out;
}

std::string trajectory_csv(std::span<const RunResult> runs) {
  std::string out =
      "prior_width_m,strategy,mode,step,sigma2_global,ell1,ell2,rho_a,alpha_local,tau,"
      "log_marginal_likelihood,iterations\n";
  for (const auto& run : runs) {
    for (const auto& h : run.trajectory) {
      const auto& p = h.params;
      append_row(out, {format_double(run.prior_width), to_string(run.strategy),
                       to_string(run.mode), std::to_string(h.step), format_double(p.sigma2_global),
                       format_double(p.ell1), format_double(p.ell2), format_double(p.rho_a),
                       format_double(p.alpha_local), format_double(p.tau),
                       format_double(h.log_marginal_likelihood), std::to_string(h.iterations)});
    }
  }
  return out;
}

std::string ordinality_csv(std::span<const RunResult> runs) {
  std::string out = "prior_width_m,strategy,mode,step,violations\n";
  for (const auto& run : runs) {
    for (const auto& s : run.snapshots) {
      append_row(out, {format_double(run.prior_width), to_string(run.strategy),
                       to_string(run.mode), std::to_string(s.step),
                       std::to_string(s.ordinality_violations)});
    }
  }
  return out;
}

std::string snapshot_stem(const RunResult& run, std::size_t step) {
  return fmt::format("w{}_{}_{}_step{:02d}", width_label(run.prior_width), to_string(run.strategy),
                     to_string(run.mode), step);
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw NumericalFailure("SHA-256 digest failed");
  }
  std::string hex;
  hex.reserve(2 * length);
  for (unsigned int k = 0; k < length; ++k) hex += fmt::format("{:02x}", digest[k]);
  return hex;
}

OutputWriter::OutputWriter(std::filesystem::path out_dir) : out_dir_(std::move(out_dir)) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir_, ec);
  if (ec) {
    throw InvalidInput(fmt::format("cannot create output directory {}: {}", out_dir_.string(),
                                   ec.message()));
  }
}

void OutputWriter::write(const std::string& relative_path, std::string_view content) {
  const auto path = out_dir_ / relative_path;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text_file(path, content);
  entries_.push_back({relative_path, sha256_hex(content), content.size()});
}

void OutputWriter::write_manifest(const std::string& command, std::string_view config_bytes,
                                  std::uint64_t seed) {
  ordered_json files = ordered_json::array();
  for (const auto& e : entries_) {
    files.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
  }
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  ordered_json doc = {{"artifact", "fragility"},
                      {"version", kArtifactVersion},
                      {"command", command},
                      {"config_sha256", sha256_hex(config_bytes)},
                      {"seed", seed},
                      {"created_utc", fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(now))},
                      {"files", std::move(files)}};
  write_text_file(out_dir_ / "manifest.json", doc.dump(2) + "\n");
}

}  // namespace fragility
