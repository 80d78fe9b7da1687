#include "fragility/hazard_prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "fragility/csv.hpp"
#include "fragility/errors.hpp"

namespace fragility {

namespace {

const std::array<std::string, kNumStates> kStateNames = {"moderate", "extensive", "complete"};

FragilityTable::Row row(double m1, double b1, double m2, double b2, double m3, double b3) {
  return {FragilityCurve{m1, b1}, FragilityCurve{m2, b2}, FragilityCurve{m3, b3}};
}

void validate_row(int archetype, const FragilityTable::Row& r) {
  for (std::size_t j = 0; j < kNumStates; ++j) {
    if (!(r[j].median > 0.0) || !(r[j].dispersion > 0.0)) {
      throw InvalidInput(fmt::format("archetype {} {}: median and dispersion must be > 0",
                                     archetype, kStateNames[j]));
    }
    if (j > 0 && r[j].median < r[j - 1].median) {
      throw InvalidInput(fmt::format("archetype {}: medians must be non-decreasing with severity",
                                     archetype));
    }
  }
}

}  // namespace

const std::string& state_name(std::size_t state) { return kStateNames.at(state); }

std::size_t state_index(std::string_view name) {
  for (std::size_t j = 0; j < kNumStates; ++j) {
    if (kStateNames[j] == name) return j;
  }
  throw InvalidInput(fmt::format("unknown damage state '{}'", name));
}

void TornadoTrack::validate() const {
  if (centerline.size() < 2) throw InvalidInput("track centerline needs at least two points");
  for (const auto& p : centerline) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw InvalidInput("track centerline has non-finite coordinates");
    }
  }
  if (!(width_total >= 0.0) || !std::isfinite(width_total)) {
    throw InvalidInput("track width must be finite and >= 0");
  }
  if (!(core_fraction > 0.0 && core_fraction < edge_fraction && edge_fraction < 1.0)) {
    throw InvalidInput("need 0 < core_fraction < edge_fraction < 1");
  }
  if (!(v_core > v_edge && v_edge > 0.0)) throw InvalidInput("need v_core > v_edge > 0");
}

FragilityTable::FragilityTable(std::map<int, Row> rows) : rows_(std::move(rows)) {
  for (const auto& [a, r] : rows_) validate_row(a, r);
}

const FragilityTable& FragilityTable::builtin() {
  static const FragilityTable table = [] {
    std::map<int, Row> rows;
    for (int a = 1; a <= 4; ++a) rows[a] = row(35.2, 0.14, 37.7, 0.13, 49.4, 0.12);
    rows[5] = row(38.5, 0.13, 40.4, 0.13, 48.9, 0.12);
    rows[6] = row(37.5, 0.11, 49.2, 0.11, 58.9, 0.21);
    rows[7] = row(40.2, 0.10, 44.0, 0.10, 47.7, 0.10);
    rows[8] = row(35.3, 0.14, 52.7, 0.15, 62.5, 0.19);
    rows[9] = row(42.3, 0.11, 49.2, 0.10, 65.0, 0.12);
    rows[10] = row(41.9, 0.11, 49.2, 0.11, 71.2, 0.12);
    rows[11] = row(49.2, 0.12, 57.1, 0.12, 65.7, 0.19);
    rows[12] = row(44.0, 0.09, 64.4, 0.09, 77.9, 0.09);
    rows[13] = row(38.7, 0.11, 48.2, 0.11, 63.1, 0.17);
    rows[14] = row(35.0, 0.11, 45.4, 0.11, 56.5, 0.13);
    rows[15] = row(35.2, 0.12, 55.7, 0.12, 70.1, 0.12);
    rows[16] = row(31.8, 0.12, 60.3, 0.12, 70.8, 0.12);
    rows[17] = row(39.1, 0.12, 44.5, 0.11, 49.2, 0.12);
    rows[18] = row(37.9, 0.12, 48.2, 0.10, 57.7, 0.17);
    rows[19] = row(39.4, 0.12, 49.7, 0.11, 64.4, 0.17);
    return FragilityTable(std::move(rows));
  }();
  return table;
}

FragilityTable FragilityTable::read_csv(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto c_arch = t.column("archetype");
  const auto c_state = t.column("state");
  const auto c_median = t.column("median_mps");
  const auto c_disp = t.column("dispersion");
  std::map<int, Row> rows;
  std::map<int, std::set<std::size_t>> seen;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto a = static_cast<int>(t.integer(r, c_arch));
    std::size_t j;
    try {
      j = state_index(t.text(r, c_state));
    } catch (const InvalidInput& e) {
      throw InvalidInput(fmt::format("{}:{}: {}", t.source(), t.line(r), e.what()));
    }
    if (!seen[a].insert(j).second) {
      throw InvalidInput(fmt::format("{}:{}: duplicate entry for archetype {} {}", t.source(),
                                     t.line(r), a, state_name(j)));
    }
    rows[a][j] = {t.number(r, c_median), t.number(r, c_disp)};
  }
  for (const auto& [a, states] : seen) {
    if (states.size() != kNumStates) {
      throw InvalidInput(fmt::format("{}: archetype {} lacks some damage states", t.source(), a));
    }
  }
  return FragilityTable(std::move(rows));
}

const FragilityTable::Row& FragilityTable::at(int archetype) const {
  const auto it = rows_.find(archetype);
  if (it == rows_.end()) {
    throw InvalidInput(fmt::format("archetype {} missing from fragility table", archetype));
  }
  return it->second;
}

double distance_to_centerline(const Point2& p, const TornadoTrack& track) {
  const auto& line = track.centerline;
  if (line.size() < 2) throw InvalidInput("track centerline needs at least two points");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < line.size(); ++k) {
    const double ax = line[k].x, ay = line[k].y;
    const double dx = line[k + 1].x - ax, dy = line[k + 1].y - ay;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((p.x - ax) * dx + (p.y - ay) * dy) / len2, 0.0, 1.0);
    best = std::min(best, std::hypot(p.x - (ax + t * dx), p.y - (ay + t * dy)));
  }
  return best;
}

double wind_speed(double r, const TornadoTrack& track) {
  if (!(r >= 0.0)) throw InvalidInput("distance must be >= 0");
  if (track.width_total == 0.0) return 0.0;
  const double r_core = track.core_radius();
  if (r <= r_core) return track.v_core;
  const double exponent =
      std::log(track.v_core / track.v_edge) / std::log(track.edge_radius() / r_core);
  return track.v_core * std::pow(r_core / r, exponent);
}

FieldState build_prior_field(std::span<const Building> inventory, const TornadoTrack& track,
                             const FragilityTable& table, const PriorOptions& options) {
  track.validate();
  if (!(options.wind_floor > 0.0)) throw InvalidInput("wind floor must be > 0");
  FieldState field;
  field.buildings.assign(inventory.begin(), inventory.end());
  field.marginals.resize(inventory.size() * kNumStates);
  for (std::size_t i = 0; i < inventory.size(); ++i) {
    const auto& b = inventory[i];
    const auto& curves = table.at(b.archetype);
    const double v = std::max(wind_speed(distance_to_centerline(b.position, track), track),
                              options.wind_floor);
    const HazardLaw hazard{std::log(v), options.beta_hazard};
    std::array<double, kNumStates> mus{};
    for (std::size_t j = 0; j < kNumStates; ++j) {
      const CapacityLaw capacity{std::log(curves[j].median), options.beta_capacity,
                                 curves[j].dispersion};
      field.at(i, j) = latent_from_physics(hazard, capacity);
      mus[j] = field.at(i, j).mu;
    }
    const auto clipped = clip_ordinal_probit(mus, options.clip_bound, options.separation);
    for (std::size_t j = 0; j < kNumStates; ++j) field.at(i, j).mu = clipped[j];
  }
  return field;
}

std::vector<Building> read_inventory_csv(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto c_id = t.column("id");
  const auto c_x = t.column("x_m");
  const auto c_y = t.column("y_m");
  const auto c_arch = t.column("archetype");
  std::vector<Building> out;
  out.reserve(t.rows());
  std::set<std::string> ids;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    Building b;
    b.id = t.text(r, c_id);
    b.position = {t.number(r, c_x), t.number(r, c_y)};
    b.archetype = static_cast<int>(t.integer(r, c_arch));
    if (b.archetype < kMinArchetype || b.archetype > kMaxArchetype) {
      throw InvalidInput(fmt::format("{}:{}: archetype {} outside 1..19", t.source(), t.line(r),
                                     b.archetype));
    }
    if (!std::isfinite(b.position.x) || !std::isfinite(b.position.y)) {
      throw InvalidInput(fmt::format("{}:{}: non-finite coordinates", t.source(), t.line(r)));
    }
    if (!ids.insert(b.id).second) {
      throw InvalidInput(fmt::format("{}:{}: duplicate building id '{}'", t.source(), t.line(r),
                                     b.id));
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<Point2> read_centerline_csv(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto c_x = t.column("x_m");
  const auto c_y = t.column("y_m");
  std::vector<Point2> out;
  for (std::size_t r = 0; r < t.rows(); ++r) out.push_back({t.number(r, c_x), t.number(r, c_y)});
  return out;
}

}  // namespace fragility
