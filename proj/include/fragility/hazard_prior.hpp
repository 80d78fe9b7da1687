#pragma once

// Translating Rankine-type vortex wind field, archetype fragility tables, and
// the physics-based prior field over a building inventory.

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fragility/evidence.hpp"
#include "fragility/probit_normal.hpp"

namespace fragility {

struct Point2 {
  double x = 0.0;  // projected metres
  double y = 0.0;
};

struct Building {
  std::string id;
  Point2 position;
  int archetype = 1;  // 1..19
};

struct TornadoTrack {
  std::vector<Point2> centerline;
  double width_total = 800.0;  // metres
  double v_core = 115.0;       // m/s
  double v_edge = 38.0;        // m/s
  double core_fraction = 0.273;
  double edge_fraction = 0.873;

  double core_radius() const { return core_fraction * width_total / 2.0; }
  double edge_radius() const { return edge_fraction * width_total / 2.0; }
  void validate() const;
};

struct FragilityCurve {
  double median = 0.0;      // m/s
  double dispersion = 0.0;  // log-std
};

/// Per-archetype fragility curves for Moderate, Extensive, Complete.
class FragilityTable {
 public:
  using Row = std::array<FragilityCurve, kNumStates>;

  FragilityTable() = default;
  explicit FragilityTable(std::map<int, Row> rows);

  /// The 19-archetype tornado table shipped with the library.
  static const FragilityTable& builtin();
  /// CSV with header archetype,state,median_mps,dispersion; state is
  /// moderate|extensive|complete.
  static FragilityTable read_csv(const std::filesystem::path& path);

  bool contains(int archetype) const { return rows_.contains(archetype); }
  const Row& at(int archetype) const;
  const std::map<int, Row>& rows() const { return rows_; }

 private:
  std::map<int, Row> rows_;
};

inline constexpr int kMinArchetype = 1;
inline constexpr int kMaxArchetype = 19;

/// "moderate", "extensive", "complete".
const std::string& state_name(std::size_t state);
/// Inverse of state_name; throws InvalidInput.
std::size_t state_index(std::string_view name);

double distance_to_centerline(const Point2& p, const TornadoTrack& track);

/// Wind speed at perpendicular distance r: constant core, power-law decay
/// through (R_edge, v_edge). A zero-width track yields 0 everywhere.
double wind_speed(double r, const TornadoTrack& track);

struct PriorOptions {
  double beta_hazard = 0.09;
  double beta_capacity = 0.40;
  double clip_bound = 3.0;
  double separation = 0.05;
  double wind_floor = 1.0;  // m/s, applied before the logarithm
};

/// Latent marginals for every (building, state), building-major.
struct FieldState {
  std::vector<Building> buildings;
  std::vector<PnMarginal> marginals;  // index i * kNumStates + j

  std::size_t size() const { return marginals.size(); }
  PnMarginal& at(std::size_t building, std::size_t state) {
    return marginals[building * kNumStates + state];
  }
  const PnMarginal& at(std::size_t building, std::size_t state) const {
    return marginals[building * kNumStates + state];
  }
};

FieldState build_prior_field(std::span<const Building> inventory, const TornadoTrack& track,
                             const FragilityTable& table, const PriorOptions& options = {});

/// Inventory CSV: id,x_m,y_m,archetype.
std::vector<Building> read_inventory_csv(const std::filesystem::path& path);
/// Centerline CSV: x_m,y_m.
std::vector<Point2> read_centerline_csv(const std::filesystem::path& path);

}  // namespace fragility
