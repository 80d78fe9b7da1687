#pragma once

// Observation sources: exceedance aggregation of categorical soft outputs,
// soft confusion counts, soft F1, and the F1 -> reliability-weight map
//   w = log2(1 / (1 - F1)^2) = -2 log2(1 - F1).

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fragility {

/// Number of damage states throughout (Moderate, Extensive, Complete).
inline constexpr std::size_t kNumStates = 3;

/// Default cap for sources with perfect calibration F1 (error 2^-15).
inline constexpr double kDefaultMaxWeight = 30.0;

/// Soft categorical prediction over the damaged states, ordered by severity.
/// The remaining mass 1 - sum is the no-damage class.
using CategoricalSoftPrediction = std::vector<double>;

/// Exceedance probabilities y_j = sum_{k >= j} S_k; non-increasing in j.
std::vector<double> exceedance_from_categorical(std::span<const double> categorical);

struct EvaluationSample {
  std::string id;
  std::vector<int> observed;      // o_j in {0, 1}, non-increasing in j
  std::vector<double> predicted;  // g_j in [0, 1]
};

struct SoftConfusion {
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;
};

SoftConfusion soft_confusion(std::span<const EvaluationSample> samples, std::size_t state);

double soft_f1(const SoftConfusion& counts);

struct WeightResult {
  double weight = 0.0;
  bool clamped = false;  // F1 reached 1 (or the raw weight exceeded the cap)
};

/// -2 log2(1 - f1), capped at max_weight.
WeightResult weight_from_f1(double f1, double max_weight = kDefaultMaxWeight);

struct StateCalibration {
  SoftConfusion counts;
  double f1 = 0.0;
  WeightResult weight;
};

/// Per-state soft F1 and weight for one source over an evaluation subset.
std::vector<StateCalibration> calibrate_source(std::span<const EvaluationSample> samples,
                                               double max_weight = kDefaultMaxWeight);

/// Calibration samples from CSV with header
///   sample_id,o_mod,o_ext,o_comp,g_mod,g_ext,g_comp
std::vector<EvaluationSample> read_calibration_csv(const std::filesystem::path& path);

}  // namespace fragility
