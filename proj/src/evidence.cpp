#include "fragility/evidence.hpp"

#include <cmath>

#include <fmt/format.h>

#include "fragility/csv.hpp"
#include "fragility/errors.hpp"

namespace fragility {

std::vector<double> exceedance_from_categorical(std::span<const double> categorical) {
  double total = 0.0;
  for (const double s : categorical) {
    if (!(s >= 0.0 && s <= 1.0)) {
      throw InvalidInput(fmt::format("categorical probability {} outside [0, 1]", s));
    }
    total += s;
  }
  if (total > 1.0 + 1e-9) {
    throw InvalidInput(fmt::format("categorical probabilities sum to {} > 1", total));
  }
  std::vector<double> y(categorical.size());
  double tail = 0.0;
  for (std::size_t j = categorical.size(); j-- > 0;) {
    tail += categorical[j];
    y[j] = std::min(tail, 1.0);
  }
  return y;
}

SoftConfusion soft_confusion(std::span<const EvaluationSample> samples, std::size_t state) {
  if (samples.empty()) throw InvalidInput("soft confusion needs at least one sample");
  SoftConfusion c;
  for (const auto& s : samples) {
    if (state >= s.observed.size() || state >= s.predicted.size()) {
      throw InvalidInput(fmt::format("sample '{}' has no state {}", s.id, state));
    }
    const double o = s.observed[state];
    const double g = s.predicted[state];
    if (!(o == 0.0 || o == 1.0)) throw InvalidInput("ground-truth indicators must be 0 or 1");
    if (!(g >= 0.0 && g <= 1.0)) throw InvalidInput("predicted exceedance outside [0, 1]");
    c.tp += g * o;
    c.fp += g * (1.0 - o);
    c.fn += (1.0 - g) * o;
  }
  return c;
}

double soft_f1(const SoftConfusion& counts) {
  const double denom = 2.0 * counts.tp + counts.fp + counts.fn;
  if (!(denom > 0.0)) throw InvalidInput("soft F1 is undefined when TP, FP and FN are all zero");
  return 2.0 * counts.tp / denom;
}

WeightResult weight_from_f1(double f1, double max_weight) {
  if (!(f1 >= 0.0 && f1 <= 1.0)) throw InvalidInput(fmt::format("F1 {} outside [0, 1]", f1));
  if (f1 == 1.0) return {max_weight, true};
  const double w = -2.0 * std::log2(1.0 - f1);
  if (w > max_weight) return {max_weight, true};
  return {w, false};
}

std::vector<StateCalibration> calibrate_source(std::span<const EvaluationSample> samples,
                                               double max_weight) {
  std::vector<StateCalibration> out(kNumStates);
  for (std::size_t j = 0; j < kNumStates; ++j) {
    out[j].counts = soft_confusion(samples, j);
    out[j].f1 = soft_f1(out[j].counts);
    out[j].weight = weight_from_f1(out[j].f1, max_weight);
  }
  return out;
}

std::vector<EvaluationSample> read_calibration_csv(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto id = table.column("sample_id");
  const std::size_t o_cols[] = {table.column("o_mod"), table.column("o_ext"),
                                table.column("o_comp")};
  const std::size_t g_cols[] = {table.column("g_mod"), table.column("g_ext"),
                                table.column("g_comp")};
  std::vector<EvaluationSample> samples;
  samples.reserve(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    EvaluationSample s;
    s.id = table.text(r, id);
    for (std::size_t j = 0; j < kNumStates; ++j) {
      const auto o = table.integer(r, o_cols[j]);
      if (o != 0 && o != 1) {
        throw InvalidInput(fmt::format("{}:{}: indicator must be 0 or 1", path.string(),
                                       table.line(r)));
      }
      const double g = table.number(r, g_cols[j]);
      if (!(g >= 0.0 && g <= 1.0)) {
        throw InvalidInput(fmt::format("{}:{}: predicted exceedance outside [0, 1]",
                                       path.string(), table.line(r)));
      }
      s.observed.push_back(static_cast<int>(o));
      s.predicted.push_back(g);
    }
    for (std::size_t j = 1; j < kNumStates; ++j) {
      if (s.observed[j] > s.observed[j - 1]) {
        throw InvalidInput(fmt::format("{}:{}: exceedance indicators must be non-increasing",
                                       path.string(), table.line(r)));
      }
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace fragility
