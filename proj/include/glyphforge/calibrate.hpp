#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glyphforge/tensor.hpp"
#include "json.hpp"

namespace glyphforge {

/// Row-wise softmax(logits / T); T must be positive.
TensorD apply_temperature(const TensorD& logits, double temperature);

/// Mean negative log-likelihood of softmax(logits / T).
double mean_nll(const TensorD& logits, std::span<const std::size_t> labels, double temperature = 1.0);

struct TemperatureFit {
  double temperature = 1.0;
  bool degenerate = false;  // every label identical; T left at 1
};

inline constexpr double kMinTemperature = 0.05, kMaxTemperature = 20.0;

/// Golden-section search on log T over [0.05, 20] for the NLL minimizer.
/// Needs at least 10 rows.
TemperatureFit fit_temperature(const TensorD& logits, std::span<const std::size_t> labels, double tolerance = 1e-4);

struct ReliabilityBin {
  double lower = 0.0, upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;  // 0 when empty
  double accuracy = 0.0;         // 0 when empty
};

inline constexpr std::size_t kCalibrationBins = 10;

/// Ten bins [b/10, (b+1)/10), the last one closed at 1.
std::vector<ReliabilityBin> reliability_bins(std::span<const double> confidence, std::span<const std::uint8_t> correct);
double expected_calibration_error(std::span<const ReliabilityBin> bins);
/// ECE over 10 equal bins from explicit confidences (e.g. joint products).
double ece10(std::span<const double> confidence, std::span<const std::uint8_t> correct);
/// ECE over 10 equal bins using the row maximum as confidence. Rows must
/// sum to 1 within 1e-4.
double ece10(const TensorD& probabilities, std::span<const std::size_t> labels);

struct CalibrationSet {
  std::size_t n = 0;
  double nll_before = 0.0, nll_after = 0.0;
  double ece_before = 0.0, ece_after = 0.0;
  double accuracy = 0.0;  // unchanged by T
  std::vector<ReliabilityBin> bins_before, bins_after;
};

struct CalibrationReport {
  double temperature = 1.0;
  bool degenerate = false;
  CalibrationSet fit;                  // the set T was fitted on
  std::optional<CalibrationSet> held_out;
};

CalibrationSet calibration_set(const TensorD& logits, std::span<const std::size_t> labels, double temperature);

/// Fits T on (fit_logits, fit_labels) and reports both sets.
CalibrationReport calibrate(const TensorD& fit_logits, std::span<const std::size_t> fit_labels,
                            const TensorD* held_logits = nullptr, std::span<const std::size_t> held_labels = {});

nlohmann::json to_json(const CalibrationReport& r);
/// split,phase,bin,lower,upper,count,mean_confidence,accuracy
std::string bins_csv(const CalibrationReport& r);

}  // namespace glyphforge
