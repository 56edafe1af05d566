#include "glyphforge/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "glyphforge/error.hpp"

namespace glyphforge {

using nlohmann::json;

namespace {

void check_logits(const char* op, const TensorD& logits, std::span<const std::size_t> labels) {
  expect_rank(op, logits.shape(), 2);
  require(logits.dim(0) > 0, ErrorCode::invalid_argument, std::string(op) + ": no rows");
  require(labels.size() == logits.dim(0), ErrorCode::shape_mismatch, std::string(op) + ": one label per row required");
  for (auto l : labels)
    require(l < logits.dim(1), ErrorCode::invalid_argument, std::string(op) + ": label out of range");
}

double row_lse(const double* z, std::size_t K, double inv_t) {
  double m = z[0] * inv_t;
  for (std::size_t k = 1; k < K; ++k) m = std::max(m, z[k] * inv_t);
  double s = 0.0;
  for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] * inv_t - m);
  return m + std::log(s);
}

std::size_t bin_of(double c) {
  auto b = static_cast<std::size_t>(std::clamp(std::floor(c * 10.0), 0.0, 9.0));
  // Settle against the exact boundaries b/10 so rounding in c * 10 cannot move a value.
  while (b > 0 && c < static_cast<double>(b) / 10.0) --b;
  while (b < 9 && c >= static_cast<double>(b + 1) / 10.0) ++b;
  return b;
}

}  // namespace

TensorD apply_temperature(const TensorD& logits, double temperature) {
  require(temperature > 0.0 && std::isfinite(temperature), ErrorCode::invalid_argument,
          "temperature must be positive");
  expect_rank("apply_temperature", logits.shape(), 2);
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  TensorD p({N, K});
  const double inv_t = 1.0 / temperature;
  for (std::size_t i = 0; i < N; ++i) {
    const double* z = logits.data() + i * K;
    const double lse = row_lse(z, K, inv_t);
    for (std::size_t k = 0; k < K; ++k) p[i * K + k] = std::exp(z[k] * inv_t - lse);
  }
  return p;
}

double mean_nll(const TensorD& logits, std::span<const std::size_t> labels, double temperature) {
  require(temperature > 0.0, ErrorCode::invalid_argument, "temperature must be positive");
  check_logits("mean_nll", logits, labels);
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  const double inv_t = 1.0 / temperature;
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double* z = logits.data() + i * K;
    total += row_lse(z, K, inv_t) - z[labels[i]] * inv_t;
  }
  return total / static_cast<double>(N);
}

TemperatureFit fit_temperature(const TensorD& logits, std::span<const std::size_t> labels, double tolerance) {
  check_logits("fit_temperature", logits, labels);
  require(logits.dim(0) >= 10, ErrorCode::invalid_argument, "fit_temperature: needs at least 10 samples");
  require(tolerance > 0.0, ErrorCode::invalid_argument, "fit_temperature: tolerance must be positive");
  for (double v : logits.values())
    require(std::isfinite(v), ErrorCode::non_finite, "fit_temperature: non-finite logit");
  if (std::all_of(labels.begin(), labels.end(), [&](std::size_t l) { return l == labels[0]; }))
    return {1.0, true};

  const auto f = [&](double log_t) { return mean_nll(logits, labels, std::exp(log_t)); };
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(kMinTemperature), b = std::log(kMaxTemperature);
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tolerance) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  double best = (a + b) / 2.0;
  // The bracket ends and T = 1 stay in play so the fit never loses to them.
  for (double x : {std::log(kMinTemperature), std::log(kMaxTemperature), 0.0})
    if (f(x) < f(best)) best = x;
  return {std::exp(best), false};
}

std::vector<ReliabilityBin> reliability_bins(std::span<const double> confidence, std::span<const std::uint8_t> correct) {
  require(confidence.size() == correct.size(), ErrorCode::shape_mismatch,
          "reliability bins: confidence and correctness differ in length");
  std::vector<ReliabilityBin> bins(kCalibrationBins);
  std::vector<double> conf_sum(kCalibrationBins, 0.0), hit_sum(kCalibrationBins, 0.0);
  for (std::size_t b = 0; b < kCalibrationBins; ++b) {
    bins[b].lower = static_cast<double>(b) / 10.0;
    bins[b].upper = static_cast<double>(b + 1) / 10.0;
  }
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    require(std::isfinite(c) && c >= 0.0 && c <= 1.0, ErrorCode::invalid_argument,
            "reliability bins: confidence outside [0, 1]");
    const std::size_t b = bin_of(c);
    ++bins[b].count;
    conf_sum[b] += c;
    hit_sum[b] += correct[i] != 0 ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < kCalibrationBins; ++b)
    if (bins[b].count > 0) {
      bins[b].mean_confidence = conf_sum[b] / static_cast<double>(bins[b].count);
      bins[b].accuracy = hit_sum[b] / static_cast<double>(bins[b].count);
    }
  return bins;
}

double expected_calibration_error(std::span<const ReliabilityBin> bins) {
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  if (total == 0) return 0.0;
  double e = 0.0;
  for (const auto& b : bins)
    e += static_cast<double>(b.count) / static_cast<double>(total) * std::abs(b.accuracy - b.mean_confidence);
  return e;
}

double ece10(std::span<const double> confidence, std::span<const std::uint8_t> correct) {
  require(!confidence.empty(), ErrorCode::invalid_argument, "ece10: no predictions");
  return expected_calibration_error(reliability_bins(confidence, correct));
}

namespace {

void max_confidence(const TensorD& probabilities, std::span<const std::size_t> labels, std::vector<double>& conf,
                    std::vector<std::uint8_t>& correct) {
  const std::size_t N = probabilities.dim(0), K = probabilities.dim(1);
  conf.resize(N);
  correct.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double* p = probabilities.data() + i * K;
    double sum = 0.0;
    std::size_t best = 0;
    for (std::size_t k = 0; k < K; ++k) {
      sum += p[k];
      if (p[k] > p[best]) best = k;
    }
    require(std::abs(sum - 1.0) <= 1e-4, ErrorCode::invalid_argument,
            "ece10: row " + std::to_string(i) + " sums to " + std::to_string(sum));
    conf[i] = p[best];
    correct[i] = best == labels[i];
  }
}

}  // namespace

double ece10(const TensorD& probabilities, std::span<const std::size_t> labels) {
  check_logits("ece10", probabilities, labels);
  std::vector<double> conf;
  std::vector<std::uint8_t> correct;
  max_confidence(probabilities, labels, conf, correct);
  return ece10(conf, correct);
}

CalibrationSet calibration_set(const TensorD& logits, std::span<const std::size_t> labels, double temperature) {
  check_logits("calibration", logits, labels);
  CalibrationSet s;
  s.n = labels.size();
  s.nll_before = mean_nll(logits, labels, 1.0);
  s.nll_after = mean_nll(logits, labels, temperature);
  for (int phase = 0; phase < 2; ++phase) {
    std::vector<double> conf;
    std::vector<std::uint8_t> correct;
    max_confidence(apply_temperature(logits, phase == 0 ? 1.0 : temperature), labels, conf, correct);
    auto bins = reliability_bins(conf, correct);
    const double e = expected_calibration_error(bins);
    if (phase == 0) {
      s.ece_before = e;
      s.bins_before = std::move(bins);
      s.accuracy = static_cast<double>(std::count(correct.begin(), correct.end(), std::uint8_t{1})) / s.n;
    } else {
      s.ece_after = e;
      s.bins_after = std::move(bins);
    }
  }
  return s;
}

CalibrationReport calibrate(const TensorD& fit_logits, std::span<const std::size_t> fit_labels,
                            const TensorD* held_logits, std::span<const std::size_t> held_labels) {
  const auto fit = fit_temperature(fit_logits, fit_labels);
  CalibrationReport r;
  r.temperature = fit.temperature;
  r.degenerate = fit.degenerate;
  r.fit = calibration_set(fit_logits, fit_labels, fit.temperature);
  if (held_logits != nullptr) r.held_out = calibration_set(*held_logits, held_labels, fit.temperature);
  return r;
}

namespace {

json set_json(const CalibrationSet& s) {
  const auto bins = [](const std::vector<ReliabilityBin>& v) {
    json a = json::array();
    for (const auto& b : v)
      a.push_back({{"lower", b.lower},
                   {"upper", b.upper},
                   {"count", b.count},
                   {"mean_confidence", b.mean_confidence},
                   {"accuracy", b.accuracy}});
    return a;
  };
  return {{"n", s.n},
          {"nll_before", s.nll_before},
          {"nll_after", s.nll_after},
          {"ece_before", s.ece_before},
          {"ece_after", s.ece_after},
          {"accuracy", s.accuracy},
          {"bins_before", bins(s.bins_before)},
          {"bins_after", bins(s.bins_after)}};
}

}  // namespace

json to_json(const CalibrationReport& r) {
  json j{{"temperature", r.temperature}, {"degenerate", r.degenerate}, {"fit", set_json(r.fit)}};
  if (r.held_out) j["held_out"] = set_json(*r.held_out);
  return j;
}

std::string bins_csv(const CalibrationReport& r) {
  std::ostringstream os;
  os << "split,phase,bin,lower,upper,count,mean_confidence,accuracy\n" << std::setprecision(9);
  const auto emit = [&](const char* split, const CalibrationSet& s) {
    for (int phase = 0; phase < 2; ++phase) {
      const auto& bins = phase == 0 ? s.bins_before : s.bins_after;
      for (std::size_t b = 0; b < bins.size(); ++b)
        os << split << ',' << (phase == 0 ? "before" : "after") << ',' << b << ',' << bins[b].lower << ','
           << bins[b].upper << ',' << bins[b].count << ',' << bins[b].mean_confidence << ',' << bins[b].accuracy
           << '\n';
    }
  };
  emit("fit", r.fit);
  if (r.held_out) emit("held_out", *r.held_out);
  return os.str();
}

}  // namespace glyphforge
