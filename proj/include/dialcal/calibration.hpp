#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "dialcal/common.hpp"

namespace dialcal {

/// N predictions over C classes.
struct PredictionSet {
  Mat logits;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  void validate() const;
  /// Appends the rows of another set with the same class count.
  void append(const PredictionSet& other);
};

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double confidence = 0.0;  // mean confidence, 0 when empty
  double accuracy = 0.0;    // fraction correct, 0 when empty
};

/// Equal-width bins; bin b covers (b/n, (b+1)/n] and bin 0 also takes confidence 0.
struct ReliabilityBins {
  std::vector<ReliabilityBin> bins;
  std::size_t total = 0;

  std::size_t n_bins() const { return bins.size(); }
  void write_csv(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
};

struct EceResult {
  double ece = 0.0;
  ReliabilityBins bins;
};

struct CalibrationReport {
  double t_optimal = 1.0;
  double ece_before = 0.0;
  double ece_after = 0.0;
  double nll_before = 0.0;
  double nll_after = 0.0;
  ReliabilityBins bins;  // at t_optimal
  std::size_t n_samples = 0;
  std::string slice = "validation";

  nlohmann::json to_json() const;
};

struct ScaledProbs {
  Eigen::RowVectorXd probs;
  double confidence = 0.0;
  int prediction = 0;
};

/// softmax(logits / T) with its max entry and argmax.
ScaledProbs scale_probs(const Eigen::Ref<const Eigen::RowVectorXd>& logits, double temperature);

/// Mean negative log-likelihood of the labels under softmax(logits / T).
double temperature_nll(const PredictionSet& preds, double temperature);

struct TemperatureSearch {
  double lo = 0.25;
  double hi = 10.0;
  int grid_points = 33;
  double tolerance = 1e-3;
};

/// Log-spaced coarse grid, then golden-section refinement inside the bracket around the best
/// grid point. Never returns a temperature worse than T = 1 or than the best grid point.
double find_optimal_temperature(const PredictionSet& preds, const TemperatureSearch& search = {});

/// Golden-section minimization of a unimodal function on [a, b] to the given interval width.
template <typename F>
double golden_section_minimize(F&& f, double a, double b, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc <= fd ? c : d;
}

/// Bin index for a confidence under the right-closed convention.
std::size_t confidence_bin(double confidence, std::size_t n_bins);

EceResult ece_from_confidences(const std::vector<double>& confidence, const std::vector<bool>& correct,
                               std::size_t n_bins = 15);

EceResult ece(const PredictionSet& preds, double temperature, std::size_t n_bins = 15);

/// Searches T* and reports ECE and NLL before (T = 1) and after (T = T*).
CalibrationReport calibrate(const PredictionSet& preds, std::size_t n_bins = 15, const TemperatureSearch& search = {});

}  // namespace dialcal
