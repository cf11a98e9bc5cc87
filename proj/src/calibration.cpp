#include "dialcal/calibration.hpp"

#include <fstream>
#include <iomanip>

#include "dialcal/losses.hpp"

namespace dialcal {

void PredictionSet::validate() const {
  if (labels.empty()) throw ConfigError("empty prediction set");
  if (static_cast<std::size_t>(logits.rows()) != labels.size())
    throw ConfigError("prediction set has mismatched logits and labels");
  if (logits.cols() < 1) throw ConfigError("prediction set without classes");
  for (int y : labels)
    if (y < 0 || y >= logits.cols()) throw ConfigError("label " + std::to_string(y) + " outside [0, C)");
  if (!logits.allFinite()) throw Error("prediction set contains non-finite logits");
}

void PredictionSet::append(const PredictionSet& other) {
  if (other.labels.empty()) return;
  if (labels.empty()) {
    *this = other;
    return;
  }
  if (other.logits.cols() != logits.cols()) throw ConfigError("appending prediction sets with different class counts");
  Mat merged(logits.rows() + other.logits.rows(), logits.cols());
  merged << logits, other.logits;
  logits = std::move(merged);
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

void ReliabilityBins::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "bin_lo,bin_hi,count,confidence,accuracy\n" << std::setprecision(17);
  for (const auto& b : bins) out << b.lo << ',' << b.hi << ',' << b.count << ',' << b.confidence << ',' << b.accuracy << '\n';
}

nlohmann::json ReliabilityBins::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : bins)
    arr.push_back({{"bin_lo", b.lo}, {"bin_hi", b.hi}, {"count", b.count}, {"confidence", b.confidence},
                   {"accuracy", b.accuracy}});
  return arr;
}

nlohmann::json CalibrationReport::to_json() const {
  return {{"t_optimal", t_optimal}, {"ece_before", ece_before}, {"ece_after", ece_after},
          {"nll_before", nll_before}, {"nll_after", nll_after},   {"n_samples", n_samples},
          {"slice", slice},           {"bins", bins.to_json()}};
}

ScaledProbs scale_probs(const Eigen::Ref<const Eigen::RowVectorXd>& logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be finite and > 0");
  if (logits.size() == 0) throw ConfigError("empty logit row");
  ScaledProbs out;
  Eigen::Index arg = 0;
  logits.maxCoeff(&arg);
  const double mx = logits(arg);
  out.probs = ((logits.array() - mx) / temperature).exp();
  out.probs /= out.probs.sum();
  out.prediction = static_cast<int>(arg);
  // The argmax entry is the largest probability; reading it by index keeps ties stable.
  out.confidence = out.probs(arg);
  return out;
}

double temperature_nll(const PredictionSet& preds, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  double total = 0.0;
  for (Eigen::Index r = 0; r < preds.logits.rows(); ++r) {
    const auto z = preds.logits.row(r).array() / temperature;
    const double mx = z.maxCoeff();
    const double lse = mx + std::log((z - mx).exp().sum());
    total += lse - z(preds.labels[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(preds.logits.rows());
}

double find_optimal_temperature(const PredictionSet& preds, const TemperatureSearch& search) {
  preds.validate();
  if (preds.size() < 10) throw ConfigError("temperature search needs at least 10 predictions");
  if (!(search.lo > 0.0 && search.hi > search.lo && search.grid_points >= 3))
    throw ConfigError("invalid temperature search domain");

  bool flat = true;
  for (Eigen::Index r = 0; r < preds.logits.rows() && flat; ++r)
    flat = (preds.logits.row(r).array() == preds.logits(r, 0)).all();
  if (flat) return 1.0;

  const int n = search.grid_points;
  const double step = std::log(search.hi / search.lo) / (n - 1);
  std::vector<double> grid(static_cast<std::size_t>(n));
  std::vector<double> nll(static_cast<std::size_t>(n));
  std::size_t best = 0;
  for (int i = 0; i < n; ++i) {
    grid[static_cast<std::size_t>(i)] = i == n - 1 ? search.hi : search.lo * std::exp(step * i);
    nll[static_cast<std::size_t>(i)] = temperature_nll(preds, grid[static_cast<std::size_t>(i)]);
    if (nll[static_cast<std::size_t>(i)] < nll[best]) best = static_cast<std::size_t>(i);
  }
  const double a = grid[best == 0 ? 0 : best - 1];
  const double b = grid[std::min(best + 1, grid.size() - 1)];
  const double refined =
      golden_section_minimize([&](double t) { return temperature_nll(preds, t); }, a, b, search.tolerance);

  // Candidates in order of preference on ties: T = 1, best grid point, refined point.
  double t_best = 1.0;
  double f_best = temperature_nll(preds, 1.0);
  for (double t : {grid[best], refined}) {
    const double f = temperature_nll(preds, t);
    if (f < f_best) {
      f_best = f;
      t_best = t;
    }
  }
  if (!std::isfinite(f_best)) throw Error("temperature search produced a non-finite NLL");
  return t_best;
}

std::size_t confidence_bin(double confidence, std::size_t n_bins) {
  const double n = static_cast<double>(n_bins);
  auto b = static_cast<long>(std::ceil(confidence * n)) - 1;
  b = std::clamp<long>(b, 0, static_cast<long>(n_bins) - 1);
  // Settle against the exact edges b/n used by the bin records.
  while (b > 0 && confidence <= static_cast<double>(b) / n) --b;
  while (b + 1 < static_cast<long>(n_bins) && confidence > static_cast<double>(b + 1) / n) ++b;
  return static_cast<std::size_t>(b);
}

EceResult ece_from_confidences(const std::vector<double>& confidence, const std::vector<bool>& correct,
                               std::size_t n_bins) {
  if (n_bins < 1) throw ConfigError("n_bins must be >= 1");
  if (confidence.empty()) throw ConfigError("ECE of an empty prediction set");
  if (confidence.size() != correct.size()) throw ConfigError("confidence and correctness lengths differ");
  EceResult out;
  out.bins.total = confidence.size();
  out.bins.bins.resize(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<double> hits(n_bins, 0.0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const std::size_t b = confidence_bin(confidence[i], n_bins);
    ++out.bins.bins[b].count;
    conf_sum[b] += confidence[i];
    hits[b] += correct[i] ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(confidence.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    ReliabilityBin& bin = out.bins.bins[b];
    bin.lo = static_cast<double>(b) / static_cast<double>(n_bins);
    bin.hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    if (bin.count == 0) continue;
    const double c = static_cast<double>(bin.count);
    bin.confidence = conf_sum[b] / c;
    bin.accuracy = hits[b] / c;
    out.ece += (c / n) * std::abs(bin.accuracy - bin.confidence);
  }
  return out;
}

EceResult ece(const PredictionSet& preds, double temperature, std::size_t n_bins) {
  preds.validate();
  std::vector<double> conf(preds.size());
  std::vector<bool> correct(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const ScaledProbs s = scale_probs(preds.logits.row(static_cast<Eigen::Index>(i)), temperature);
    conf[i] = s.confidence;
    correct[i] = s.prediction == preds.labels[i];
  }
  return ece_from_confidences(conf, correct, n_bins);
}

CalibrationReport calibrate(const PredictionSet& preds, std::size_t n_bins, const TemperatureSearch& search) {
  CalibrationReport r;
  r.t_optimal = find_optimal_temperature(preds, search);
  r.n_samples = preds.size();
  r.nll_before = temperature_nll(preds, 1.0);
  r.nll_after = temperature_nll(preds, r.t_optimal);
  r.ece_before = ece(preds, 1.0, n_bins).ece;
  EceResult after = ece(preds, r.t_optimal, n_bins);
  r.ece_after = after.ece;
  r.bins = std::move(after.bins);
  return r;
}

}  // namespace dialcal
