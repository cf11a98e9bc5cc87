#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dialcal/calibration.hpp"
#include "oracles.hpp"

using namespace dialcal;

TEST(ScaleProbs, WorkedExample) {
  Eigen::RowVectorXd z(3);
  z << 2, 1, 0;
  const ScaledProbs s = scale_probs(z, 1.0);
  EXPECT_NEAR(s.probs(0), 0.665241, 1e-6);
  EXPECT_NEAR(s.probs(1), 0.244728, 1e-6);
  EXPECT_NEAR(s.probs(2), 0.090031, 1e-6);
  EXPECT_EQ(s.prediction, 0);
  EXPECT_DOUBLE_EQ(s.confidence, s.probs(0));
}

TEST(ScaleProbs, HugeTemperatureIsUniform) {
  Rng rng(1);
  Eigen::RowVectorXd z(7);
  for (auto& v : z) v = rng.normal() * 10;
  const ScaledProbs s = scale_probs(z, 1e6);
  for (auto p : s.probs) EXPECT_NEAR(p, 1.0 / 7, 1e-5);
}

TEST(ScaleProbs, NonPositiveTemperatureIsAnError) {
  Eigen::RowVectorXd z(2);
  z << 1, 0;
  EXPECT_THROW(scale_probs(z, 0.0), ConfigError);
  EXPECT_THROW(scale_probs(z, -2.0), ConfigError);
}

TEST(ScaleProbs, ArgmaxInvariance) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto c = static_cast<Eigen::Index>(2 + rng.below(40));
    Eigen::RowVectorXd z(c);
    for (auto& v : z) v = rng.normal() * 5;
    const double t = 1e-3 + rng.uniform() * 100;
    const ScaledProbs s = scale_probs(z, t);
    Eigen::Index raw;
    z.maxCoeff(&raw);
    EXPECT_EQ(s.prediction, raw);
    EXPECT_EQ(s.probs(raw), s.probs.maxCoeff());
  }
}

TEST(Ece, TwoSampleExample) {
  const EceResult r = ece_from_confidences({0.8, 0.6}, {true, false}, 15);
  EXPECT_NEAR(r.ece, 0.4, 1e-12);
}

TEST(Ece, SingleBinExample) {
  std::vector<double> conf(1000, 0.7);
  std::vector<bool> correct(1000);
  for (std::size_t i = 0; i < correct.size(); ++i) correct[i] = i % 2 == 0;
  EXPECT_NEAR(ece_from_confidences(conf, correct, 15).ece, 0.2, 1e-12);
}

TEST(Ece, PerfectlyCalibratedIsNearZero) {
  const std::size_t n = 10000;
  std::vector<double> conf(n, 0.9);
  std::vector<bool> correct(n);
  Rng rng(3);
  for (std::size_t i = 0; i < n; ++i) correct[i] = rng.uniform() < 0.9;
  EXPECT_LT(ece_from_confidences(conf, correct, 15).ece, 2.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Ece, BinEdgesAreRightClosed) {
  EXPECT_EQ(confidence_bin(0.0, 15), 0u);
  EXPECT_EQ(confidence_bin(1.0, 15), 14u);
  EXPECT_EQ(confidence_bin(1.0 / 15, 15), 0u);
  EXPECT_EQ(confidence_bin(std::nextafter(1.0 / 15, 1.0), 15), 1u);
  EXPECT_EQ(confidence_bin(0.5, 2), 0u);
  EXPECT_EQ(confidence_bin(0.5000001, 2), 1u);
  for (std::size_t b = 1; b < 15; ++b) EXPECT_EQ(confidence_bin(static_cast<double>(b) / 15, 15), b - 1);
}

TEST(Ece, EmptySetAndBadBinsAreErrors) {
  EXPECT_THROW(ece_from_confidences({}, {}, 15), ConfigError);
  EXPECT_THROW(ece_from_confidences({0.5}, {true}, 0), ConfigError);
  PredictionSet empty;
  EXPECT_THROW(ece(empty, 1.0), ConfigError);
}

TEST(Ece, MatchesBruteForceOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const PredictionSet p = oracle::random_predictions(rng, 1 + rng.below(300), 2 + rng.below(49));
    const double t = 0.3 + rng.uniform() * 4;
    const EceResult r = ece(p, t, 15);
    EXPECT_NEAR(r.ece, oracle::brute_force_ece(p, t, 15), 1e-12);
    std::size_t total = 0;
    for (const auto& b : r.bins.bins) total += b.count;
    EXPECT_EQ(total, p.size());
    EXPECT_GE(r.ece, 0.0);
    EXPECT_LE(r.ece, 1.0);
  }
}

TEST(Ece, ReliabilityCsvHasDeclaredColumns) {
  Rng rng(5);
  const EceResult r = ece(oracle::random_predictions(rng, 50, 5), 1.0, 15);
  const auto path = std::filesystem::temp_directory_path() / "dialcal_bins.csv";
  r.bins.write_csv(path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "bin_lo,bin_hi,count,confidence,accuracy");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 15);
  std::filesystem::remove(path);
}

TEST(OptimalTemperature, RecoversScaleOfCalibratedLogits) {
  Rng rng(6);
  const PredictionSet base = oracle::sampled_calibrated(rng, 10000, 10);
  const double t1 = find_optimal_temperature(base);
  EXPECT_GE(t1, 0.9);
  EXPECT_LE(t1, 1.1);
  PredictionSet scaled = base;
  scaled.logits *= 3.0;
  const double t3 = find_optimal_temperature(scaled);
  EXPECT_GE(t3, 2.7);
  EXPECT_LE(t3, 3.3);
  EXPECT_LE(temperature_nll(scaled, t3), temperature_nll(scaled, 1.0));
}

TEST(OptimalTemperature, NeverWorseThanGridOrOne) {
  Rng rng(7);
  const TemperatureSearch search;
  for (int trial = 0; trial < 20; ++trial) {
    PredictionSet p = oracle::random_predictions(rng, 10 + rng.below(200), 2 + rng.below(20));
    p.logits *= 0.2 + rng.uniform() * 5;
    const double t = find_optimal_temperature(p, search);
    const double f = temperature_nll(p, t);
    EXPECT_LE(f, temperature_nll(p, 1.0));
    const double step = std::log(search.hi / search.lo) / (search.grid_points - 1);
    for (int i = 0; i < search.grid_points; ++i)
      EXPECT_LE(f, temperature_nll(p, search.lo * std::exp(step * i)) + 1e-9);
  }
}

TEST(OptimalTemperature, FlatLogitsReturnOne) {
  PredictionSet p;
  p.logits = Mat::Constant(20, 4, 0.3);
  p.labels.assign(20, 2);
  EXPECT_EQ(find_optimal_temperature(p), 1.0);
}

TEST(OptimalTemperature, Errors) {
  PredictionSet small;
  small.logits = Mat::Zero(9, 3);
  small.labels.assign(9, 0);
  EXPECT_THROW(find_optimal_temperature(small), ConfigError);
  PredictionSet bad;
  bad.logits = Mat::Zero(12, 3);
  bad.logits(4, 1) = std::numeric_limits<double>::infinity();
  bad.labels.assign(12, 0);
  EXPECT_THROW(find_optimal_temperature(bad), Error);
  bad.logits(4, 1) = 0.0;
  bad.labels[3] = 3;
  EXPECT_THROW(find_optimal_temperature(bad), ConfigError);
}

TEST(Calibrate, OverconfidentModelImproves) {
  Rng rng(8);
  PredictionSet p = oracle::sampled_calibrated(rng, 3000, 6);
  p.logits *= 3.0;
  const CalibrationReport r = calibrate(p);
  EXPECT_LT(r.ece_after, r.ece_before);
  EXPECT_LE(r.nll_after, r.nll_before + 1e-9);
  EXPECT_EQ(r.n_samples, 3000u);
  const auto j = r.to_json();
  EXPECT_EQ(j["bins"].size(), 15u);
  EXPECT_DOUBLE_EQ(j["t_optimal"].get<double>(), r.t_optimal);
}

TEST(GoldenSection, FindsParabolaMinimum) {
  const double x = golden_section_minimize([](double t) { return (t - 2.345) * (t - 2.345); }, 0.0, 10.0, 1e-6);
  EXPECT_NEAR(x, 2.345, 1e-5);
}

TEST(PredictionSet, AppendChecksClassCount) {
  Rng rng(9);
  PredictionSet a = oracle::random_predictions(rng, 3, 4);
  const PredictionSet b = oracle::random_predictions(rng, 2, 4);
  a.append(b);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_EQ(a.logits.bottomRows(2), b.logits);
  EXPECT_THROW(a.append(oracle::random_predictions(rng, 2, 5)), ConfigError);
}
