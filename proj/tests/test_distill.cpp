#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dialcal/distill.hpp"
#include "fixtures.hpp"

using namespace dialcal;

namespace {

DistillConfig quick_config(TemperatureMode mode = TemperatureMode::kFixed) {
  DistillConfig c;
  c.t_mode = mode;
  c.train.adam.lr = 3e-3;
  c.train.epochs = 3;
  c.train.patience = 0;
  c.train.seed = 5;
  return c;
}

// A briefly trained student so that teacher logits carry some signal.
ModelParameters trained_student(const Vocab& v) {
  TrainOptions o;
  o.adam.lr = 5e-3;
  o.epochs = 10;
  o.patience = 0;
  return fit_seq2seq(fixture::seq2seq(v), fixture::train_pairs(), fixture::val_pairs(), v, o,
                     ce_objective(static_cast<int>(v.size()), Objective::kCe, 0.1))
      .best;
}

}  // namespace

TEST(SelfDistillation, KlIsZeroBeforeTheFirstUpdate) {
  const Vocab v = fixture::vocab();
  const DistillResult r =
      run_self_distillation(trained_student(v), v, fixture::train_pairs(), fixture::val_pairs(), quick_config());
  EXPECT_EQ(r.log.l_sd_step0, 0.0);
}

TEST(SelfDistillation, FixedModeUsesConfiguredTemperature) {
  const Vocab v = fixture::vocab();
  const DistillResult r =
      run_self_distillation(trained_student(v), v, fixture::train_pairs(), fixture::val_pairs(), quick_config());
  EXPECT_EQ(r.log.t_used, 2.0);
  EXPECT_FALSE(r.log.teacher_calibration.has_value());
  const auto j = r.log.to_json();
  EXPECT_EQ(j["t_used"].get<double>(), 2.0);
  ASSERT_EQ(r.log.epochs.size(), 3u);
  for (const auto& e : r.log.epochs) {
    bool has_sd = false, has_ce = false;
    for (const auto& [k, val] : e.components) has_sd |= k == "l_sd", has_ce |= k == "l_ce";
    EXPECT_TRUE(has_sd && has_ce);
  }
}

TEST(SelfDistillation, OptimalModeMatchesCalibrationOfTheTeacher) {
  const Vocab v = fixture::vocab();
  const ModelParameters student = trained_student(v);
  const DistillResult r = run_self_distillation(student, v, fixture::train_pairs(), fixture::train_pairs(),
                                                quick_config(TemperatureMode::kOptimal));
  const auto batches = make_batches(fixture::train_pairs(), v, 4, static_cast<std::size_t>(student.config.max_len));
  const double expected = find_optimal_temperature(teacher_forced_predictions(student, batches));
  EXPECT_EQ(r.log.t_used, expected);
  ASSERT_TRUE(r.log.teacher_calibration.has_value());
  EXPECT_EQ(r.log.teacher_calibration->t_optimal, expected);
}

TEST(SelfDistillation, OptimalTemperatureTracksAThreefoldSharperTeacher) {
  // Scaling the output layer by 3 multiplies every logit by 3, so the NLL-optimal T triples.
  const Vocab v = fixture::vocab();
  ModelParameters student = trained_student(v);
  const auto batches = make_batches(fixture::train_pairs(), v, 4, static_cast<std::size_t>(student.config.max_len));
  // First bring the teacher's own T* inside the search range, away from its clamps.
  double base = find_optimal_temperature(teacher_forced_predictions(student, batches));
  for (int i = 0; i < 8 && !(base > 0.5 && base < 3.0); ++i) {
    student.at("out.w") /= base / 1.5;
    student.at("out.b") /= base / 1.5;
    base = find_optimal_temperature(teacher_forced_predictions(student, batches));
  }
  ASSERT_TRUE(base > 0.5 && base < 3.0) << base;
  student.at("out.w") *= 3.0;
  student.at("out.b") *= 3.0;
  const DistillResult r = run_self_distillation(student, v, fixture::train_pairs(), fixture::train_pairs(),
                                                quick_config(TemperatureMode::kOptimal));
  EXPECT_NEAR(r.log.t_used / base, 3.0, 0.3) << base << " " << r.log.t_used;
}

TEST(SelfDistillation, OptimalModeNeedsEnoughValidationTokens) {
  const Vocab v = fixture::vocab();
  EXPECT_THROW(run_self_distillation(trained_student(v), v, fixture::train_pairs(), fixture::val_pairs(),
                                     quick_config(TemperatureMode::kOptimal)),
               Error);
}

TEST(SelfDistillation, ZeroLambdaIsPlainFineTuning) {
  const Vocab v = fixture::vocab();
  const ModelParameters student = trained_student(v);
  DistillConfig c = quick_config();
  c.lambda_sd = 0.0;
  const DistillResult sd = run_self_distillation(student, v, fixture::train_pairs(), fixture::val_pairs(), c);
  const FitResult plain = fit_seq2seq(student, fixture::train_pairs(), fixture::val_pairs(), v, c.train,
                                      ce_objective(static_cast<int>(v.size()), Objective::kCe, c.alpha));
  ASSERT_EQ(sd.log.epochs.size(), plain.epochs.size());
  for (std::size_t i = 0; i < plain.epochs.size(); ++i) {
    EXPECT_EQ(sd.log.epochs[i].train_loss, plain.epochs[i].train_loss);
    EXPECT_EQ(sd.log.epochs[i].val_bleu1, plain.epochs[i].val_bleu1);
  }
  for (const auto& [name, m] : plain.best.tensors) EXPECT_TRUE((sd.student.at(name).array() == m.array()).all()) << name;
}

TEST(SelfDistillation, TeacherSnapshotIsNotModified) {
  const Vocab v = fixture::vocab();
  const ModelParameters student = trained_student(v);
  const ModelParameters copy = student;
  const DistillResult r =
      run_self_distillation(student, v, fixture::train_pairs(), fixture::val_pairs(), quick_config());
  for (const auto& [name, m] : copy.tensors) EXPECT_TRUE((student.at(name).array() == m.array()).all()) << name;
  bool moved = false;
  for (const auto& [name, m] : copy.tensors) moved |= !(r.student.at(name).array() == m.array()).all();
  EXPECT_TRUE(moved);
}

TEST(SelfDistillation, BestEpochIsArgmaxOfLoggedBleu) {
  const Vocab v = fixture::vocab();
  DistillConfig c = quick_config();
  c.train.epochs = 6;
  const DistillResult r = run_self_distillation(trained_student(v), v, fixture::train_pairs(), fixture::val_pairs(), c);
  int arg = 1;
  for (const auto& e : r.log.epochs)
    if (e.val_bleu1 > r.log.epochs[static_cast<std::size_t>(arg - 1)].val_bleu1) arg = e.epoch;
  EXPECT_EQ(r.log.best_epoch, arg);
  r.log.final_report.check_ranges();
}

TEST(SelfDistillation, ReinitializedStudentDiffers) {
  const Vocab v = fixture::vocab();
  DistillConfig c = quick_config();
  const ModelParameters student = trained_student(v);
  const DistillResult cont = run_self_distillation(student, v, fixture::train_pairs(), fixture::val_pairs(), c);
  c.reinit_student = true;
  const DistillResult fresh = run_self_distillation(student, v, fixture::train_pairs(), fixture::val_pairs(), c);
  EXPECT_NE(cont.log.epochs.front().train_loss, fresh.log.epochs.front().train_loss);
  EXPECT_GT(fresh.log.l_sd_step0, 0.0);
}

TEST(DistillConfig, Validation) {
  DistillConfig c;
  c.t_fixed = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.t_fixed = 2.0;
  c.lambda_sd = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(temperature_mode_from_string("optimal"), TemperatureMode::kOptimal);
  EXPECT_THROW(temperature_mode_from_string("best"), ConfigError);
}

TEST(Sweep, DeterministicSortedAndWorkerIndependent) {
  const Vocab v = fixture::vocab();
  const ModelParameters student = trained_student(v);
  DistillConfig c = quick_config();
  c.train.epochs = 2;
  const std::vector<double> ts = {5, 1.5, 3, 2, 4};
  const SweepTable a = temperature_sweep(student, v, fixture::train_pairs(), fixture::val_pairs(), ts, c);
  const SweepTable b = temperature_sweep(student, v, fixture::train_pairs(), fixture::val_pairs(), ts, c);
  const SweepTable par = temperature_sweep(student, v, fixture::train_pairs(), fixture::val_pairs(), ts, c, 3);
  ASSERT_EQ(a.rows.size(), 5u);
  const std::vector<double> sorted = {1.5, 2, 3, 4, 5};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a.rows[i].t, sorted[i]);
    EXPECT_GE(a.rows[i].report.bleu1, 0.0);
    EXPECT_LE(a.rows[i].report.bleu1, 1.0);
    EXPECT_GE(a.rows[a.best].report.bleu1, a.rows[i].report.bleu1);
  }
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.to_json(), par.to_json());

  const auto path = std::filesystem::temp_directory_path() / "dialcal_sweep.csv";
  a.write_csv(path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "T,bleu1,meteor,perplexity,ece");
  std::filesystem::remove(path);
  EXPECT_THROW(temperature_sweep(student, v, fixture::train_pairs(), fixture::val_pairs(), {}, c), ConfigError);
  EXPECT_THROW(temperature_sweep(student, v, fixture::train_pairs(), fixture::val_pairs(), {1.0, -2.0}, c), ConfigError);
}
