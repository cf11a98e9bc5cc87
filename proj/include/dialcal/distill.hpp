#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialcal/calibration.hpp"
#include "dialcal/metrics.hpp"
#include "dialcal/training.hpp"

namespace dialcal {

enum class TemperatureMode { kFixed, kOptimal };

std::string to_string(TemperatureMode m);
TemperatureMode temperature_mode_from_string(const std::string& s);

struct DistillConfig {
  TemperatureMode t_mode = TemperatureMode::kFixed;
  double t_fixed = 2.0;
  double lambda_sd = 1.0;
  /// Student's own objective for the cross-entropy term.
  Objective student_objective = Objective::kCe;
  double alpha = 0.1;
  TrainOptions train;
  /// Re-initialize the student from `reinit_seed` instead of continuing from its weights.
  bool reinit_student = false;
  std::uint64_t reinit_seed = 7;
  KdOptions kd;
  TemperatureSearch search;

  void validate() const;
  nlohmann::json to_json() const;
};

struct DistillRunLog {
  double t_used = 0.0;
  std::string t_source;
  /// Set in optimal mode: the search on the teacher's validation tokens.
  std::optional<CalibrationReport> teacher_calibration;
  /// KL term on the first training batch before any update (inference mode).
  double l_sd_step0 = 0.0;
  std::vector<EpochRecord> epochs;  // components: l_sd, l_ce
  int best_epoch = 0;
  EvalReport final_report;
  std::string student_objective;

  nlohmann::json to_json() const;
};

struct DistillResult {
  ModelParameters student;
  DistillRunLog log;
};

/// Self-distillation: the loaded student is frozen as the teacher and the student is retrained
/// against lambda_sd * KL(teacher/T || student/T) + CE.
DistillResult run_self_distillation(const ModelParameters& student, const Vocab& vocab,
                                    const std::vector<DialoguePair>& train, const std::vector<DialoguePair>& val,
                                    const DistillConfig& config);

struct SweepRow {
  double t = 0.0;
  EvalReport report;
};

struct SweepTable {
  std::vector<SweepRow> rows;  // ascending T
  std::size_t best = 0;        // row with the highest BLEU-1

  void write_csv(const std::filesystem::path& path) const;
  std::string markdown() const;
  nlohmann::json to_json() const;
};

/// One fixed-T self-distillation run per temperature, identical configuration otherwise.
/// `jobs` > 1 runs temperatures on worker threads; results do not depend on it.
SweepTable temperature_sweep(const ModelParameters& student, const Vocab& vocab, const std::vector<DialoguePair>& train,
                             const std::vector<DialoguePair>& val, const std::vector<double>& t_values,
                             const DistillConfig& config, unsigned jobs = 1);

}  // namespace dialcal
