#pragma once

#include <cstdint>
#include <vector>

#include "dialcal/common.hpp"

namespace dialcal {

/// One row per position, one column per class. Rows are probability vectors.
struct TargetDistribution {
  Mat probs;

  Eigen::Index classes() const { return probs.cols(); }

  /// Hard targets; positions with a negative label get an all-zero row (they must be masked).
  static TargetDistribution one_hot(const std::vector<int>& labels, Eigen::Index classes);
};

using PadMask = std::vector<std::uint8_t>;

/// A reduced loss plus its per-position terms and d(value)/d(logits).
struct LossValue {
  double value = 0.0;
  std::vector<double> per_position;  // 0 at masked positions
  Mat grad;
};

/// Combined self-distillation objective with both components reported.
struct SdLossValue {
  LossValue total;
  double kd = 0.0;
  double ce = 0.0;
};

/// Numerically stable row-wise log-softmax of logits / temperature.
Mat log_softmax(const Mat& logits, double temperature = 1.0);
Mat softmax(const Mat& logits, double temperature = 1.0);

/// p_ls = p (1 - alpha) + alpha / C.
TargetDistribution smooth_targets(const TargetDistribution& one_hot, double alpha);

/// Mean over unmasked positions of -sum_c target_c log softmax(logits)_c.
LossValue cross_entropy(const Mat& logits, const TargetDistribution& targets, const PadMask& mask);

struct KdOptions {
  /// Multiply the KL term (and its gradient) by T^2. Off by default.
  bool t_squared = false;
};

/// Mean over unmasked positions of KL(softmax(teacher/T) || softmax(student/T)).
/// The teacher is a constant: the gradient is with respect to the student logits only.
LossValue kd_kl_loss(const Mat& teacher_logits, const Mat& student_logits, double temperature,
                     const PadMask& mask, KdOptions opts = {});

/// lambda_sd * kd_kl_loss + cross_entropy(student_logits, targets).
SdLossValue combined_sd_loss(const Mat& teacher_logits, const Mat& student_logits,
                             const TargetDistribution& targets, double temperature, double lambda_sd,
                             const PadMask& mask, KdOptions opts = {});

/// Cross-entropy on softmax(logits / T).
LossValue ts_cross_entropy(const Mat& logits, const TargetDistribution& targets, double temperature,
                           const PadMask& mask);

}  // namespace dialcal
