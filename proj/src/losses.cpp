#include "dialcal/losses.hpp"

#include <limits>
#include <string>

namespace dialcal {

namespace {

std::size_t count_active(const PadMask& mask, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(mask.size()) != rows)
    throw ConfigError("pad mask has " + std::to_string(mask.size()) + " entries for " + std::to_string(rows) +
                      " positions");
  std::size_t n = 0;
  for (auto m : mask) n += m != 0;
  if (n == 0) throw ConfigError("loss over a batch with every position masked");
  return n;
}

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("temperature must be finite and > 0");
}

void check_shapes(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError(std::string("shape mismatch in ") + what);
}

// Shared body of cross_entropy and ts_cross_entropy.
LossValue scaled_cross_entropy(const Mat& logits, const TargetDistribution& targets, double t, const PadMask& mask) {
  check_shapes(logits, targets.probs, "cross_entropy");
  const std::size_t n = count_active(mask, logits.rows());
  const double inv_n = 1.0 / static_cast<double>(n);
  const Mat logp = log_softmax(logits, t);
  LossValue out;
  out.per_position.assign(static_cast<std::size_t>(logits.rows()), 0.0);
  out.grad = Mat::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    double loss = 0.0;
    double mass = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double p = targets.probs(r, c);
      if (p != 0.0) loss -= p * logp(r, c);
      mass += p;
    }
    out.per_position[static_cast<std::size_t>(r)] = loss;
    out.value += loss;
    // d/dz of -sum_c p_c log softmax(z/T)_c = (mass * softmax(z/T) - p) / T
    out.grad.row(r) = (mass * logp.row(r).array().exp() - targets.probs.row(r).array()) * (inv_n / t);
  }
  out.value *= inv_n;
  return out;
}

}  // namespace

TargetDistribution TargetDistribution::one_hot(const std::vector<int>& labels, Eigen::Index classes) {
  TargetDistribution t{Mat::Zero(static_cast<Eigen::Index>(labels.size()), classes)};
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0) continue;
    if (labels[r] >= classes) throw ConfigError("label " + std::to_string(labels[r]) + " outside class range");
    t.probs(static_cast<Eigen::Index>(r), labels[r]) = 1.0;
  }
  return t;
}

Mat log_softmax(const Mat& logits, double temperature) {
  check_temperature(temperature);
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r).array() / temperature;
    const double mx = z.maxCoeff();
    const double lse = mx + std::log((z - mx).exp().sum());
    out.row(r) = z - lse;
  }
  return out;
}

Mat softmax(const Mat& logits, double temperature) { return log_softmax(logits, temperature).array().exp(); }

TargetDistribution smooth_targets(const TargetDistribution& one_hot, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("label smoothing alpha must lie in [0, 1]");
  const double uniform = alpha / static_cast<double>(one_hot.classes());
  TargetDistribution out{one_hot.probs};
  for (Eigen::Index r = 0; r < out.probs.rows(); ++r) {
    // Rows of all zeros are padding; leave them empty so they stay inert.
    if (one_hot.probs.row(r).sum() == 0.0) continue;
    out.probs.row(r) = one_hot.probs.row(r).array() * (1.0 - alpha) + uniform;
  }
  return out;
}

LossValue cross_entropy(const Mat& logits, const TargetDistribution& targets, const PadMask& mask) {
  return scaled_cross_entropy(logits, targets, 1.0, mask);
}

LossValue ts_cross_entropy(const Mat& logits, const TargetDistribution& targets, double temperature,
                           const PadMask& mask) {
  check_temperature(temperature);
  return scaled_cross_entropy(logits, targets, temperature, mask);
}

LossValue kd_kl_loss(const Mat& teacher_logits, const Mat& student_logits, double temperature, const PadMask& mask,
                     KdOptions opts) {
  check_temperature(temperature);
  check_shapes(teacher_logits, student_logits, "kd_kl_loss");
  const std::size_t n = count_active(mask, student_logits.rows());
  const double factor = opts.t_squared ? temperature * temperature : 1.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  const Mat log_pt = log_softmax(teacher_logits, temperature);
  const Mat log_ps = log_softmax(student_logits, temperature);
  LossValue out;
  out.per_position.assign(static_cast<std::size_t>(student_logits.rows()), 0.0);
  out.grad = Mat::Zero(student_logits.rows(), student_logits.cols());
  for (Eigen::Index r = 0; r < student_logits.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    double kl = 0.0;
    for (Eigen::Index c = 0; c < student_logits.cols(); ++c) {
      const double pt = std::exp(log_pt(r, c));
      if (pt > 0.0) kl += pt * (log_pt(r, c) - log_ps(r, c));
    }
    // Rounding can leave a tiny negative value when the distributions coincide.
    kl = std::max(0.0, kl) * factor;
    out.per_position[static_cast<std::size_t>(r)] = kl;
    out.value += kl;
    out.grad.row(r) =
        (log_ps.row(r).array().exp() - log_pt.row(r).array().exp()) * (factor * inv_n / temperature);
  }
  out.value *= inv_n;
  return out;
}

SdLossValue combined_sd_loss(const Mat& teacher_logits, const Mat& student_logits, const TargetDistribution& targets,
                             double temperature, double lambda_sd, const PadMask& mask, KdOptions opts) {
  if (!(lambda_sd >= 0.0)) throw ConfigError("lambda_sd must be >= 0");
  LossValue ce = cross_entropy(student_logits, targets, mask);
  LossValue kd = kd_kl_loss(teacher_logits, student_logits, temperature, mask, opts);
  SdLossValue out;
  out.kd = kd.value;
  out.ce = ce.value;
  out.total = std::move(ce);
  if (lambda_sd != 0.0) {
    out.total.value += lambda_sd * kd.value;
    out.total.grad += lambda_sd * kd.grad;
    for (std::size_t i = 0; i < kd.per_position.size(); ++i)
      out.total.per_position[i] += lambda_sd * kd.per_position[i];
  }
  return out;
}

}  // namespace dialcal
