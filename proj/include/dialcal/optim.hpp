#pragma once

#include <map>
#include <string>

#include "dialcal/model.hpp"

namespace dialcal {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 1.0;
  /// Linear warmup over this many steps, then lr * sqrt(warmup / step). 0 keeps lr constant.
  long warmup_steps = 0;

  double lr_at(long step) const;

  nlohmann::json to_json() const;
  static AdamConfig from_json(const nlohmann::json& j, AdamConfig base);
  static AdamConfig from_json(const nlohmann::json& j);
};

/// Adam with bias correction over a named tensor set.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  /// Applies one update. Returns the gradient norm before clipping.
  double step(ModelParameters& params, const std::map<std::string, Mat>& grads);

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, Mat> m_;
  std::map<std::string, Mat> v_;
};

}  // namespace dialcal
