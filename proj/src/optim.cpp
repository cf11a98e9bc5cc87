#include "dialcal/optim.hpp"

namespace dialcal {

nlohmann::json AdamConfig::to_json() const {
  return {{"name", "adam"}, {"lr", lr}, {"betas", {beta1, beta2}}, {"eps", eps}, {"clip_norm", clip_norm}, {"warmup_steps", warmup_steps}};
}

AdamConfig AdamConfig::from_json(const nlohmann::json& j, AdamConfig c) {
  if (j.contains("name") && j["name"] != "adam") throw ConfigError("only the adam optimizer is supported");
  c.lr = j.value("lr", c.lr);
  if (j.contains("betas")) {
    c.beta1 = j["betas"].at(0).get<double>();
    c.beta2 = j["betas"].at(1).get<double>();
  }
  c.eps = j.value("eps", c.eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  if (c.warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (!(c.lr > 0.0) || !(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0) || !(c.eps > 0.0))
    throw ConfigError("invalid adam settings");
  return c;
}

double AdamConfig::lr_at(long step) const {
  if (warmup_steps <= 0) return lr;
  const auto s = static_cast<double>(step), w = static_cast<double>(warmup_steps);
  return step < warmup_steps ? lr * s / w : lr * std::sqrt(w / s);
}

AdamConfig AdamConfig::from_json(const nlohmann::json& j) { return from_json(j, AdamConfig{}); }

double Adam::step(ModelParameters& params, const std::map<std::string, Mat>& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw Error("non-finite gradient");
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double lr = cfg_.lr_at(t_);
  for (const auto& [name, g] : grads) {
    Mat& w = params.at(name);
    auto [mit, m_new] = m_.try_emplace(name, Mat::Zero(w.rows(), w.cols()));
    auto [vit, v_new] = v_.try_emplace(name, Mat::Zero(w.rows(), w.cols()));
    Mat& m = mit->second;
    Mat& v = vit->second;
    const Mat gc = g * clip;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gc;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gc.cwiseProduct(gc);
    w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
  }
  return norm;
}

}  // namespace dialcal
