#include "dialcal/pipeline.hpp"

#include <fstream>
#include <iostream>
#include <set>

namespace dialcal {

namespace {

constexpr const char* kLmNote =
    "language-model pretraining uses the dialogue corpus's own text (query then reply), not a general-domain corpus";

// Distinct init streams per model kind; training itself is seeded with cfg.seed.
std::uint64_t init_seed(std::uint64_t seed, ModelKind kind) {
  return seed * 0x100000001B3ULL + (kind == ModelKind::kLm ? 17 : 29);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
T take(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown " + where + " field '" + key + "'");
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (lm_epochs && *lm_epochs < 1) throw ConfigError("lm_epochs must be >= 1");
  if (distill_epochs && *distill_epochs < 1) throw ConfigError("distill.epochs must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
  if (finetune_source != "ulmfit" && finetune_source != "culmfit")
    throw ConfigError("finetune_source must be ulmfit or culmfit");
  if (sweep_t.empty()) throw ConfigError("sweep_t must not be empty");
  for (double t : sweep_t)
    if (!(t > 0.0)) throw ConfigError("sweep temperatures must be > 0");
  ModelConfig probe = model;
  probe.vocab_size = std::max(probe.vocab_size, 5);
  probe.validate();
  distill.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = {{"corpus", corpus.string()},
                      {"seed", seed},
                      {"model", model.to_json()},
                      {"objective", to_string(objective)},
                      {"alpha", alpha},
                      {"optimizer", optimizer.to_json()},
                      {"batch_size", batch_size},
                      {"epochs", epochs},
                      {"patience", patience},
                      {"train_fraction", train_fraction},
                      {"min_freq", min_freq},
                      {"ts_finetune", ts_finetune},
                      {"finetune_source", finetune_source},
                      {"sweep_t", sweep_t},
                      {"out", out.string()},
                      {"jobs", jobs}};
  if (lm_epochs) j["lm_epochs"] = *lm_epochs;
  nlohmann::json d = {{"t_mode", to_string(distill.t_mode)},
                      {"t_fixed", distill.t_fixed},
                      {"lambda_sd", distill.lambda_sd},
                      {"student_objective", to_string(distill.student_objective)},
                      {"alpha", distill.alpha},
                      {"reinit_student", distill.reinit_student},
                      {"reinit_seed", distill.reinit_seed},
                      {"t_squared", distill.kd.t_squared}};
  if (distill_epochs) d["epochs"] = *distill_epochs;
  j["distill"] = d;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j,
                 {"corpus", "seed", "model", "objective", "alpha", "optimizer", "batch_size", "epochs", "patience",
                  "lm_epochs", "train_fraction", "min_freq", "distill", "ts_finetune", "finetune_source", "sweep_t",
                  "out", "jobs"},
                 "config");
  ExperimentConfig c;
  c.corpus = take<std::string>(j, "corpus", c.corpus.string());
  c.seed = take<std::uint64_t>(j, "seed", c.seed);
  if (j.contains("model")) {
    reject_unknown(j["model"], {"vocab_size", "d_model", "n_heads", "n_layers", "d_ffn", "max_len", "dropout"},
                   "model");
    c.model = ModelConfig::from_json(j["model"]);
  }
  c.objective = objective_from_string(take<std::string>(j, "objective", to_string(c.objective)));
  c.alpha = take(j, "alpha", c.alpha);
  if (j.contains("optimizer")) {
    reject_unknown(j["optimizer"], {"name", "lr", "betas", "eps", "clip_norm", "warmup_steps"}, "optimizer");
    c.optimizer = AdamConfig::from_json(j["optimizer"]);
  }
  c.batch_size = take<std::size_t>(j, "batch_size", c.batch_size);
  c.epochs = take(j, "epochs", c.epochs);
  c.patience = take(j, "patience", c.patience);
  if (j.contains("lm_epochs")) c.lm_epochs = take(j, "lm_epochs", 0);
  c.train_fraction = take(j, "train_fraction", c.train_fraction);
  c.min_freq = take(j, "min_freq", c.min_freq);
  c.ts_finetune = take(j, "ts_finetune", c.ts_finetune);
  c.finetune_source = take<std::string>(j, "finetune_source", c.finetune_source);
  c.sweep_t = take(j, "sweep_t", c.sweep_t);
  c.out = take<std::string>(j, "out", c.out.string());
  c.jobs = take(j, "jobs", c.jobs);
  if (j.contains("distill")) {
    const auto& d = j["distill"];
    reject_unknown(d,
                   {"t_mode", "t_fixed", "lambda_sd", "student_objective", "alpha", "epochs", "reinit_student",
                    "reinit_seed", "t_squared"},
                   "distill");
    c.distill.t_mode = temperature_mode_from_string(take<std::string>(d, "t_mode", to_string(c.distill.t_mode)));
    c.distill.t_fixed = take(d, "t_fixed", c.distill.t_fixed);
    c.distill.lambda_sd = take(d, "lambda_sd", c.distill.lambda_sd);
    c.distill.student_objective =
        objective_from_string(take<std::string>(d, "student_objective", to_string(c.distill.student_objective)));
    c.distill.alpha = take(d, "alpha", c.distill.alpha);
    if (d.contains("epochs")) c.distill_epochs = take(d, "epochs", 0);
    c.distill.reinit_student = take(d, "reinit_student", c.distill.reinit_student);
    c.distill.reinit_seed = take<std::uint64_t>(d, "reinit_seed", c.distill.reinit_seed);
    c.distill.kd.t_squared = take(d, "t_squared", c.distill.kd.t_squared);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

TrainOptions ExperimentConfig::train_options() const {
  TrainOptions o;
  o.adam = optimizer;
  o.batch_size = batch_size;
  o.epochs = epochs;
  o.patience = patience;
  o.seed = seed;
  return o;
}

DistillConfig ExperimentConfig::distill_config() const {
  DistillConfig d = distill;
  d.train = train_options();
  if (distill_epochs) d.train.epochs = *distill_epochs;
  return d;
}

// ---------------------------------------------------------------------------

ModelConfig Workspace::model_config(const ModelConfig& base) const {
  ModelConfig c = base;
  c.vocab_size = static_cast<int>(vocab.size());
  c.validate();
  return c;
}

Workspace Workspace::prepare(const ExperimentConfig& cfg) {
  if (cfg.corpus.empty()) throw ConfigError("no corpus path configured");
  if (!std::filesystem::exists(cfg.corpus)) throw ConfigError("corpus not found: " + cfg.corpus.string());
  Workspace ws;
  ws.pairs = read_jsonl(cfg.corpus);
  if (ws.pairs.empty()) throw ConfigError("corpus " + cfg.corpus.string() + " is empty");
  ws.vocab = build_vocab(ws.pairs, cfg.min_freq);
  std::tie(ws.train, ws.val) = split_dataset(ws.pairs, cfg.train_fraction, cfg.seed);
  return ws;
}

void check_vocab(const ModelParameters& params, const Vocab& vocab) {
  if (static_cast<std::size_t>(params.config.vocab_size) != vocab.size() ||
      (params.vocab_fingerprint != 0 && params.vocab_fingerprint != vocab.fingerprint()))
    throw ConfigError("checkpoint vocabulary (" + std::to_string(params.config.vocab_size) +
                      " tokens) does not match the corpus vocabulary (" + std::to_string(vocab.size()) + " tokens)");
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) epochs_json.push_back(e.to_json());
  return {{"stage", stage},
          {"config", config},
          {"epochs", epochs_json},
          {"best_epoch", best_epoch},
          {"selection", selection},
          {"checkpoints", checkpoints},
          {"wall_clock_s", wall_clock_s},
          {"t_values", t_values},
          {"notes", notes},
          {"step_losses", step_losses}};
}

void RunManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  // max_digits10 via nlohmann's round-trip float formatting
  out << to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------

StageResult pretrain_lm(const ExperimentConfig& cfg, const Workspace& ws) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainOptions opts = cfg.train_options();
  if (cfg.lm_epochs) opts.epochs = *cfg.lm_epochs;
  ModelParameters init = init_params(ws.model_config(cfg.model), init_seed(cfg.seed, ModelKind::kLm), ModelKind::kLm);
  init.vocab_fingerprint = ws.vocab.fingerprint();
  FitResult fit = fit_lm(std::move(init), ws.train, ws.val, ws.vocab, opts, cfg.objective, cfg.alpha);
  fit.best.vocab_fingerprint = ws.vocab.fingerprint();

  RunManifest m;
  m.stage = "pretrain-lm";
  m.config = cfg.to_json();
  m.epochs = std::move(fit.epochs);
  m.best_epoch = fit.best_epoch;
  m.selection = "val_loss";
  m.step_losses = std::move(fit.step_losses);
  m.notes.push_back(kLmNote);
  m.wall_clock_s = seconds_since(t0);
  return {std::move(fit.best), std::move(m)};
}

StageResult train_conversational(const ExperimentConfig& cfg, const Workspace& ws,
                                 const std::optional<ModelParameters>& lm) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelParameters params =
      init_params(ws.model_config(cfg.model), init_seed(cfg.seed, ModelKind::kSeq2Seq), ModelKind::kSeq2Seq);
  params.vocab_fingerprint = ws.vocab.fingerprint();
  RunManifest m;
  if (lm) {
    check_vocab(*lm, ws.vocab);
    params = transfer_encoder(*lm, params);
    m.notes.push_back("encoder initialized from the pretrained language model");
    m.notes.push_back(kLmNote);
  }
  const ObjectiveFn objective = ce_objective(static_cast<int>(ws.vocab.size()), cfg.objective, cfg.alpha);
  FitResult fit = fit_seq2seq(std::move(params), ws.train, ws.val, ws.vocab, cfg.train_options(), objective);
  fit.best.vocab_fingerprint = ws.vocab.fingerprint();

  m.stage = "train";
  m.config = cfg.to_json();
  m.epochs = std::move(fit.epochs);
  m.best_epoch = fit.best_epoch;
  m.selection = "val_bleu1";
  m.step_losses = std::move(fit.step_losses);
  m.wall_clock_s = seconds_since(t0);
  return {std::move(fit.best), std::move(m)};
}

FinetuneResult finetune_with_ts(const ModelParameters& checkpoint, const ExperimentConfig& cfg, const Workspace& ws) {
  const auto t0 = std::chrono::steady_clock::now();
  if (checkpoint.kind != ModelKind::kSeq2Seq) throw ConfigError("TS fine-tuning needs a seq2seq checkpoint");
  check_vocab(checkpoint, ws.vocab);
  const auto max_len = static_cast<std::size_t>(checkpoint.config.max_len);
  const PredictionSet preds = teacher_forced_predictions(checkpoint, make_batches(ws.val, ws.vocab, 16, max_len));
  CalibrationReport calibration = calibrate(preds);

  const ObjectiveFn objective = ts_objective(checkpoint.config.vocab_size, calibration.t_optimal);
  FitResult fit = fit_seq2seq(checkpoint, ws.train, ws.val, ws.vocab, cfg.train_options(), objective);
  fit.best.vocab_fingerprint = ws.vocab.fingerprint();

  RunManifest m;
  m.stage = "finetune-ts";
  m.config = cfg.to_json();
  m.epochs = std::move(fit.epochs);
  m.best_epoch = fit.best_epoch;
  m.selection = "val_bleu1";
  m.step_losses = std::move(fit.step_losses);
  m.t_values = {calibration.t_optimal};
  m.notes.push_back("T measured once on validation tokens of the loaded model (" +
                    std::to_string(calibration.n_samples) + " tokens)");
  m.wall_clock_s = seconds_since(t0);
  return {std::move(fit.best), std::move(m), std::move(calibration)};
}

// ---------------------------------------------------------------------------

int chat(const ModelParameters& params, const Vocab& vocab, std::istream& in, std::ostream& out) {
  if (params.kind != ModelKind::kSeq2Seq) throw ConfigError("chat needs a seq2seq checkpoint");
  check_vocab(params, vocab);
  const auto max_len = static_cast<std::size_t>(params.config.max_len);
  std::string line;
  while (true) {
    out << "> " << std::flush;
    if (!std::getline(in, line)) break;
    if (line == "/exit") break;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Ids reply = greedy_decode(params, encode_source({line, "-"}, vocab, max_len), max_len);
      out << join_tokens(decode(reply, vocab)) << '\n';
    } catch (const std::exception& e) {
      out << "error: " << e.what() << '\n';
    }
  }
  out << '\n';
  return 0;
}

}  // namespace dialcal
