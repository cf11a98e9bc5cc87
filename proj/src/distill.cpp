#include "dialcal/distill.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

namespace dialcal {

std::string to_string(TemperatureMode m) { return m == TemperatureMode::kFixed ? "fixed" : "optimal"; }

TemperatureMode temperature_mode_from_string(const std::string& s) {
  if (s == "fixed") return TemperatureMode::kFixed;
  if (s == "optimal") return TemperatureMode::kOptimal;
  throw ConfigError("unknown temperature mode '" + s + "' (expected fixed or optimal)");
}

void DistillConfig::validate() const {
  if (!(t_fixed > 0.0)) throw ConfigError("t_fixed must be > 0");
  if (!(lambda_sd >= 0.0)) throw ConfigError("lambda_sd must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
}

nlohmann::json DistillConfig::to_json() const {
  return {{"t_mode", to_string(t_mode)},
          {"t_fixed", t_fixed},
          {"lambda_sd", lambda_sd},
          {"student_objective", to_string(student_objective)},
          {"alpha", alpha},
          {"epochs", train.epochs},
          {"patience", train.patience},
          {"batch_size", train.batch_size},
          {"seed", train.seed},
          {"optimizer", train.adam.to_json()},
          {"reinit_student", reinit_student},
          {"kd_t_squared", kd.t_squared}};
}

nlohmann::json DistillRunLog::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) epochs_json.push_back(e.to_json());
  nlohmann::json j = {{"t_used", t_used},
                      {"t_source", t_source},
                      {"l_sd_step0", l_sd_step0},
                      {"epochs", epochs_json},
                      {"best_epoch", best_epoch},
                      {"student_objective", student_objective},
                      {"final_report", final_report.to_json()}};
  if (teacher_calibration) j["teacher_calibration"] = teacher_calibration->to_json();
  return j;
}

DistillResult run_self_distillation(const ModelParameters& student, const Vocab& vocab,
                                    const std::vector<DialoguePair>& train, const std::vector<DialoguePair>& val,
                                    const DistillConfig& config) {
  config.validate();
  if (student.kind != ModelKind::kSeq2Seq) throw ConfigError("self-distillation needs a seq2seq checkpoint");
  if (student.vocab_fingerprint != 0 && student.vocab_fingerprint != vocab.fingerprint())
    throw ConfigError("checkpoint vocabulary does not match the corpus vocabulary");
  if (static_cast<std::size_t>(student.config.vocab_size) != vocab.size())
    throw ConfigError("checkpoint vocab_size does not match the corpus vocabulary");

  // Deep copy; the objective closure only ever reads it.
  const ModelParameters teacher = student;
  const auto max_len = static_cast<std::size_t>(teacher.config.max_len);
  DistillRunLog log;
  log.student_objective = to_string(config.student_objective);

  if (config.t_mode == TemperatureMode::kFixed) {
    log.t_used = config.t_fixed;
    log.t_source = "fixed";
  } else {
    const PredictionSet preds = teacher_forced_predictions(teacher, make_batches(val, vocab, 16, max_len));
    CalibrationReport report;
    try {
      report = calibrate(preds, 15, config.search);
    } catch (const Error& e) {
      throw Error(std::string("optimal temperature search on the teacher's validation tokens failed (") +
                  std::to_string(preds.size()) + " tokens): " + e.what());
    }
    log.t_used = report.t_optimal;
    log.t_source = "optimal: teacher validation tokens (" + std::to_string(preds.size()) + ")";
    log.teacher_calibration = report;
  }

  const int vocab_size = teacher.config.vocab_size;
  const double t = log.t_used;
  const ObjectiveFn objective = [&, t, vocab_size](const Mat& logits, const Batch& batch) {
    Graph g(false);
    const Mat teacher_logits = seq2seq_logits(g, teacher, batch.src, batch.decoder_input()).value();
    const IdMatrix target = batch.decoder_target();
    SdLossValue sd = combined_sd_loss(teacher_logits, logits,
                                      batch_targets(target, vocab_size, config.student_objective, config.alpha), t,
                                      config.lambda_sd, target.mask, config.kd);
    StepLoss s;
    s.loss = std::move(sd.total);
    s.components = {{"l_sd", sd.kd}, {"l_ce", sd.ce}};
    return s;
  };

  ModelParameters start = config.reinit_student ? init_params(student.config, config.reinit_seed, ModelKind::kSeq2Seq)
                                                : student;
  start.vocab_fingerprint = student.vocab_fingerprint;

  {
    const std::vector<Batch> first = make_batches(train, vocab, config.train.batch_size, max_len);
    Graph g(false);
    const Mat logits = seq2seq_logits(g, start, first.front().src, first.front().decoder_input()).value();
    Graph gt(false);
    const Mat teacher_logits =
        seq2seq_logits(gt, teacher, first.front().src, first.front().decoder_input()).value();
    log.l_sd_step0 = kd_kl_loss(teacher_logits, logits, t, first.front().decoder_target().mask, config.kd).value;
  }

  FitResult fit = fit_seq2seq(std::move(start), train, val, vocab, config.train, objective);
  log.epochs = std::move(fit.epochs);
  log.best_epoch = fit.best_epoch;
  log.final_report = evaluate_pairs(fit.best, vocab, val);
  fit.best.vocab_fingerprint = student.vocab_fingerprint;
  return {std::move(fit.best), std::move(log)};
}

void SweepTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "T,bleu1,meteor,perplexity,ece\n" << std::setprecision(10);
  for (const auto& r : rows)
    out << r.t << ',' << r.report.bleu1 << ',' << r.report.meteor << ',' << r.report.perplexity << ',' << r.report.ece
        << '\n';
}

std::string SweepTable::markdown() const {
  std::ostringstream os;
  os << "| T | BLEU-1 | Perplexity | METEOR | ECE |\n|---|---|---|---|---|\n" << std::fixed;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << "| " << std::setprecision(3) << r.t << (i == best ? " (best)" : "") << " | " << std::setprecision(4)
       << r.report.bleu1 << " | " << r.report.perplexity << " | " << r.report.meteor << " | " << r.report.ece << " |\n";
  }
  return os.str();
}

nlohmann::json SweepTable::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row = r.report.to_json();
    row["T"] = r.t;
    arr.push_back(row);
  }
  return {{"rows", arr}, {"best_t", rows.empty() ? 0.0 : rows[best].t}};
}

SweepTable temperature_sweep(const ModelParameters& student, const Vocab& vocab, const std::vector<DialoguePair>& train,
                             const std::vector<DialoguePair>& val, const std::vector<double>& t_values,
                             const DistillConfig& config, unsigned jobs) {
  if (t_values.empty()) throw ConfigError("temperature sweep needs at least one T");
  for (double t : t_values)
    if (!(t > 0.0)) throw ConfigError("sweep temperatures must be > 0");
  std::vector<double> ts = t_values;
  std::sort(ts.begin(), ts.end());

  auto run_one = [&](double t) {
    DistillConfig c = config;
    c.t_mode = TemperatureMode::kFixed;
    c.t_fixed = t;
    return run_self_distillation(student, vocab, train, val, c).log.final_report;
  };

  SweepTable table;
  table.rows.resize(ts.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(jobs, ts.size()));
  for (std::size_t start = 0; start < ts.size(); start += workers) {
    std::vector<std::future<EvalReport>> pending;
    for (std::size_t i = start; i < std::min(ts.size(), start + workers); ++i)
      pending.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, run_one, ts[i]));
    for (std::size_t k = 0; k < pending.size(); ++k) table.rows[start + k] = SweepRow{ts[start + k], pending[k].get()};
  }
  for (std::size_t i = 1; i < table.rows.size(); ++i)
    if (table.rows[i].report.bleu1 > table.rows[table.best].report.bleu1) table.best = i;
  return table;
}

}  // namespace dialcal
