#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "dialcal/pipeline.hpp"

namespace dialcal {

namespace {

void note(std::ostream* progress, const std::string& msg) {
  if (progress) *progress << msg << std::endl;
}

std::string fmt(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

nlohmann::json row_json(const ReportRow& r) {
  nlohmann::json j = r.report.to_json();
  j["method"] = r.method;
  j["model"] = r.model;
  j["t_used"] = r.t_used ? nlohmann::json(*r.t_used) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

std::string ExperimentReport::main_markdown() const {
  std::ostringstream os;
  os << markdown_table_header() << '\n';
  for (const auto& r : main_table) os << r.report.markdown_row(r.method, r.model) << '\n';
  return os.str();
}

std::string ExperimentReport::distill_markdown() const {
  std::ostringstream os;
  os << "| Method | Model | T | BLEU-1 | Perplexity | METEOR | ECE |\n|---|---|---|---|---|---|---|\n";
  for (const auto& r : distill_table)
    os << "| " << r.method << " | " << r.model << " | " << (r.t_used ? fmt(*r.t_used, 3) : "-") << " | "
       << fmt(r.report.bleu1, 4) << " | " << fmt(r.report.perplexity, 4) << " | " << fmt(r.report.meteor, 4) << " | "
       << fmt(r.report.ece, 4) << " |\n";
  return os.str();
}

void ExperimentReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream md(dir / "report.md");
    if (!md) throw Error("cannot write " + (dir / "report.md").string());
    md << "# " << dataset << "\n\n## Conversational models\n\n"
       << main_markdown() << "\n## Self-distillation\n\n"
       << distill_markdown() << "\n## Temperature sweep\n\n"
       << sweep.markdown() << "\n## Average response length\n\n| Model | Avg. length |\n|---|---|\n";
    for (const auto& [model, len] : lengths) md << "| " << model << " | " << fmt(len, 3) << " |\n";
  }
  sweep.write_csv(dir / "fig1_sweep.csv");
  {
    std::ofstream csv(dir / "fig2_lengths.csv");
    if (!csv) throw Error("cannot write " + (dir / "fig2_lengths.csv").string());
    csv << "model,avg_len\n" << std::setprecision(10);
    for (const auto& [model, len] : lengths) csv << model << ',' << len << '\n';
  }
  nlohmann::json j;
  j["dataset"] = dataset;
  for (const auto& r : main_table) j["main"].push_back(row_json(r));
  for (const auto& r : distill_table) j["distill"].push_back(row_json(r));
  j["sweep"] = sweep.to_json();
  for (const auto& [model, len] : lengths) j["lengths"].push_back({{"model", model}, {"avg_len", len}});
  std::ofstream js(dir / "report.json");
  if (!js) throw Error("cannot write " + (dir / "report.json").string());
  js << j.dump(2) << '\n';
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, std::ostream* progress) {
  cfg.validate();
  const Workspace ws = Workspace::prepare(cfg);
  const std::filesystem::path dir = cfg.out;
  std::filesystem::create_directories(dir);
  ws.vocab.save(dir / "vocab.txt");

  ExperimentReport rep;
  rep.dataset = cfg.corpus.stem().string();
  note(progress, "corpus " + cfg.corpus.string() + ": " + std::to_string(ws.train.size()) + " train / " +
                     std::to_string(ws.val.size()) + " val pairs, vocabulary " + std::to_string(ws.vocab.size()));

  auto keep = [&](const std::string& name, const ModelParameters& p, RunManifest m) {
    const auto path = dir / (name + ".ckpt");
    save_checkpoint(path, p);
    m.checkpoints.push_back(path.string());
    m.save(dir / (name + ".manifest.json"));
  };
  auto eval = [&](const ModelParameters& p) { return evaluate_pairs(p, ws.vocab, ws.val); };

  ExperimentConfig ce_cfg = cfg;
  ce_cfg.objective = Objective::kCe;
  ExperimentConfig ls_cfg = cfg;
  ls_cfg.objective = Objective::kLs;

  note(progress, "pretraining language models");
  StageResult lm_ce = pretrain_lm(ce_cfg, ws);
  keep("lm_ce", lm_ce.params, lm_ce.manifest);
  StageResult lm_ls = pretrain_lm(ls_cfg, ws);
  keep("lm_ls", lm_ls.params, lm_ls.manifest);

  note(progress, "training Transformer baseline");
  StageResult transformer = train_conversational(ce_cfg, ws);
  keep("transformer", transformer.params, transformer.manifest);
  note(progress, "training ULMFiT");
  StageResult ulmfit = train_conversational(ce_cfg, ws, lm_ce.params);
  keep("ulmfit", ulmfit.params, ulmfit.manifest);
  note(progress, "training CULMFiT");
  StageResult culmfit = train_conversational(ls_cfg, ws, lm_ls.params);
  keep("culmfit", culmfit.params, culmfit.manifest);

  const bool from_culmfit = cfg.finetune_source == "culmfit";
  note(progress, std::string("TS fine-tuning from ") + (from_culmfit ? "CULMFiT" : "ULMFiT"));
  FinetuneResult ft = finetune_with_ts(from_culmfit ? culmfit.params : ulmfit.params, ce_cfg, ws);
  keep("finetune_ts", ft.params, ft.manifest);
  {
    std::ofstream cal(dir / "finetune_ts.calibration.json");
    cal << ft.calibration.to_json().dump(2) << '\n';
    ft.calibration.bins.write_csv(dir / "finetune_ts.reliability.csv");
  }

  const EvalReport r_transformer = eval(transformer.params);
  const EvalReport r_ulmfit = eval(ulmfit.params);
  const EvalReport r_culmfit = eval(culmfit.params);
  const EvalReport r_ft = eval(ft.params);
  rep.main_table = {{"Baseline", "Transformer", r_transformer, std::nullopt},
                    {"Baseline", "ULMFiT", r_ulmfit, std::nullopt},
                    {"LS", "CULMFiT", r_culmfit, std::nullopt},
                    {"TS", std::string("Fine-tune (") + (from_culmfit ? "CULMFiT" : "ULMFiT") + ")", r_ft,
                     ft.calibration.t_optimal}};

  struct Base {
    std::string name;
    const ModelParameters* params;
    EvalReport standalone;
    Objective objective;
  };
  const std::vector<Base> bases = {{"Transformer", &transformer.params, r_transformer, Objective::kCe},
                                   {"CULMFiT", &culmfit.params, r_culmfit, Objective::kLs}};
  for (const auto& b : bases) {
    rep.distill_table.push_back({"Standalone", b.name, b.standalone, std::nullopt});
    for (TemperatureMode mode : {TemperatureMode::kFixed, TemperatureMode::kOptimal}) {
      DistillConfig dc = cfg.distill_config();
      dc.t_mode = mode;
      dc.student_objective = b.objective;
      dc.alpha = cfg.alpha;
      note(progress, "self-distillation (" + to_string(mode) + " T) on " + b.name);
      DistillResult sd = run_self_distillation(*b.params, ws.vocab, ws.train, ws.val, dc);
      const std::string tag = "sd_" + to_string(mode) + "_" + (b.name == "Transformer" ? "transformer" : "culmfit");
      save_checkpoint(dir / (tag + ".ckpt"), sd.student);
      std::ofstream(dir / (tag + ".log.json")) << sd.log.to_json().dump(2) << '\n';
      rep.distill_table.push_back({mode == TemperatureMode::kFixed ? "SD fixed TS" : "SD optimal TS", b.name,
                                   sd.log.final_report, sd.log.t_used});
    }
  }

  note(progress, "temperature sweep on the Transformer baseline");
  DistillConfig sweep_cfg = cfg.distill_config();
  sweep_cfg.student_objective = Objective::kCe;
  rep.sweep = temperature_sweep(transformer.params, ws.vocab, ws.train, ws.val, cfg.sweep_t, sweep_cfg, cfg.jobs);

  double ref_len = 0.0;
  for (const auto& r : references_of(ws.val)) ref_len += static_cast<double>(r.size());
  rep.lengths = {{"Reference", ref_len / static_cast<double>(ws.val.size())}};
  for (const auto& r : rep.main_table) rep.lengths.emplace_back(r.model, r.report.avg_len);
  for (const auto& r : rep.distill_table)
    if (r.method != "Standalone") rep.lengths.emplace_back(r.method + " " + r.model, r.report.avg_len);

  for (const auto& r : rep.main_table) r.report.check_ranges();
  for (const auto& r : rep.distill_table) r.report.check_ranges();
  rep.write(dir);
  note(progress, "report written to " + dir.string());
  return rep;
}

}  // namespace dialcal
