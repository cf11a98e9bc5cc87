// Command-line front end: corpus generation, training stages, evaluation, reports and chat.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dialcal/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dialcal;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string corpus;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.out = g.out;
  if (!g.corpus.empty()) cfg.corpus = g.corpus;
  cfg.validate();
  fs::create_directories(cfg.out);
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

ModelParameters load_for(const fs::path& ckpt, const Workspace& ws) {
  ModelParameters p = load_checkpoint(ckpt);
  check_vocab(p, ws.vocab);
  return p;
}

void finish_stage(const ExperimentConfig& cfg, const std::string& name, const ModelParameters& params,
                  RunManifest& manifest) {
  const fs::path ckpt = cfg.out / (name + ".ckpt");
  save_checkpoint(ckpt, params);
  manifest.checkpoints.push_back(ckpt.string());
  manifest.save(cfg.out / (name + ".manifest.json"));
  std::cout << "checkpoint " << ckpt.string() << " (best epoch " << manifest.best_epoch << " of "
            << manifest.epochs.size() << ")\n";
}

std::vector<DialoguePair> split_of(const Workspace& ws, const std::string& split) {
  if (split == "val") return ws.val;
  if (split == "train") return ws.train;
  if (split == "all") return ws.pairs;
  throw ConfigError("unknown split '" + split + "' (expected val, train or all)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dialcal: calibrated transformer dialogue models"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--corpus", g.corpus, "override the config corpus path");

  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic JSONL corpus");
  std::string task = "template_qa", gen_output;
  std::size_t n_pairs = 200, vocab_bound = 60;
  gen->add_option("--task", task, "copy or template_qa")->capture_default_str();
  gen->add_option("--n", n_pairs, "number of pairs")->capture_default_str();
  gen->add_option("--vocab-bound", vocab_bound, "maximum vocabulary size")->capture_default_str();
  gen->add_option("--output", gen_output, "corpus path (default <out>/corpus.jsonl)");

  auto* pre = app.add_subcommand("pretrain-lm", "pretrain a language model on the corpus text");

  auto* train = app.add_subcommand("train", "train a conversational model (CE or LS)");
  std::string lm_path;
  train->add_option("--lm", lm_path, "language-model checkpoint whose encoder is transferred");

  std::string ckpt_path;
  auto* ft = app.add_subcommand("finetune-ts", "fine-tune with temperature-scaled cross-entropy at T*");
  ft->add_option("--checkpoint", ckpt_path, "seq2seq checkpoint")->required();

  auto* distill = app.add_subcommand("distill", "self-distillation from a checkpoint");
  distill->add_option("--checkpoint", ckpt_path, "seq2seq checkpoint")->required();
  std::string t_mode;
  std::optional<double> t_fixed, lambda_sd;
  distill->add_option("--t-mode", t_mode, "fixed or optimal");
  distill->add_option("--t-fixed", t_fixed, "temperature in fixed mode");
  distill->add_option("--lambda", lambda_sd, "weight of the distillation term");

  auto* sweep = app.add_subcommand("sweep-t", "fixed-T self-distillation over several temperatures");
  sweep->add_option("--checkpoint", ckpt_path, "seq2seq checkpoint")->required();
  std::vector<double> sweep_t;
  sweep->add_option("--t", sweep_t, "temperatures (default from config)");

  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a corpus split");
  eval->add_option("--checkpoint", ckpt_path, "seq2seq checkpoint")->required();
  std::string split = "val";
  eval->add_option("--split", split, "val, train or all")->capture_default_str();

  auto* report = app.add_subcommand("report", "run the full experiment matrix");

  auto* chat_cmd = app.add_subcommand("chat", "interactive greedy decoding");
  chat_cmd->add_option("--checkpoint", ckpt_path, "seq2seq checkpoint")->required();
  std::string vocab_path;
  chat_cmd->add_option("--vocab", vocab_path, "vocabulary file (default: vocab.txt beside the checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      const fs::path out = gen_output.empty() ? fs::path(g.out.empty() ? "." : g.out) / "corpus.jsonl" : fs::path(gen_output);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      const auto pairs = generate_synthetic_corpus(n_pairs, vocab_bound, g.seed.value_or(1),
                                                   synthetic_task_from_string(task));
      write_jsonl(out, pairs);
      std::cout << "wrote " << pairs.size() << " pairs to " << out.string() << '\n';
      return 0;
    }
    if (chat_cmd->parsed()) {
      const ModelParameters params = load_checkpoint(ckpt_path);
      const fs::path vp = vocab_path.empty() ? fs::path(ckpt_path).parent_path() / "vocab.txt" : fs::path(vocab_path);
      return chat(params, Vocab::load(vp), std::cin, std::cout);
    }

    const ExperimentConfig cfg = load_config(g);
    if (report->parsed()) {
      run_experiment(cfg, &std::cerr);
      std::cout << "report written to " << cfg.out.string() << '\n';
      return 0;
    }

    const Workspace ws = Workspace::prepare(cfg);
    ws.vocab.save(cfg.out / "vocab.txt");

    if (pre->parsed()) {
      StageResult r = pretrain_lm(cfg, ws);
      finish_stage(cfg, "lm", r.params, r.manifest);
    } else if (train->parsed()) {
      std::optional<ModelParameters> lm;
      if (!lm_path.empty()) lm = load_checkpoint(lm_path);
      StageResult r = train_conversational(cfg, ws, lm);
      finish_stage(cfg, "model", r.params, r.manifest);
    } else if (ft->parsed()) {
      FinetuneResult r = finetune_with_ts(load_for(ckpt_path, ws), cfg, ws);
      finish_stage(cfg, "finetune_ts", r.params, r.manifest);
      write_json(cfg.out / "calibration.json", r.calibration.to_json());
      r.calibration.bins.write_csv(cfg.out / "reliability.csv");
      std::cout << "T* = " << r.calibration.t_optimal << ", ECE " << r.calibration.ece_before << " -> "
                << r.calibration.ece_after << '\n';
    } else if (distill->parsed()) {
      DistillConfig dc = cfg.distill_config();
      if (!t_mode.empty()) dc.t_mode = temperature_mode_from_string(t_mode);
      if (t_fixed) dc.t_fixed = *t_fixed;
      if (lambda_sd) dc.lambda_sd = *lambda_sd;
      DistillResult r = run_self_distillation(load_for(ckpt_path, ws), ws.vocab, ws.train, ws.val, dc);
      save_checkpoint(cfg.out / "distilled.ckpt", r.student);
      nlohmann::json log = r.log.to_json();
      log["config"] = cfg.to_json();
      write_json(cfg.out / "distill.log.json", log);
      std::cout << "T = " << r.log.t_used << " (" << r.log.t_source << "), BLEU-1 " << r.log.final_report.bleu1
                << '\n';
    } else if (sweep->parsed()) {
      const SweepTable t = temperature_sweep(load_for(ckpt_path, ws), ws.vocab, ws.train, ws.val,
                                             sweep_t.empty() ? cfg.sweep_t : sweep_t, cfg.distill_config(), cfg.jobs);
      t.write_csv(cfg.out / "sweep.csv");
      std::cout << t.markdown();
    } else if (eval->parsed()) {
      const auto pairs = split_of(ws, split);
      if (pairs.empty()) throw ConfigError("split '" + split + "' is empty");
      const EvalReport r = evaluate_pairs(load_for(ckpt_path, ws), ws.vocab, pairs);
      write_json(cfg.out / "eval.json", r.to_json());
      std::cout << markdown_table_header() << r.markdown_row("-", fs::path(ckpt_path).stem().string());
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
