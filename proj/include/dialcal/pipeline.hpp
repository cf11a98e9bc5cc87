#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialcal/calibration.hpp"
#include "dialcal/corpus.hpp"
#include "dialcal/distill.hpp"
#include "dialcal/metrics.hpp"
#include "dialcal/model.hpp"
#include "dialcal/training.hpp"

namespace dialcal {

// ---------------------------------------------------------------------------
// Synthetic corpora

enum class SyntheticTask { kCopy, kTemplateQa };

SyntheticTask synthetic_task_from_string(const std::string& s);

/// Copy: 3 to 6 distinct random words with reply == query. Template QA: symptom/advice templates whose
/// reply is a deterministic function of the query slots. Vocabulary after tokenization stays
/// within `vocab_size_bound`.
std::vector<DialoguePair> generate_synthetic_corpus(std::size_t n_pairs, std::size_t vocab_size_bound,
                                                    std::uint64_t seed, SyntheticTask task);

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  std::filesystem::path corpus;
  std::uint64_t seed = 1;
  ModelConfig model;  // vocab_size is filled from the corpus vocabulary
  Objective objective = Objective::kCe;
  double alpha = 0.1;
  AdamConfig optimizer;
  std::size_t batch_size = 4;
  int epochs = 200;
  int patience = 30;
  /// Epoch budget for language-model pretraining; defaults to `epochs`.
  std::optional<int> lm_epochs;
  double train_fraction = 0.8;
  int min_freq = 1;
  DistillConfig distill;
  /// Epoch budget for distillation runs; defaults to `epochs`.
  std::optional<int> distill_epochs;
  bool ts_finetune = false;
  /// Which conversational model the TS fine-tuning row starts from: "ulmfit" or "culmfit".
  std::string finetune_source = "ulmfit";
  std::vector<double> sweep_t = {1.5, 2.0, 3.0, 4.0, 5.0};
  std::filesystem::path out = "runs";
  unsigned jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
  /// Every field is optional; missing keys keep their defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  TrainOptions train_options() const;
  /// `distill` with the run's optimizer, batch size, seed and epoch budget filled in.
  DistillConfig distill_config() const;
};

/// Corpus, vocabulary and the deterministic train/validation split shared by every stage.
struct Workspace {
  std::vector<DialoguePair> pairs;
  Vocab vocab;
  std::vector<DialoguePair> train;
  std::vector<DialoguePair> val;

  ModelConfig model_config(const ModelConfig& base) const;
  static Workspace prepare(const ExperimentConfig& cfg);
};

struct RunManifest {
  std::string stage;
  nlohmann::json config;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::string selection;  // "val_bleu1" or "val_loss"
  std::vector<std::string> checkpoints;
  double wall_clock_s = 0.0;
  std::vector<double> t_values;
  std::vector<std::string> notes;
  std::vector<double> step_losses;

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;
};

struct StageResult {
  ModelParameters params;
  RunManifest manifest;
};

StageResult pretrain_lm(const ExperimentConfig& cfg, const Workspace& ws);
StageResult train_conversational(const ExperimentConfig& cfg, const Workspace& ws,
                                 const std::optional<ModelParameters>& lm = std::nullopt);

struct FinetuneResult {
  ModelParameters params;
  RunManifest manifest;
  CalibrationReport calibration;  // of the loaded model on validation tokens
};

/// Measures T* once on the loaded model's validation tokens, then trains the whole model with
/// temperature-scaled cross-entropy at that T.
FinetuneResult finetune_with_ts(const ModelParameters& checkpoint, const ExperimentConfig& cfg, const Workspace& ws);

/// Throws ConfigError when the checkpoint was built for another vocabulary.
void check_vocab(const ModelParameters& params, const Vocab& vocab);

// ---------------------------------------------------------------------------
// Experiment matrix

struct ReportRow {
  std::string method;
  std::string model;
  EvalReport report;
  std::optional<double> t_used;
};

struct ExperimentReport {
  std::string dataset;
  std::vector<ReportRow> main_table;     // Transformer, ULMFiT, CULMFiT, Fine-tune
  std::vector<ReportRow> distill_table;  // Standalone / SD fixed / SD optimal x {Transformer, CULMFiT}
  SweepTable sweep;
  std::vector<std::pair<std::string, double>> lengths;

  std::string main_markdown() const;
  std::string distill_markdown() const;
  void write(const std::filesystem::path& dir) const;
};

/// Runs every stage and writes report.md, report.json, fig1_sweep.csv and fig2_lengths.csv to cfg.out.
ExperimentReport run_experiment(const ExperimentConfig& cfg, std::ostream* progress = nullptr);

// ---------------------------------------------------------------------------
// Interactive loop

/// Reads lines from `in` until "/exit" or end of input. Blank lines re-prompt without touching
/// the model. Returns the process exit status.
int chat(const ModelParameters& params, const Vocab& vocab, std::istream& in, std::ostream& out);

}  // namespace dialcal
