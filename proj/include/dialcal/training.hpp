#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialcal/corpus.hpp"
#include "dialcal/losses.hpp"
#include "dialcal/model.hpp"
#include "dialcal/optim.hpp"

namespace dialcal {

enum class Objective { kCe, kLs };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct TrainOptions {
  AdamConfig adam;
  std::size_t batch_size = 4;
  int epochs = 200;
  /// Stop after this many epochs without a new best; <= 0 disables early stopping.
  int patience = 30;
  std::uint64_t seed = 1;
  /// Stop as soon as the selection metric reaches this value (BLEU-1 runs only); > 1 disables.
  double target_bleu1 = 2.0;
};

/// Loss on one batch plus named components for logging.
struct StepLoss {
  LossValue loss;
  std::vector<std::pair<std::string, double>> components;
};

/// Maps the student's logits on a batch (rows = decoder positions, batch-major) to a loss.
using ObjectiveFn = std::function<StepLoss(const Mat& logits, const Batch& batch)>;

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_bleu1 = 0.0;  // NaN for language-model runs
  std::vector<std::pair<std::string, double>> components;  // epoch means

  nlohmann::json to_json() const;
};

struct FitResult {
  ModelParameters best;  // rounded to checkpoint precision
  int best_epoch = 0;    // 1-based
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
};

/// Hard or label-smoothed targets for the batch's decoder positions, plus the pad mask.
TargetDistribution batch_targets(const IdMatrix& target, int vocab_size, Objective objective, double alpha);
PadMask target_mask(const IdMatrix& target);

/// Cross-entropy objective (hard targets, or smoothed when objective == kLs).
ObjectiveFn ce_objective(int vocab_size, Objective objective, double alpha);
/// Temperature-scaled cross-entropy on hard targets.
ObjectiveFn ts_objective(int vocab_size, double temperature);

/// Validation metrics used for model selection.
struct ValidationScore {
  double loss = 0.0;
  double bleu1 = 0.0;
};
ValidationScore validate_seq2seq(const ModelParameters& params, const std::vector<DialoguePair>& val,
                                 const Vocab& vocab);

/// Trains a seq2seq model in place and keeps the weights of the best validation-BLEU-1 epoch.
/// `rng` drives the per-epoch shuffle and dropout.
FitResult fit_seq2seq(ModelParameters params, const std::vector<DialoguePair>& train,
                      const std::vector<DialoguePair>& val, const Vocab& vocab, const TrainOptions& opts,
                      const ObjectiveFn& objective);

/// Language-model sequence for a pair: bos + query + reply + eos, truncated to max_len + 1 ids.
Ids lm_sequence(const DialoguePair& pair, const Vocab& vocab, std::size_t max_len);

/// Trains a next-token language model, selecting the epoch with the lowest validation loss.
FitResult fit_lm(ModelParameters params, const std::vector<DialoguePair>& train, const std::vector<DialoguePair>& val,
                 const Vocab& vocab, const TrainOptions& opts, Objective objective, double alpha);

std::vector<Tokens> references_of(const std::vector<DialoguePair>& pairs);
std::vector<Ids> sources_of(const std::vector<DialoguePair>& pairs, const Vocab& vocab, std::size_t max_len);

}  // namespace dialcal
