#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dialcal/calibration.hpp"
#include "dialcal/corpus.hpp"
#include "dialcal/model.hpp"

namespace dialcal {

struct Bleu1 {
  double corpus = 0.0;
  std::vector<double> per_sentence;
};

/// Corpus-level clipped unigram precision times the brevity penalty min(1, exp(1 - r/c)).
Bleu1 bleu1_detail(const std::vector<Tokens>& predictions, const std::vector<Tokens>& references);
double bleu1(const std::vector<Tokens>& predictions, const std::vector<Tokens>& references);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  /// False when the exact search exceeded its state budget and a greedy alignment was used.
  bool exact = true;
};

/// Maximum exact-match alignment with the fewest chunks.
MeteorAlignment meteor_align(const Tokens& prediction, const Tokens& reference);

/// Exact-match METEOR: Fmean = 10PR / (R + 9P), penalty = 0.5 (chunks / m)^3.
double meteor(const Tokens& prediction, const Tokens& reference);
/// Mean sentence METEOR over pairs.
double meteor_corpus(const std::vector<Tokens>& predictions, const std::vector<Tokens>& references);

/// Total negative log-likelihood and token count of the ground-truth continuations.
/// Accumulated in extended precision with compensated summation, so a uniform model over V
/// classes yields a perplexity of exactly V.
struct TokenNll {
  long double sum = 0.0L;
  long double carry = 0.0L;
  std::size_t tokens = 0;

  void add(long double nll);
  long double mean() const { return (sum + carry) / static_cast<long double>(tokens); }
  double perplexity() const;
};

TokenNll seq2seq_token_nll(const ModelParameters& params, const std::vector<Batch>& batches);
TokenNll lm_token_nll(const ModelParameters& params, const std::vector<IdMatrix>& sequences);

/// exp(mean per-token cross-entropy) over every non-pad target token.
double perplexity(const ModelParameters& params, const std::vector<Batch>& batches);

double avg_sentence_length(const std::vector<Tokens>& predictions);

struct EvalReport {
  double bleu1 = 0.0;
  double meteor = 0.0;
  double perplexity = 1.0;
  double ece = 0.0;
  double avg_len = 0.0;
  std::size_t n_samples = 0;
  std::vector<double> bleu1_per_sentence;

  void check_ranges() const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  /// "| method | model | BLEU-1 | Perplexity | METEOR | ECE |"
  std::string markdown_row(const std::string& method, const std::string& model) const;
};

std::string markdown_table_header();

}  // namespace dialcal

namespace dialcal {

/// Logits and labels of every non-pad target token under teacher forcing (inference mode).
PredictionSet teacher_forced_predictions(const ModelParameters& params, const std::vector<Batch>& batches);

}  // namespace dialcal

namespace dialcal {

/// Greedy-decodes every query and scores against the replies; perplexity and token-level ECE
/// use teacher forcing on the ground-truth continuations.
EvalReport evaluate_pairs(const ModelParameters& params, const Vocab& vocab, const std::vector<DialoguePair>& pairs,
                          std::size_t n_bins = 15);

}  // namespace dialcal
