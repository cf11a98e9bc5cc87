#include "dialcal/metrics.hpp"

#include <bit>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>

namespace dialcal {

Bleu1 bleu1_detail(const std::vector<Tokens>& predictions, const std::vector<Tokens>& references) {
  if (predictions.size() != references.size()) throw ConfigError("bleu1: prediction and reference counts differ");
  if (predictions.empty()) throw ConfigError("bleu1 needs at least one pair");
  Bleu1 out;
  std::size_t clipped = 0, cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    std::map<std::string, std::size_t> ref_counts, pred_counts;
    for (const auto& t : references[i]) ++ref_counts[t];
    for (const auto& t : predictions[i]) ++pred_counts[t];
    std::size_t m = 0;
    for (const auto& [tok, n] : pred_counts) {
      auto it = ref_counts.find(tok);
      if (it != ref_counts.end()) m += std::min(n, it->second);
    }
    clipped += m;
    cand_len += predictions[i].size();
    ref_len += references[i].size();
    double s = 0.0;
    if (!predictions[i].empty()) {
      const double c = static_cast<double>(predictions[i].size());
      const double r = static_cast<double>(references[i].size());
      const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
      s = bp * static_cast<double>(m) / c;
    }
    out.per_sentence.push_back(s);
  }
  if (cand_len > 0) {
    const double c = static_cast<double>(cand_len);
    const double r = static_cast<double>(ref_len);
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    out.corpus = bp * static_cast<double>(clipped) / c;
  }
  return out;
}

double bleu1(const std::vector<Tokens>& predictions, const std::vector<Tokens>& references) {
  return bleu1_detail(predictions, references).corpus;
}

namespace {

// Exact chunk minimization. A chunk boundary is avoided whenever consecutive prediction
// tokens are matched to consecutive reference positions, so the search maximizes those
// links over every alignment that reaches the maximum match count.
class ChunkSearch {
 public:
  ChunkSearch(const Tokens& pred, const Tokens& ref) : pred_(pred), ref_(ref) {
    std::map<std::string, int> word_ids;
    for (const auto& t : pred) word_ids.try_emplace(t, static_cast<int>(word_ids.size()));
    pred_word_.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) pred_word_[i] = word_ids.at(pred[i]);
    const std::size_t W = word_ids.size();
    word_mask_.assign(W, 0);
    quota_.assign(W, 0);
    std::vector<int> ref_count(W, 0), pred_count(W, 0);
    for (int w : pred_word_) ++pred_count[static_cast<std::size_t>(w)];
    for (std::size_t j = 0; j < ref.size(); ++j) {
      auto it = word_ids.find(ref[j]);
      if (it == word_ids.end()) continue;
      if (slot_ref_pos_.size() >= 64) {
        too_large_ = true;
        break;
      }
      const auto w = static_cast<std::size_t>(it->second);
      word_mask_[w] |= 1ULL << slot_ref_pos_.size();
      slot_ref_pos_.push_back(j);
      ++ref_count[w];
    }
    for (std::size_t w = 0; w < W; ++w) {
      quota_[w] = std::min(ref_count[w], pred_count[w]);
      matches_ += static_cast<std::size_t>(quota_[w]);
    }
    // remaining_[i][w]: occurrences of word w in pred[i..].
    remaining_.assign(pred.size() + 1, std::vector<int>(W, 0));
    for (std::size_t i = pred.size(); i-- > 0;) {
      remaining_[i] = remaining_[i + 1];
      ++remaining_[i][static_cast<std::size_t>(pred_word_[i])];
    }
  }

  MeteorAlignment run() {
    MeteorAlignment out;
    out.matches = matches_;
    if (matches_ == 0) return out;
    if (!too_large_) {
      const int links = best(0, -1, 0);
      if (!overflow_) {
        out.chunks = matches_ - static_cast<std::size_t>(links);
        return out;
      }
    }
    out.exact = false;
    out.chunks = greedy_chunks();
    return out;
  }

 private:
  static constexpr std::size_t kStateBudget = 4'000'000;
  static constexpr int kInfeasible = -1'000'000;

  struct Key {
    std::uint64_t mask;
    std::uint32_t i;
    std::int32_t prev;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      std::uint64_t h = k.mask * 0x9E3779B97F4A7C15ULL;
      h ^= (static_cast<std::uint64_t>(k.i) << 32) ^ static_cast<std::uint32_t>(k.prev + 1);
      return static_cast<std::size_t>(h * 0xBF58476D1CE4E5B9ULL);
    }
  };

  // prev is the slot matched by pred[i-1], or -1 when pred[i-1] is unmatched.
  int best(std::size_t i, int prev, std::uint64_t used) {
    if (overflow_) return 0;
    if (i == pred_.size()) return 0;
    const Key key{used, static_cast<std::uint32_t>(i), prev};
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    if (memo_.size() >= kStateBudget) {
      overflow_ = true;
      return 0;
    }
    const auto w = static_cast<std::size_t>(pred_word_[i]);
    const int used_w = std::popcount(used & word_mask_[w]);
    const int needed = quota_[w] - used_w;
    int result = kInfeasible;
    if (remaining_[i + 1][w] >= needed) result = best(i + 1, -1, used);
    if (needed > 0) {
      std::uint64_t free_slots = word_mask_[w] & ~used;
      while (free_slots) {
        const int s = std::countr_zero(free_slots);
        free_slots &= free_slots - 1;
        const int link = (prev >= 0 && slot_ref_pos_[static_cast<std::size_t>(s)] ==
                                           slot_ref_pos_[static_cast<std::size_t>(prev)] + 1)
                             ? 1
                             : 0;
        const int sub = best(i + 1, s, used | (1ULL << s));
        if (sub > kInfeasible / 2) result = std::max(result, sub + link);
      }
    }
    memo_.emplace(key, result);
    return result;
  }

  // Left-to-right: match each token to a free reference position of the same word, preferring
  // the one that extends the current chunk.
  std::size_t greedy_chunks() const {
    std::map<std::string, std::vector<std::size_t>> free;
    for (std::size_t j = 0; j < ref_.size(); ++j) free[ref_[j]].push_back(j);
    std::size_t chunks = 0;
    long prev = -2;
    for (const auto& t : pred_) {
      auto it = free.find(t);
      if (it == free.end() || it->second.empty()) {
        prev = -2;
        continue;
      }
      auto& pos = it->second;
      auto pick = std::find(pos.begin(), pos.end(), static_cast<std::size_t>(prev + 1));
      if (pick == pos.end()) {
        pick = pos.begin();
        ++chunks;
      }
      prev = static_cast<long>(*pick);
      pos.erase(pick);
    }
    return chunks;
  }

  const Tokens& pred_;
  const Tokens& ref_;
  std::vector<int> pred_word_;
  std::vector<std::uint64_t> word_mask_;
  std::vector<int> quota_;
  std::vector<std::size_t> slot_ref_pos_;
  std::vector<std::vector<int>> remaining_;
  std::size_t matches_ = 0;
  bool too_large_ = false;
  bool overflow_ = false;
  std::unordered_map<Key, int, KeyHash> memo_;
};

}  // namespace

MeteorAlignment meteor_align(const Tokens& prediction, const Tokens& reference) {
  return ChunkSearch(prediction, reference).run();
}

double meteor(const Tokens& prediction, const Tokens& reference) {
  if (prediction.empty() || reference.empty()) return 0.0;
  const MeteorAlignment a = meteor_align(prediction, reference);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(prediction.size());
  const double r = m / static_cast<double>(reference.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return fmean * (1.0 - penalty);
}

double meteor_corpus(const std::vector<Tokens>& predictions, const std::vector<Tokens>& references) {
  if (predictions.size() != references.size()) throw ConfigError("meteor: prediction and reference counts differ");
  if (predictions.empty()) throw ConfigError("meteor needs at least one pair");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) total += meteor(predictions[i], references[i]);
  return total / static_cast<double>(predictions.size());
}

void TokenNll::add(long double nll) {
  // Neumaier compensated summation.
  const long double t = sum + nll;
  if (std::abs(sum) >= std::abs(nll)) carry += (sum - t) + nll;
  else carry += (nll - t) + sum;
  sum = t;
  ++tokens;
}

double TokenNll::perplexity() const {
  if (tokens == 0) throw ConfigError("perplexity over zero tokens");
  return static_cast<double>(std::exp(mean()));
}

namespace {

long double row_nll(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int label) {
  const long double mx = logits.maxCoeff();
  long double s = 0.0L;
  for (Eigen::Index c = 0; c < logits.size(); ++c) s += std::exp(static_cast<long double>(logits(c)) - mx);
  return mx + std::log(s) - static_cast<long double>(logits(label));
}

}  // namespace

TokenNll seq2seq_token_nll(const ModelParameters& params, const std::vector<Batch>& batches) {
  TokenNll acc;
  for (const auto& batch : batches) {
    Graph g(false);
    const IdMatrix in = batch.decoder_input();
    const IdMatrix target = batch.decoder_target();
    if (in.cols == 0) continue;
    const Mat logits = seq2seq_logits(g, params, batch.src, in).value();
    for (std::size_t k = 0; k < target.ids.size(); ++k)
      if (target.mask[k]) acc.add(row_nll(logits.row(static_cast<Eigen::Index>(k)), target.ids[k]));
  }
  return acc;
}

TokenNll lm_token_nll(const ModelParameters& params, const std::vector<IdMatrix>& sequences) {
  TokenNll acc;
  for (const auto& seq : sequences) {
    if (seq.cols < 2) continue;
    Batch b{seq, seq};
    const IdMatrix in = b.decoder_input();
    const IdMatrix target = b.decoder_target();
    Graph g(false);
    const Mat logits = lm_logits(g, params, in).value();
    for (std::size_t k = 0; k < target.ids.size(); ++k)
      if (target.mask[k]) acc.add(row_nll(logits.row(static_cast<Eigen::Index>(k)), target.ids[k]));
  }
  return acc;
}

double perplexity(const ModelParameters& params, const std::vector<Batch>& batches) {
  const TokenNll nll = seq2seq_token_nll(params, batches);
  if (nll.tokens == 0) throw ConfigError("perplexity over an empty dataset");
  return nll.perplexity();
}

double avg_sentence_length(const std::vector<Tokens>& predictions) {
  if (predictions.empty()) throw ConfigError("average length of an empty prediction list");
  double total = 0.0;
  for (const auto& p : predictions) total += static_cast<double>(p.size());
  return total / static_cast<double>(predictions.size());
}

PredictionSet teacher_forced_predictions(const ModelParameters& params, const std::vector<Batch>& batches) {
  std::vector<Eigen::RowVectorXd> rows;
  PredictionSet out;
  for (const auto& batch : batches) {
    Graph g(false);
    const IdMatrix in = batch.decoder_input();
    const IdMatrix target = batch.decoder_target();
    if (in.cols == 0) continue;
    const Mat logits = seq2seq_logits(g, params, batch.src, in).value();
    for (std::size_t k = 0; k < target.ids.size(); ++k) {
      if (!target.mask[k]) continue;
      rows.push_back(logits.row(static_cast<Eigen::Index>(k)));
      out.labels.push_back(target.ids[k]);
    }
  }
  out.logits.resize(static_cast<Eigen::Index>(rows.size()), params.config.vocab_size);
  for (std::size_t i = 0; i < rows.size(); ++i) out.logits.row(static_cast<Eigen::Index>(i)) = rows[i];
  return out;
}

void EvalReport::check_ranges() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(bleu1) || !in01(meteor) || !in01(ece) || !(perplexity >= 1.0) || !(avg_len >= 0.0))
    throw Error("evaluation metric outside its declared range");
}

nlohmann::json EvalReport::to_json() const {
  return {{"bleu1", bleu1},       {"meteor", meteor},   {"perplexity", perplexity},
          {"ece", ece},           {"avg_len", avg_len}, {"n_samples", n_samples},
          {"bleu1_per_sentence", bleu1_per_sentence}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.bleu1 = j.at("bleu1");
  r.meteor = j.at("meteor");
  r.perplexity = j.at("perplexity");
  r.ece = j.at("ece");
  r.avg_len = j.at("avg_len");
  r.n_samples = j.at("n_samples");
  r.bleu1_per_sentence = j.value("bleu1_per_sentence", std::vector<double>{});
  return r;
}

std::string EvalReport::markdown_row(const std::string& method, const std::string& model) const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << "| " << method << " | " << model << " | " << bleu1 << " | "
     << perplexity << " | " << meteor << " | " << ece << " |";
  return os.str();
}

std::string markdown_table_header() {
  return "| Method | Model | BLEU-1 | Perplexity | METEOR | ECE |\n|---|---|---|---|---|---|";
}

}  // namespace dialcal

namespace dialcal {

EvalReport evaluate_pairs(const ModelParameters& params, const Vocab& vocab, const std::vector<DialoguePair>& pairs,
                          std::size_t n_bins) {
  if (pairs.empty()) throw ConfigError("evaluation split is empty");
  const auto max_len = static_cast<std::size_t>(params.config.max_len);
  std::vector<Ids> srcs;
  std::vector<Tokens> refs;
  for (const auto& p : pairs) {
    srcs.push_back(encode_source(p, vocab, max_len));
    refs.push_back(tokenize(p.reply));
  }
  std::vector<Tokens> preds;
  for (const auto& ids : greedy_decode_batch(params, srcs, max_len)) preds.push_back(decode(ids, vocab));

  EvalReport r;
  r.n_samples = pairs.size();
  Bleu1 b = bleu1_detail(preds, refs);
  r.bleu1 = b.corpus;
  r.bleu1_per_sentence = std::move(b.per_sentence);
  r.meteor = meteor_corpus(preds, refs);
  r.avg_len = avg_sentence_length(preds);
  const std::vector<Batch> batches = make_batches(pairs, vocab, 16, max_len);
  r.perplexity = perplexity(params, batches);
  r.ece = ece(teacher_forced_predictions(params, batches), 1.0, n_bins).ece;
  return r;
}

}  // namespace dialcal
