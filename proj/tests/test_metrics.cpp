#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "dialcal/losses.hpp"
#include "dialcal/metrics.hpp"
#include "oracles.hpp"

using namespace dialcal;

namespace {

Tokens random_sentence(Rng& rng, std::size_t max_len, std::size_t alphabet) {
  Tokens t(rng.below(max_len + 1));
  for (auto& w : t) w = std::string(1, static_cast<char>('a' + rng.below(alphabet)));
  return t;
}

// Every injective exact-match alignment; keeps the most matches, then the fewest chunks.
std::pair<std::size_t, std::size_t> brute_alignment(const Tokens& p, const Tokens& r) {
  std::size_t best_m = 0, best_c = 0;
  std::vector<int> map(p.size(), -1);
  std::vector<bool> used(r.size(), false);
  std::function<void(std::size_t)> go = [&](std::size_t i) {
    if (i == p.size()) {
      std::size_t m = 0, c = 0;
      int prev = -2;
      for (std::size_t k = 0; k < p.size(); ++k) {
        if (map[k] < 0) {
          prev = -2;
          continue;
        }
        ++m;
        if (map[k] != prev + 1 || prev < 0) ++c;
        prev = map[k];
      }
      if (m > best_m || (m == best_m && c < best_c)) best_m = m, best_c = c;
      return;
    }
    go(i + 1);
    for (std::size_t j = 0; j < r.size(); ++j)
      if (!used[j] && r[j] == p[i]) {
        used[j] = true;
        map[i] = static_cast<int>(j);
        go(i + 1);
        map[i] = -1;
        used[j] = false;
      }
  };
  go(0);
  return {best_m, best_c};
}

double meteor_formula(std::size_t m, std::size_t chunks, std::size_t lp, std::size_t lr) {
  if (m == 0) return 0.0;
  const double P = static_cast<double>(m) / lp, R = static_cast<double>(m) / lr;
  const double f = 10 * P * R / (R + 9 * P);
  return f * (1 - 0.5 * std::pow(static_cast<double>(chunks) / m, 3));
}

std::vector<DialoguePair> tiny_pairs() {
  return {{"back pain again", "rest and stretch"}, {"knee hurts", "ice the knee"}, {"neck stiff", "gentle stretch"}};
}

}  // namespace

TEST(Bleu1, ClippedPrecisionExample) {
  EXPECT_NEAR(bleu1({{"the", "the", "the"}}, {{"the", "cat"}}), 1.0 / 3, 1e-9);
}

TEST(Bleu1, IdentityDisjointAndEmpty) {
  const std::vector<Tokens> refs = {{"a", "b", "c"}, {"d"}};
  EXPECT_DOUBLE_EQ(bleu1(refs, refs), 1.0);
  EXPECT_DOUBLE_EQ(bleu1({{"x", "y"}, {"z"}}, refs), 0.0);
  EXPECT_DOUBLE_EQ(bleu1({{}, {}}, refs), 0.0);
  EXPECT_THROW(bleu1({{"a"}}, refs), ConfigError);
  EXPECT_THROW(bleu1({}, {}), ConfigError);
}

TEST(Bleu1, BrevityPenaltyApplies) {
  EXPECT_NEAR(bleu1({{"a"}}, {{"a", "b"}}), std::exp(1.0 - 2.0), 1e-12);
}

TEST(Bleu1, MatchesCountingOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    std::vector<Tokens> preds, refs;
    for (std::size_t i = 0; i < n; ++i) {
      preds.push_back(random_sentence(rng, 8, 5));
      refs.push_back(random_sentence(rng, 8, 5));
    }
    const double b = bleu1(preds, refs);
    EXPECT_NEAR(b, oracle::bleu1(preds, refs), 1e-12);
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::vector<Tokens> p2, r2;
    for (auto k : perm) p2.push_back(preds[k]), r2.push_back(refs[k]);
    EXPECT_NEAR(bleu1(p2, r2), b, 1e-12);
  }
}

TEST(Meteor, QuotedExamples) {
  EXPECT_NEAR(meteor({"ok"}, {"ok"}), 0.5, 1e-9);
  Tokens ten;
  for (int i = 0; i < 10; ++i) ten.push_back("w" + std::to_string(i));
  EXPECT_NEAR(meteor(ten, ten), 0.9995, 1e-9);
  EXPECT_EQ(meteor({"a", "b"}, {"c"}), 0.0);
  EXPECT_EQ(meteor({}, {"c"}), 0.0);
  EXPECT_EQ(meteor({"c"}, {}), 0.0);
}

TEST(Meteor, AlignmentMatchesExhaustiveSearch) {
  Rng rng(2);
  for (int trial = 0; trial < 400; ++trial) {
    const Tokens p = random_sentence(rng, 7, 3), r = random_sentence(rng, 7, 3);
    const auto [m, c] = brute_alignment(p, r);
    const MeteorAlignment a = meteor_align(p, r);
    EXPECT_TRUE(a.exact);
    EXPECT_EQ(a.matches, m);
    EXPECT_EQ(a.chunks, c);
    const double s = meteor(p, r);
    EXPECT_NEAR(s, meteor_formula(m, c, p.size(), r.size()), 1e-12);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
    EXPECT_EQ(s == 0.0, m == 0);
  }
}

TEST(Meteor, CorpusIsMeanOfSentences) {
  const std::vector<Tokens> p = {{"a", "b"}, {"c"}}, r = {{"b", "a"}, {"c"}};
  EXPECT_NEAR(meteor_corpus(p, r), (meteor(p[0], r[0]) + meteor(p[1], r[1])) / 2, 1e-15);
  EXPECT_THROW(meteor_corpus(p, {{"a"}}), ConfigError);
}

TEST(Perplexity, ZeroedOutputIsExactlyVocabSize) {
  for (int extra : {3, 33, 996}) {
    std::vector<DialoguePair> pairs = tiny_pairs();
    for (int i = 0; i < extra; ++i) pairs.push_back({"w" + std::to_string(i), "ok"});
    const Vocab vocab = build_vocab(pairs, 1);
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(vocab.size());
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.d_ffn = 16;
    ModelParameters params = init_params(cfg, 3, ModelKind::kSeq2Seq);
    params.at("out.w").setZero();
    params.at("out.b").setZero();
    EXPECT_EQ(perplexity(params, make_batches(pairs, vocab, 4, cfg.max_len)), static_cast<double>(vocab.size()));
  }
}

TEST(Perplexity, EqualsExpOfCrossEntropy) {
  const auto pairs = tiny_pairs();
  const Vocab vocab = build_vocab(pairs, 1);
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(vocab.size());
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ffn = 16;
  const ModelParameters params = init_params(cfg, 4, ModelKind::kSeq2Seq);
  const auto batches = make_batches(pairs, vocab, 2, cfg.max_len);
  const PredictionSet tf = teacher_forced_predictions(params, batches);
  const PadMask mask(tf.size(), 1);
  const double ce = cross_entropy(tf.logits, TargetDistribution::one_hot(tf.labels, tf.logits.cols()), mask).value;
  EXPECT_NEAR(perplexity(params, batches), std::exp(ce), 1e-9 * std::exp(ce));
}

TEST(Perplexity, ArithmeticCases) {
  TokenNll perfect;
  perfect.add(0.0L);
  perfect.add(0.0L);
  EXPECT_EQ(perfect.perplexity(), 1.0);
  TokenNll halves;
  halves.add(std::log(2.0L));
  halves.add(std::log(2.0L));
  EXPECT_NEAR(halves.perplexity(), 2.0, 1e-15);
  TokenNll none;
  EXPECT_THROW(none.perplexity(), ConfigError);
}

TEST(AvgLength, Examples) {
  EXPECT_DOUBLE_EQ(avg_sentence_length({{"a", "b", "c"}, {"a", "b", "c", "d", "e"}}), 4.0);
  EXPECT_DOUBLE_EQ(avg_sentence_length({{}}), 0.0);
  EXPECT_DOUBLE_EQ(avg_sentence_length({{"x", "y"}, {"z", "w"}}), 2.0);
  EXPECT_THROW(avg_sentence_length({}), ConfigError);
}

TEST(EvalReport, RangesJsonAndMarkdown) {
  EvalReport r;
  r.bleu1 = 0.5;
  r.meteor = 0.25;
  r.perplexity = 12.5;
  r.ece = 0.1;
  r.avg_len = 3.5;
  r.n_samples = 7;
  r.check_ranges();
  const EvalReport back = EvalReport::from_json(r.to_json());
  EXPECT_EQ(back.bleu1, r.bleu1);
  EXPECT_EQ(back.perplexity, r.perplexity);
  EXPECT_EQ(back.n_samples, r.n_samples);
  const std::string row = r.markdown_row("Baseline", "Transformer");
  EXPECT_EQ(std::count(row.begin(), row.end(), '|'), 7);
  const std::string header = markdown_table_header();
  EXPECT_NE(header.find("| BLEU-1 | Perplexity | METEOR | ECE |"), std::string::npos);
  r.bleu1 = 1.5;
  EXPECT_THROW(r.check_ranges(), Error);
  r.bleu1 = 0.5;
  r.perplexity = 0.5;
  EXPECT_THROW(r.check_ranges(), Error);
}

TEST(Evaluate, DeterministicAndInRange) {
  const auto pairs = tiny_pairs();
  const Vocab vocab = build_vocab(pairs, 1);
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(vocab.size());
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ffn = 16;
  cfg.max_len = 12;
  ModelParameters params = init_params(cfg, 5, ModelKind::kSeq2Seq);
  params.vocab_fingerprint = vocab.fingerprint();
  const EvalReport a = evaluate_pairs(params, vocab, pairs), b = evaluate_pairs(params, vocab, pairs);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_EQ(a.n_samples, pairs.size());
  a.check_ranges();
  EXPECT_EQ(a.bleu1_per_sentence.size(), pairs.size());
}
