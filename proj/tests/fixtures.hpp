#pragma once

// Small shared corpora and model sizes that keep the training tests fast.

#include <vector>

#include "dialcal/corpus.hpp"
#include "dialcal/model.hpp"

namespace fixture {

inline std::vector<dialcal::DialoguePair> train_pairs() {
  return {{"back pain", "rest the back"}, {"knee pain", "ice the knee"},   {"neck stiff", "stretch the neck"},
          {"back stiff", "stretch the back"}, {"knee stiff", "stretch the knee"}, {"neck pain", "rest the neck"}};
}

inline std::vector<dialcal::DialoguePair> val_pairs() { return {{"back pain", "rest the back"}, {"neck stiff", "stretch the neck"}}; }

inline dialcal::Vocab vocab() { return dialcal::build_vocab(train_pairs(), 1); }

inline dialcal::ModelConfig tiny(const dialcal::Vocab& v) {
  dialcal::ModelConfig c;
  c.vocab_size = static_cast<int>(v.size());
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ffn = 16;
  c.max_len = 10;
  return c;
}

inline dialcal::ModelParameters seq2seq(const dialcal::Vocab& v, std::uint64_t seed = 3) {
  auto p = dialcal::init_params(tiny(v), seed, dialcal::ModelKind::kSeq2Seq);
  p.vocab_fingerprint = v.fingerprint();
  return p;
}

}  // namespace fixture
