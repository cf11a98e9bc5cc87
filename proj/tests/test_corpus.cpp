#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "dialcal/corpus.hpp"

using namespace dialcal;

namespace {

std::vector<DialoguePair> numbered(std::size_t n) {
  std::vector<DialoguePair> pairs;
  for (std::size_t i = 0; i < n; ++i) pairs.push_back({"q " + std::to_string(i), "r " + std::to_string(i)});
  return pairs;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(Tokenize, SplitsPunctuationAndLowercases) {
  EXPECT_EQ(tokenize("Hello, doctor!"), (Tokens{"hello", ",", "doctor", "!"}));
  EXPECT_EQ(tokenize("Back pain"), (Tokens{"back", "pain"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize("   \t\n").empty());
  EXPECT_EQ(tokenize("it's 5pm...ok"), (Tokens{"it", "'", "s", "5pm", ".", ".", ".", "ok"}));
}

TEST(Tokenize, IdempotentOnJoinedTokens) {
  for (const char* s : {"Hello, doctor!", "What's up?? (really)", "a-b c.d", "ÄÖ caf\xc3\xa9 ok"}) {
    const Tokens once = tokenize(s);
    EXPECT_EQ(tokenize(join_tokens(once)), once) << s;
  }
}

TEST(BuildVocab, EmptyCorpusHasOnlySpecials) {
  const Vocab v = build_vocab({}, 1);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.token(special::kPad), "<pad>");
  EXPECT_EQ(v.token(special::kBos), "<bos>");
  EXPECT_EQ(v.token(special::kEos), "<eos>");
  EXPECT_EQ(v.token(special::kUnk), "<unk>");
}

TEST(BuildVocab, FrequencyOrderAndMinFreq) {
  const std::vector<DialoguePair> pairs = {{"a", "b a"}};
  const Vocab v = build_vocab(pairs, 1);
  EXPECT_EQ(v.id("a"), 4);
  EXPECT_EQ(v.id("b"), 5);
  const Vocab v2 = build_vocab(pairs, 2);
  EXPECT_EQ(v2.size(), 5u);
  EXPECT_TRUE(v2.contains("a"));
  EXPECT_FALSE(v2.contains("b"));
  EXPECT_THROW(build_vocab(pairs, 0), ConfigError);
}

TEST(BuildVocab, TiesBreakLexicographically) {
  const Vocab v = build_vocab({{"zeta beta", "alpha"}}, 1);
  EXPECT_EQ(v.token(4), "alpha");
  EXPECT_EQ(v.token(5), "beta");
  EXPECT_EQ(v.token(6), "zeta");
}

TEST(Vocab, BijectionAndFileRoundTrip) {
  const Vocab v = build_vocab({{"the cat sat", "on the mat ."}}, 1);
  for (std::size_t id = 0; id < v.size(); ++id) EXPECT_EQ(v.id(v.token(static_cast<TokenId>(id))), static_cast<TokenId>(id));
  const auto path = temp_file("dialcal_vocab.txt");
  v.save(path);
  const Vocab w = Vocab::load(path);
  EXPECT_TRUE(v == w);
  EXPECT_EQ(v.fingerprint(), w.fingerprint());
  std::filesystem::remove(path);
}

TEST(Vocab, LoadRejectsBadSpecialsAndDuplicates) {
  const auto path = temp_file("dialcal_bad_vocab.txt");
  std::ofstream(path) << "<pad>\n<eos>\n<bos>\n<unk>\n";
  EXPECT_THROW(Vocab::load(path), Error);
  std::ofstream(path) << "<pad>\n<bos>\n<eos>\n<unk>\nx\nx\n";
  EXPECT_THROW(Vocab::load(path), Error);
  std::filesystem::remove(path);
}

TEST(Encode, BosEosAndUnknown) {
  const Vocab v = build_vocab({{"back pain", "rest"}}, 1);
  EXPECT_EQ(encode({"back", "pain"}, v, true), (Ids{1, v.id("back"), v.id("pain"), 2}));
  EXPECT_EQ(encode({"back", "knee"}, v, false), (Ids{v.id("back"), special::kUnk}));
}

TEST(Encode, RoundTripOnRandomSentences) {
  const Vocab v = build_vocab({{"a b c d e f g", "h i j k l m n"}}, 1);
  Rng rng(1);
  for (int s = 0; s < 100; ++s) {
    Tokens t;
    const std::size_t len = rng.below(12);
    for (std::size_t i = 0; i < len; ++i) t.push_back(v.token(static_cast<TokenId>(4 + rng.below(v.size() - 4))));
    EXPECT_EQ(decode(encode(t, v, true), v), t);
  }
}

TEST(Split, SizesFollowFloor) {
  auto [tr, va] = split_dataset(numbered(10), 0.8, 1);
  EXPECT_EQ(tr.size(), 8u);
  EXPECT_EQ(va.size(), 2u);
  auto [tr2, va2] = split_dataset(numbered(1200), 0.8, 1);
  EXPECT_EQ(tr2.size(), 960u);
  EXPECT_EQ(va2.size(), 240u);
}

TEST(Split, DeterministicPartition) {
  const auto pairs = numbered(37);
  auto a = split_dataset(pairs, 0.8, 5);
  auto b = split_dataset(pairs, 0.8, 5);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  auto c = split_dataset(pairs, 0.8, 6);
  EXPECT_NE(a.first, c.first);

  std::multiset<std::string> all, got;
  for (const auto& p : pairs) all.insert(p.query);
  for (const auto& p : a.first) got.insert(p.query);
  for (const auto& p : a.second) {
    EXPECT_EQ(std::count_if(a.first.begin(), a.first.end(), [&](const DialoguePair& q) { return q == p; }), 0);
    got.insert(p.query);
  }
  EXPECT_EQ(all, got);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_dataset(numbered(1), 0.5, 1), ConfigError);
  EXPECT_THROW(split_dataset(numbered(10), 0.0, 1), ConfigError);
  EXPECT_THROW(split_dataset(numbered(10), 1.0, 1), ConfigError);
  EXPECT_THROW(split_dataset(numbered(3), 0.1, 1), ConfigError);  // empty train split
}

TEST(Batches, SizesAndMasks) {
  const auto pairs = numbered(10);
  const Vocab v = build_vocab(pairs, 1);
  const auto batches = make_batches(pairs, v, 4, 64);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 4u);
  EXPECT_EQ(batches[1].size(), 4u);
  EXPECT_EQ(batches[2].size(), 2u);
  for (const auto& b : batches)
    for (const IdMatrix* m : {&b.src, &b.tgt})
      for (std::size_t k = 0; k < m->ids.size(); ++k) EXPECT_EQ(m->ids[k] == special::kPad, m->mask[k] == 0);
}

TEST(Batches, ReconstructTheEncodedCorpus) {
  const std::vector<DialoguePair> pairs = {
      {"one two three", "four"}, {"five", "six seven eight nine"}, {"ten eleven", "twelve thirteen"}};
  const Vocab v = build_vocab(pairs, 1);
  const auto batches = make_batches(pairs, v, 2, 64);
  std::size_t i = 0;
  for (const auto& b : batches)
    for (std::size_t r = 0; r < b.size(); ++r, ++i) {
      EXPECT_EQ(b.src.row(r), encode(tokenize(pairs[i].query), v, false));
      EXPECT_EQ(b.tgt.row(r), encode(tokenize(pairs[i].reply), v, true));
      EXPECT_EQ(b.src.length(r), tokenize(pairs[i].query).size());
      EXPECT_EQ(decode(b.src.row(r), v), tokenize(pairs[i].query));
    }
}

TEST(Batches, TruncatesToMaxLen) {
  const std::vector<DialoguePair> pairs = {{"a b c d e f", "a b c d e f"}};
  const Vocab v = build_vocab(pairs, 1);
  const auto b = make_batches(pairs, v, 1, 4).front();
  EXPECT_EQ(b.src.cols, 4u);
  EXPECT_EQ(b.tgt.cols, 4u);
  EXPECT_EQ(b.tgt.at(0, 0), special::kBos);
  EXPECT_THROW(make_batches(pairs, v, 0, 4), ConfigError);
}

TEST(Batches, DecoderInputAndTargetAreShifted) {
  const std::vector<DialoguePair> pairs = {{"x", "a b"}, {"y", "c"}};
  const Vocab v = build_vocab(pairs, 1);
  const auto b = make_batches(pairs, v, 2, 64).front();
  const IdMatrix in = b.decoder_input(), out = b.decoder_target();
  EXPECT_EQ(in.row(0), (Ids{1, v.id("a"), v.id("b")}));
  EXPECT_EQ(out.row(0), (Ids{v.id("a"), v.id("b"), 2}));
  EXPECT_EQ(in.row(1), (Ids{1, v.id("c")}));
  EXPECT_EQ(out.row(1), (Ids{v.id("c"), 2}));
}

TEST(Jsonl, RoundTripAndErrors) {
  const auto path = temp_file("dialcal_corpus.jsonl");
  const std::vector<DialoguePair> pairs = {{"Hi \"there\"", "ok"}, {"line\nbreak", "caf\xc3\xa9"}};
  write_jsonl(path, pairs);
  EXPECT_EQ(read_jsonl(path), pairs);
  std::ofstream(path) << "{\"query\": \"a\", \"reply\": \"b\"}\n{\"query\": \"\", \"reply\": \"b\"}\n";
  try {
    read_jsonl(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
  std::ofstream(path) << "not json\n";
  EXPECT_THROW(read_jsonl(path), Error);
  std::filesystem::remove(path);
  EXPECT_THROW(read_jsonl(path), Error);
}
