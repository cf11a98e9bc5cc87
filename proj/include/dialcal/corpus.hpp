#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dialcal/common.hpp"

namespace dialcal {

using TokenId = std::int32_t;
using Tokens = std::vector<std::string>;
using Ids = std::vector<TokenId>;

/// Reserved ids shared by every module: loss masking and decoding rely on them.
namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kCount = 4;
}  // namespace special

inline bool is_special(TokenId id) { return id >= 0 && id < special::kCount; }

struct DialoguePair {
  std::string query;
  std::string reply;

  friend bool operator==(const DialoguePair&, const DialoguePair&) = default;
};

/// Bidirectional token <-> id map. Ids are dense and ids 0..3 are the specials.
class Vocab {
 public:
  Vocab();

  /// Appends a token if not present; returns its id.
  TokenId add(const std::string& token);

  TokenId id(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// FNV-1a over the ordered token list; used to bind checkpoints to a vocabulary.
  std::uint64_t fingerprint() const;

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.id_to_token_ == b.id_to_token_; }

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Row-major B x S id matrix with a parallel non-pad mask.
struct IdMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;

  TokenId at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  bool valid(std::size_t r, std::size_t c) const { return mask[r * cols + c] != 0; }
  std::size_t length(std::size_t r) const;
  Ids row(std::size_t r) const;  // non-pad prefix

  static IdMatrix from_rows(const std::vector<Ids>& rows);
};

/// Padded batch. `tgt` holds bos + reply + eos; the decoder reads tgt[:-1] and predicts tgt[1:].
struct Batch {
  IdMatrix src;
  IdMatrix tgt;

  std::size_t size() const { return src.rows; }
  IdMatrix decoder_input() const;
  IdMatrix decoder_target() const;
};

/// Lowercases ASCII, splits on whitespace and isolates every ASCII punctuation character.
Tokens tokenize(std::string_view text);

std::string join_tokens(const Tokens& tokens);

Vocab build_vocab(const std::vector<DialoguePair>& pairs, int min_freq = 1);

Ids encode(const Tokens& tokens, const Vocab& vocab, bool add_bos_eos);
Tokens decode(const Ids& ids, const Vocab& vocab);

/// Deterministic Fisher-Yates shuffle then cut at floor(n * train_fraction).
std::pair<std::vector<DialoguePair>, std::vector<DialoguePair>> split_dataset(
    const std::vector<DialoguePair>& pairs, double train_fraction, std::uint64_t seed);

Ids encode_source(const DialoguePair& pair, const Vocab& vocab, std::size_t max_len);
Ids encode_target(const DialoguePair& pair, const Vocab& vocab, std::size_t max_len);

std::vector<Batch> make_batches(const std::vector<DialoguePair>& pairs, const Vocab& vocab,
                                std::size_t batch_size, std::size_t max_len);

std::vector<DialoguePair> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<DialoguePair>& pairs);

}  // namespace dialcal
