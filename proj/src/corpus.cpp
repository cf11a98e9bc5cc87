#include "dialcal/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dialcal/common.hpp"

namespace dialcal {

namespace {

const char* const kSpecialTokens[special::kCount] = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c); }
bool is_ascii_space(unsigned char c) { return c < 128 && std::isspace(c); }

}  // namespace

Vocab::Vocab() {
  for (const char* tok : kSpecialTokens) add(tok);
}

TokenId Vocab::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const auto id = static_cast<TokenId>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(token);
  return id;
}

TokenId Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? special::kUnk : it->second;
}

bool Vocab::contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw Error("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& tok : id_to_token_) {
    for (unsigned char c : tok) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0xFF;  // separator
    h *= 1099511628211ULL;
  }
  return h;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocab file " + path.string());
  for (const auto& tok : id_to_token_) out << tok << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read vocab file " + path.string());
  Vocab vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (line_no < special::kCount) {
      if (line != kSpecialTokens[line_no])
        throw ConfigError("vocab file " + path.string() + ": special token expected on line " +
                          std::to_string(line_no + 1));
    } else {
      if (vocab.contains(line)) throw ConfigError("vocab file " + path.string() + ": duplicate token '" + line + "'");
      vocab.add(line);
    }
    ++line_no;
  }
  if (line_no < special::kCount) throw ConfigError("vocab file " + path.string() + " is truncated");
  return vocab;
}

std::size_t IdMatrix::length(std::size_t r) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < cols; ++c) n += mask[r * cols + c];
  return n;
}

Ids IdMatrix::row(std::size_t r) const {
  Ids out;
  for (std::size_t c = 0; c < cols && valid(r, c); ++c) out.push_back(at(r, c));
  return out;
}

IdMatrix IdMatrix::from_rows(const std::vector<Ids>& rows) {
  IdMatrix m;
  m.rows = rows.size();
  for (const auto& r : rows) m.cols = std::max(m.cols, r.size());
  m.ids.assign(m.rows * m.cols, special::kPad);
  m.mask.assign(m.rows * m.cols, 0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m.ids[r * m.cols + c] = rows[r][c];
      m.mask[r * m.cols + c] = 1;
    }
  }
  return m;
}

namespace {

// Drops either the last (offset 0) or first (offset 1) token of every row; column count is tgt.cols - 1.
IdMatrix shifted(const IdMatrix& m, std::size_t offset) {
  IdMatrix out;
  out.rows = m.rows;
  out.cols = m.cols == 0 ? 0 : m.cols - 1;
  out.ids.assign(out.rows * out.cols, special::kPad);
  out.mask.assign(out.rows * out.cols, 0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const std::size_t len = m.length(r);
    for (std::size_t c = 0; c + 1 < len; ++c) {
      out.ids[r * out.cols + c] = m.at(r, c + offset);
      out.mask[r * out.cols + c] = 1;
    }
  }
  return out;
}

}  // namespace

IdMatrix Batch::decoder_input() const { return shifted(tgt, 0); }
IdMatrix Batch::decoder_target() const { return shifted(tgt, 1); }

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_ascii_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Vocab build_vocab(const std::vector<DialoguePair>& pairs, int min_freq) {
  if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
  std::map<std::string, long> counts;
  for (const auto& p : pairs) {
    for (auto& t : tokenize(p.query)) ++counts[t];
    for (auto& t : tokenize(p.reply)) ++counts[t];
  }
  std::vector<std::pair<std::string, long>> ordered(counts.begin(), counts.end());
  // std::map already yields lexicographic order; a stable sort keeps it as the tie-break.
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  for (const auto& [tok, n] : ordered)
    if (n >= min_freq) vocab.add(tok);
  return vocab;
}

Ids encode(const Tokens& tokens, const Vocab& vocab, bool add_bos_eos) {
  Ids ids;
  ids.reserve(tokens.size() + 2);
  if (add_bos_eos) ids.push_back(special::kBos);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  if (add_bos_eos) ids.push_back(special::kEos);
  return ids;
}

Tokens decode(const Ids& ids, const Vocab& vocab) {
  Tokens out;
  for (TokenId id : ids)
    if (!is_special(id)) out.push_back(vocab.token(id));
  return out;
}

std::pair<std::vector<DialoguePair>, std::vector<DialoguePair>> split_dataset(
    const std::vector<DialoguePair>& pairs, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must lie strictly between 0 and 1");
  const std::size_t n = pairs.size();
  if (n < 2) throw ConfigError("need at least 2 pairs to form train and validation splits");
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
  if (n_train == 0 || n_train == n)
    throw ConfigError("train_fraction " + std::to_string(train_fraction) + " leaves an empty split for " +
                      std::to_string(n) + " pairs");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  std::vector<DialoguePair> train, val;
  train.reserve(n_train);
  val.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? train : val).push_back(pairs[order[i]]);
  return {std::move(train), std::move(val)};
}

Ids encode_source(const DialoguePair& pair, const Vocab& vocab, std::size_t max_len) {
  Ids ids = encode(tokenize(pair.query), vocab, false);
  if (ids.size() > max_len) ids.resize(max_len);
  return ids;
}

Ids encode_target(const DialoguePair& pair, const Vocab& vocab, std::size_t max_len) {
  Ids ids = encode(tokenize(pair.reply), vocab, true);
  if (ids.size() > max_len) ids.resize(max_len);
  return ids;
}

std::vector<Batch> make_batches(const std::vector<DialoguePair>& pairs, const Vocab& vocab,
                                std::size_t batch_size, std::size_t max_len) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const std::size_t end = std::min(pairs.size(), start + batch_size);
    std::vector<Ids> src, tgt;
    for (std::size_t i = start; i < end; ++i) {
      src.push_back(encode_source(pairs[i], vocab, max_len));
      tgt.push_back(encode_target(pairs[i], vocab, max_len));
    }
    batches.push_back(Batch{IdMatrix::from_rows(src), IdMatrix::from_rows(tgt)});
  }
  return batches;
}

std::vector<DialoguePair> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read corpus " + path.string());
  std::vector<DialoguePair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(where + ": invalid JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("query") || !obj.contains("reply") || !obj["query"].is_string() ||
        !obj["reply"].is_string())
      throw ConfigError(where + ": expected {\"query\": string, \"reply\": string}");
    DialoguePair p{obj["query"].get<std::string>(), obj["reply"].get<std::string>()};
    if (tokenize(p.query).empty() || tokenize(p.reply).empty())
      throw ConfigError(where + ": query and reply must be non-empty");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<DialoguePair>& pairs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus " + path.string());
  for (const auto& p : pairs) out << nlohmann::json{{"query", p.query}, {"reply", p.reply}}.dump() << '\n';
}

}  // namespace dialcal
