#include "dialcal/model.hpp"

#include <algorithm>

namespace dialcal {

void ModelConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("vocab_size must be >= 5");
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_ffn < 1 || max_len < 2)
    throw ConfigError("model dimensions must be positive (max_len >= 2)");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model}, {"n_heads", n_heads}, {"n_layers", n_layers},
          {"d_ffn", d_ffn},           {"max_len", max_len}, {"dropout", dropout}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  c.max_len = j.value("max_len", c.max_len);
  c.dropout = j.value("dropout", c.dropout);
  return c;
}

std::string to_string(ModelKind kind) { return kind == ModelKind::kLm ? "lm" : "seq2seq"; }

const Mat& ModelParameters::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("missing tensor " + name);
  return it->second;
}

Mat& ModelParameters::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("missing tensor " + name);
  return it->second;
}

bool ModelParameters::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const auto& kv) { return kv.second.allFinite(); });
}

std::size_t ModelParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

void ModelParameters::round_to_checkpoint_precision() {
  for (auto& [name, t] : tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<double>(static_cast<float>(t.data()[i]));
}

namespace {

Mat random_matrix(Rng& rng, int rows, int cols, double stddev) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
  return m;
}

void add_linear(std::map<std::string, Mat>& t, Rng& rng, const std::string& prefix, int in, int out) {
  t[prefix + "w"] = random_matrix(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in)));
  t[prefix + "b"] = Mat::Zero(1, out);
}

void add_norm(std::map<std::string, Mat>& t, const std::string& prefix, int d) {
  t[prefix + "g"] = Mat::Ones(1, d);
  t[prefix + "b"] = Mat::Zero(1, d);
}

void add_attention(std::map<std::string, Mat>& t, Rng& rng, const std::string& prefix, int d) {
  for (const char* p : {"q.", "k.", "v.", "o."}) add_linear(t, rng, prefix + p, d, d);
}

void add_ffn(std::map<std::string, Mat>& t, Rng& rng, const std::string& prefix, int d, int f) {
  add_linear(t, rng, prefix + "1.", d, f);
  add_linear(t, rng, prefix + "2.", f, d);
}

std::string layer(const char* side, int l) { return std::string(side) + "." + std::to_string(l) + "."; }

struct Ctx {
  Graph& g;
  const ModelParameters& p;
  Rng* rng;

  Var param(const std::string& name) const { return g.parameter(name, p.at(name)); }
  Var drop(Var x) const { return rng ? dropout(x, p.config.dropout, *rng) : x; }

  Var linear(Var x, const std::string& prefix) const {
    return add_row(matmul(x, param(prefix + "w")), param(prefix + "b"));
  }
  Var norm(Var x, const std::string& prefix) const {
    return layer_norm(x, param(prefix + "g"), param(prefix + "b"));
  }
  Var attend(Var xq, Var xkv, const std::string& prefix, const AttentionShape& shape) const {
    Var q = linear(xq, prefix + "q.");
    Var k = linear(xkv, prefix + "k.");
    Var v = linear(xkv, prefix + "v.");
    return linear(attention(q, k, v, shape), prefix + "o.");
  }
  Var ffn(Var x, const std::string& prefix) const {
    return linear(relu(linear(x, prefix + "1.")), prefix + "2.");
  }
  Var embed(const std::string& table, const IdMatrix& ids) const {
    for (TokenId id : ids.ids)
      if (id < 0 || id >= p.config.vocab_size) throw ConfigError("token id out of range: " + std::to_string(id));
    const double s = std::sqrt(static_cast<double>(p.config.d_model));
    Var x = embedding(param(table), ids.ids, s);
    const Mat pe = positional_encoding(ids.cols, p.config.d_model);
    Mat pos(static_cast<Eigen::Index>(ids.rows * ids.cols), p.config.d_model);
    for (std::size_t r = 0; r < ids.rows; ++r)
      pos.middleRows(static_cast<Eigen::Index>(r * ids.cols), static_cast<Eigen::Index>(ids.cols)) = pe;
    return drop(add_constant(x, pos));
  }
};

// Encoder stack shared by the language model (causal) and the seq2seq encoder (bidirectional).
Var encoder_stack(const Ctx& c, const IdMatrix& ids, bool causal) {
  Var x = c.embed("enc.embed", ids);
  AttentionShape shape{ids.rows, ids.cols, ids.cols, static_cast<std::size_t>(c.p.config.n_heads), causal, ids.mask};
  for (int l = 0; l < c.p.config.n_layers; ++l) {
    const std::string pre = layer("enc", l);
    Var h = c.norm(x, pre + "ln1.");
    x = add(x, c.drop(c.attend(h, h, pre + "attn.", shape)));
    x = add(x, c.drop(c.ffn(c.norm(x, pre + "ln2."), pre + "ffn.")));
  }
  return c.norm(x, "enc.ln_f.");
}

void require_kind(const ModelParameters& p, ModelKind kind) {
  if (p.kind != kind) throw ConfigError("expected " + to_string(kind) + " parameters, got " + to_string(p.kind));
}

void check_length(std::size_t len, const ModelConfig& cfg, const char* what) {
  if (len > static_cast<std::size_t>(cfg.max_len))
    throw ConfigError(std::string(what) + " length " + std::to_string(len) + " exceeds max_len " +
                      std::to_string(cfg.max_len));
}

}  // namespace

Mat positional_encoding(std::size_t len, int d_model) {
  Mat pe(static_cast<Eigen::Index>(len), d_model);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / d_model);
      const double a = static_cast<double>(pos) * freq;
      pe(static_cast<Eigen::Index>(pos), i) = (i % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  }
  return pe;
}

ModelParameters init_params(const ModelConfig& config, std::uint64_t seed, ModelKind kind) {
  config.validate();
  ModelParameters p;
  p.config = config;
  p.kind = kind;
  Rng rng(seed);
  const int d = config.d_model, V = config.vocab_size, f = config.d_ffn;
  auto& t = p.tensors;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));

  t["enc.embed"] = random_matrix(rng, V, d, embed_std);
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string pre = layer("enc", l);
    add_norm(t, pre + "ln1.", d);
    add_attention(t, rng, pre + "attn.", d);
    add_norm(t, pre + "ln2.", d);
    add_ffn(t, rng, pre + "ffn.", d, f);
  }
  add_norm(t, "enc.ln_f.", d);

  if (kind == ModelKind::kSeq2Seq) {
    t["dec.embed"] = random_matrix(rng, V, d, embed_std);
    for (int l = 0; l < config.n_layers; ++l) {
      const std::string pre = layer("dec", l);
      add_norm(t, pre + "ln1.", d);
      add_attention(t, rng, pre + "self.", d);
      add_norm(t, pre + "ln2.", d);
      add_attention(t, rng, pre + "cross.", d);
      add_norm(t, pre + "ln3.", d);
      add_ffn(t, rng, pre + "ffn.", d, f);
    }
    add_norm(t, "dec.ln_f.", d);
  }
  add_linear(t, rng, "out.", d, V);
  return p;
}

Var lm_logits(Graph& g, const ModelParameters& params, const IdMatrix& ids, Rng* dropout_rng) {
  require_kind(params, ModelKind::kLm);
  check_length(ids.cols, params.config, "sequence");
  Ctx c{g, params, dropout_rng};
  return c.linear(encoder_stack(c, ids, true), "out.");
}

Var encode(Graph& g, const ModelParameters& params, const IdMatrix& src, Rng* dropout_rng) {
  require_kind(params, ModelKind::kSeq2Seq);
  if (src.cols == 0 || src.rows == 0) throw ConfigError("empty source sequence");
  for (std::size_t r = 0; r < src.rows; ++r)
    if (src.length(r) == 0) throw ConfigError("source row without any non-pad token");
  check_length(src.cols, params.config, "source");
  Ctx c{g, params, dropout_rng};
  return encoder_stack(c, src, false);
}

Var decode_logits(Graph& g, const ModelParameters& params, Var memory, const IdMatrix& src, const IdMatrix& tgt_in,
                  Rng* dropout_rng, bool last_only) {
  require_kind(params, ModelKind::kSeq2Seq);
  if (tgt_in.rows != src.rows) throw ConfigError("source and target batch sizes differ");
  if (tgt_in.cols == 0) throw ConfigError("empty target prefix");
  check_length(tgt_in.cols, params.config, "target");
  Ctx c{g, params, dropout_rng};
  const auto heads = static_cast<std::size_t>(params.config.n_heads);
  AttentionShape self_shape{tgt_in.rows, tgt_in.cols, tgt_in.cols, heads, true, tgt_in.mask};
  AttentionShape cross_shape{tgt_in.rows, tgt_in.cols, src.cols, heads, false, src.mask};
  Var x = c.embed("dec.embed", tgt_in);
  for (int l = 0; l < params.config.n_layers; ++l) {
    const std::string pre = layer("dec", l);
    Var h = c.norm(x, pre + "ln1.");
    x = add(x, c.drop(c.attend(h, h, pre + "self.", self_shape)));
    x = add(x, c.drop(c.attend(c.norm(x, pre + "ln2."), memory, pre + "cross.", cross_shape)));
    x = add(x, c.drop(c.ffn(c.norm(x, pre + "ln3."), pre + "ffn.")));
  }
  x = c.norm(x, "dec.ln_f.");
  if (last_only) {
    Mat pick = Mat::Zero(static_cast<Eigen::Index>(tgt_in.rows), x.rows());
    for (std::size_t r = 0; r < tgt_in.rows; ++r)
      pick(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r * tgt_in.cols + tgt_in.cols - 1)) = 1.0;
    x = matmul(g.constant(std::move(pick)), x);
  }
  return c.linear(x, "out.");
}

Var seq2seq_logits(Graph& g, const ModelParameters& params, const IdMatrix& src, const IdMatrix& tgt_in,
                   Rng* dropout_rng) {
  Var memory = encode(g, params, src, dropout_rng);
  return decode_logits(g, params, memory, src, tgt_in, dropout_rng);
}

namespace {

// Every id is treated as a real position (mask 1) except pads.
IdMatrix single_row(const Ids& ids) {
  IdMatrix m;
  m.rows = 1;
  m.cols = ids.size();
  m.ids = ids;
  m.mask.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) m.mask[i] = ids[i] != special::kPad;
  return m;
}

}  // namespace

Mat lm_forward(const ModelParameters& params, const Ids& ids) {
  Graph g(false);
  IdMatrix m = single_row(ids);
  std::fill(m.mask.begin(), m.mask.end(), 1);
  return lm_logits(g, params, m).value();
}

Mat seq2seq_forward(const ModelParameters& params, const Ids& src, const Ids& tgt_prefix) {
  if (src.empty()) throw ConfigError("empty source sequence");
  Graph g(false);
  IdMatrix s = single_row(src);
  IdMatrix t = single_row(tgt_prefix);
  std::fill(t.mask.begin(), t.mask.end(), 1);
  return seq2seq_logits(g, params, s, t).value();
}

ModelParameters transfer_encoder(const ModelParameters& lm, const ModelParameters& conv) {
  require_kind(lm, ModelKind::kLm);
  require_kind(conv, ModelKind::kSeq2Seq);
  const ModelConfig& a = lm.config;
  const ModelConfig& b = conv.config;
  if (a.vocab_size != b.vocab_size || a.d_model != b.d_model || a.n_heads != b.n_heads || a.n_layers != b.n_layers ||
      a.d_ffn != b.d_ffn)
    throw ConfigError("language model and conversational model architectures differ");
  if (lm.vocab_fingerprint != 0 && conv.vocab_fingerprint != 0 && lm.vocab_fingerprint != conv.vocab_fingerprint)
    throw ConfigError("language model and conversational model use different vocabularies");
  ModelParameters out = conv;
  for (const auto& [name, t] : lm.tensors) {
    if (name.rfind("enc.", 0) != 0) continue;
    Mat& dst = out.at(name);
    if (dst.rows() != t.rows() || dst.cols() != t.cols()) throw ConfigError("shape mismatch transferring " + name);
    dst = t;
  }
  return out;
}

namespace {

TokenId pick_next(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  TokenId best = special::kCount;
  for (Eigen::Index c = special::kCount + 1; c < logits.size(); ++c)
    if (logits(c) > logits(best)) best = static_cast<TokenId>(c);
  return logits(special::kEos) > logits(best) ? special::kEos : best;
}

}  // namespace

std::vector<Ids> greedy_decode_batch(const ModelParameters& params, const std::vector<Ids>& srcs,
                                     std::size_t max_len, std::size_t batch_size) {
  require_kind(params, ModelKind::kSeq2Seq);
  std::vector<Ids> out(srcs.size());
  const std::size_t limit = std::min(max_len, static_cast<std::size_t>(params.config.max_len));
  for (std::size_t start = 0; start < srcs.size(); start += batch_size) {
    const std::size_t end = std::min(srcs.size(), start + batch_size);
    std::vector<Ids> rows(srcs.begin() + static_cast<std::ptrdiff_t>(start),
                          srcs.begin() + static_cast<std::ptrdiff_t>(end));
    for (auto& r : rows) {
      if (r.empty()) throw ConfigError("empty source sequence");
      if (r.size() > static_cast<std::size_t>(params.config.max_len)) r.resize(params.config.max_len);
    }
    const IdMatrix src = IdMatrix::from_rows(rows);
    Mat memory;
    {
      Graph g(false);
      memory = encode(g, params, src).value();
    }
    std::vector<Ids> prefix(rows.size(), Ids{special::kBos});
    std::vector<bool> done(rows.size(), false);
    std::size_t n_done = 0;
    for (std::size_t step = 0; step < limit && n_done < rows.size(); ++step) {
      const IdMatrix tgt = IdMatrix::from_rows(prefix);
      // A fresh tape per step keeps memory flat; earlier steps are never revisited.
      Graph g(false);
      const Mat logits = decode_logits(g, params, g.constant(memory), src, tgt, nullptr, true).value();
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const TokenId next = done[r] ? special::kEos : pick_next(logits.row(static_cast<Eigen::Index>(r)));
        if (!done[r] && next == special::kEos) {
          done[r] = true;
          ++n_done;
        }
        prefix[r].push_back(next);
      }
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Ids& res = out[start + r];
      for (std::size_t i = 1; i < prefix[r].size() && prefix[r][i] != special::kEos; ++i) res.push_back(prefix[r][i]);
    }
  }
  return out;
}

Ids greedy_decode(const ModelParameters& params, const Ids& src, std::size_t max_len) {
  return greedy_decode_batch(params, {src}, max_len, 1).front();
}

}  // namespace dialcal
