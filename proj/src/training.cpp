#include "dialcal/training.hpp"

#include <limits>

#include "dialcal/metrics.hpp"

namespace dialcal {

std::string to_string(Objective o) { return o == Objective::kCe ? "ce" : "ls"; }

Objective objective_from_string(const std::string& s) {
  if (s == "ce") return Objective::kCe;
  if (s == "ls") return Objective::kLs;
  throw ConfigError("unknown objective '" + s + "' (expected ce or ls)");
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"train_loss", train_loss}, {"val_loss", val_loss}};
  j["val_bleu1"] = std::isnan(val_bleu1) ? nlohmann::json(nullptr) : nlohmann::json(val_bleu1);
  for (const auto& [name, v] : components) j[name] = v;
  return j;
}

TargetDistribution batch_targets(const IdMatrix& target, int vocab_size, Objective objective, double alpha) {
  std::vector<int> labels(target.ids.size());
  for (std::size_t k = 0; k < labels.size(); ++k) labels[k] = target.mask[k] ? target.ids[k] : -1;
  TargetDistribution t = TargetDistribution::one_hot(labels, vocab_size);
  return objective == Objective::kLs ? smooth_targets(t, alpha) : t;
}

PadMask target_mask(const IdMatrix& target) { return target.mask; }

ObjectiveFn ce_objective(int vocab_size, Objective objective, double alpha) {
  if (objective == Objective::kLs && !(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("label smoothing alpha must lie in [0, 1]");
  return [=](const Mat& logits, const Batch& batch) {
    const IdMatrix target = batch.decoder_target();
    StepLoss s;
    s.loss = cross_entropy(logits, batch_targets(target, vocab_size, objective, alpha), target.mask);
    return s;
  };
}

ObjectiveFn ts_objective(int vocab_size, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  return [=](const Mat& logits, const Batch& batch) {
    const IdMatrix target = batch.decoder_target();
    StepLoss s;
    s.loss = ts_cross_entropy(logits, batch_targets(target, vocab_size, Objective::kCe, 0.0), temperature,
                              target.mask);
    return s;
  };
}

std::vector<Tokens> references_of(const std::vector<DialoguePair>& pairs) {
  std::vector<Tokens> refs;
  refs.reserve(pairs.size());
  for (const auto& p : pairs) refs.push_back(tokenize(p.reply));
  return refs;
}

std::vector<Ids> sources_of(const std::vector<DialoguePair>& pairs, const Vocab& vocab, std::size_t max_len) {
  std::vector<Ids> srcs;
  srcs.reserve(pairs.size());
  for (const auto& p : pairs) srcs.push_back(encode_source(p, vocab, max_len));
  return srcs;
}

ValidationScore validate_seq2seq(const ModelParameters& params, const std::vector<DialoguePair>& val,
                                 const Vocab& vocab) {
  const auto max_len = static_cast<std::size_t>(params.config.max_len);
  ValidationScore s;
  s.loss = static_cast<double>(seq2seq_token_nll(params, make_batches(val, vocab, 16, max_len)).mean());
  const std::vector<Ids> decoded = greedy_decode_batch(params, sources_of(val, vocab, max_len), max_len);
  std::vector<Tokens> preds;
  preds.reserve(decoded.size());
  for (const auto& ids : decoded) preds.push_back(decode(ids, vocab));
  s.bleu1 = bleu1(preds, references_of(val));
  return s;
}

namespace {

template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i-- > 1;) std::swap(v[i], v[rng.below(i + 1)]);
}

void accumulate(std::vector<std::pair<std::string, double>>& sum, const std::vector<std::pair<std::string, double>>& add) {
  for (const auto& [name, v] : add) {
    auto it = std::find_if(sum.begin(), sum.end(), [&](const auto& kv) { return kv.first == name; });
    if (it == sum.end()) sum.emplace_back(name, v);
    else it->second += v;
  }
}

void check_split(const std::vector<DialoguePair>& train, const std::vector<DialoguePair>& val) {
  if (train.empty()) throw ConfigError("empty training split");
  if (val.empty()) throw ConfigError("empty validation split");
}

}  // namespace

FitResult fit_seq2seq(ModelParameters params, const std::vector<DialoguePair>& train,
                      const std::vector<DialoguePair>& val, const Vocab& vocab, const TrainOptions& opts,
                      const ObjectiveFn& objective) {
  check_split(train, val);
  if (params.kind != ModelKind::kSeq2Seq) throw ConfigError("fit_seq2seq needs seq2seq parameters");
  Rng rng(opts.seed);
  Adam adam(opts.adam);
  FitResult result;
  double best_bleu = -1.0;
  int since_best = 0;
  std::vector<DialoguePair> order = train;
  const auto max_len = static_cast<std::size_t>(params.config.max_len);

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    const std::vector<Batch> batches = make_batches(order, vocab, opts.batch_size, max_len);
    EpochRecord rec;
    rec.epoch = epoch;
    for (const auto& batch : batches) {
      Graph g;
      Var logits = seq2seq_logits(g, params, batch.src, batch.decoder_input(), &rng);
      StepLoss step = objective(logits.value(), batch);
      if (!std::isfinite(step.loss.value)) throw Error("non-finite training loss at epoch " + std::to_string(epoch));
      g.backward(logits, step.loss.grad);
      adam.step(params, g.parameter_gradients());
      rec.train_loss += step.loss.value;
      result.step_losses.push_back(step.loss.value);
      accumulate(rec.components, step.components);
    }
    const double nb = static_cast<double>(batches.size());
    rec.train_loss /= nb;
    for (auto& [name, v] : rec.components) v /= nb;

    const ValidationScore score = validate_seq2seq(params, val, vocab);
    rec.val_loss = score.loss;
    rec.val_bleu1 = score.bleu1;
    result.epochs.push_back(rec);
    if (score.bleu1 > best_bleu) {
      best_bleu = score.bleu1;
      result.best = params;
      result.best.round_to_checkpoint_precision();
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (score.bleu1 >= opts.target_bleu1) break;
    if (opts.patience > 0 && since_best >= opts.patience) break;
  }
  if (result.epochs.empty()) {
    result.best = params;
    result.best.round_to_checkpoint_precision();
  }
  return result;
}

Ids lm_sequence(const DialoguePair& pair, const Vocab& vocab, std::size_t max_len) {
  Tokens toks = tokenize(pair.query);
  const Tokens reply = tokenize(pair.reply);
  toks.insert(toks.end(), reply.begin(), reply.end());
  Ids ids = encode(toks, vocab, true);
  if (ids.size() > max_len + 1) ids.resize(max_len + 1);
  return ids;
}

namespace {

std::vector<IdMatrix> lm_batches(const std::vector<DialoguePair>& pairs, const Vocab& vocab, std::size_t batch_size,
                                 std::size_t max_len) {
  std::vector<IdMatrix> out;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    std::vector<Ids> rows;
    for (std::size_t i = start; i < std::min(pairs.size(), start + batch_size); ++i)
      rows.push_back(lm_sequence(pairs[i], vocab, max_len));
    out.push_back(IdMatrix::from_rows(rows));
  }
  return out;
}

}  // namespace

FitResult fit_lm(ModelParameters params, const std::vector<DialoguePair>& train, const std::vector<DialoguePair>& val,
                 const Vocab& vocab, const TrainOptions& opts, Objective objective, double alpha) {
  check_split(train, val);
  if (params.kind != ModelKind::kLm) throw ConfigError("fit_lm needs language-model parameters");
  Rng rng(opts.seed);
  Adam adam(opts.adam);
  FitResult result;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<DialoguePair> order = train;
  const auto max_len = static_cast<std::size_t>(params.config.max_len);
  const std::vector<IdMatrix> val_batches = lm_batches(val, vocab, 16, max_len);

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.val_bleu1 = std::numeric_limits<double>::quiet_NaN();
    const std::vector<IdMatrix> batches = lm_batches(order, vocab, opts.batch_size, max_len);
    for (const auto& seq : batches) {
      const Batch b{seq, seq};
      const IdMatrix in = b.decoder_input();
      const IdMatrix target = b.decoder_target();
      Graph g;
      Var logits = lm_logits(g, params, in, &rng);
      const LossValue loss =
          cross_entropy(logits.value(), batch_targets(target, params.config.vocab_size, objective, alpha), target.mask);
      if (!std::isfinite(loss.value)) throw Error("non-finite language-model loss at epoch " + std::to_string(epoch));
      g.backward(logits, loss.grad);
      adam.step(params, g.parameter_gradients());
      rec.train_loss += loss.value;
      result.step_losses.push_back(loss.value);
    }
    rec.train_loss /= static_cast<double>(batches.size());
    rec.val_loss = static_cast<double>(lm_token_nll(params, val_batches).mean());
    result.epochs.push_back(rec);
    if (rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      result.best = params;
      result.best.round_to_checkpoint_precision();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (opts.patience > 0 && ++since_best >= opts.patience) {
      break;
    }
  }
  if (result.epochs.empty()) {
    result.best = params;
    result.best.round_to_checkpoint_precision();
  }
  return result;
}

}  // namespace dialcal
