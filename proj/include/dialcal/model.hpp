#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialcal/autograd.hpp"
#include "dialcal/common.hpp"
#include "dialcal/corpus.hpp"

namespace dialcal {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 2;
  int d_ffn = 256;
  int max_len = 64;
  double dropout = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ModelKind : std::uint8_t { kLm = 1, kSeq2Seq = 2 };

std::string to_string(ModelKind kind);

/// Named tensors of either the language model (encoder + output head) or the
/// encoder-decoder. Encoder tensors carry the "enc." prefix in both kinds.
struct ModelParameters {
  ModelConfig config;
  ModelKind kind = ModelKind::kSeq2Seq;
  std::map<std::string, Mat> tensors;
  /// Vocabulary the ids refer to; 0 when unbound.
  std::uint64_t vocab_fingerprint = 0;

  const Mat& at(const std::string& name) const;
  Mat& at(const std::string& name);
  bool all_finite() const;
  std::size_t parameter_count() const;

  /// Rounds every entry to the nearest float, the precision checkpoints store.
  void round_to_checkpoint_precision();
};

ModelParameters init_params(const ModelConfig& config, std::uint64_t seed, ModelKind kind);

/// Logits for a padded batch. `dropout_rng` enables training mode; nullptr means inference.
/// Rows are laid out batch-major: row b * cols + t.
Var lm_logits(Graph& g, const ModelParameters& params, const IdMatrix& ids, Rng* dropout_rng = nullptr);

/// Encoder memory for a padded source batch.
Var encode(Graph& g, const ModelParameters& params, const IdMatrix& src, Rng* dropout_rng = nullptr);

/// Decoder logits given encoder memory. When `last_only` is set only the final position of
/// every row is projected to the vocabulary (B rows instead of B*T).
Var decode_logits(Graph& g, const ModelParameters& params, Var memory, const IdMatrix& src, const IdMatrix& tgt_in,
                  Rng* dropout_rng = nullptr, bool last_only = false);

Var seq2seq_logits(Graph& g, const ModelParameters& params, const IdMatrix& src, const IdMatrix& tgt_in,
                   Rng* dropout_rng = nullptr);

/// Next-token logits for a single sequence (len x vocab), inference mode.
Mat lm_forward(const ModelParameters& params, const Ids& ids);

/// Decoder logits (len(tgt_prefix) x vocab) for one source, inference mode. Pad ids in
/// `src` are masked out of attention.
Mat seq2seq_forward(const ModelParameters& params, const Ids& src, const Ids& tgt_prefix);

/// ULMFiT transfer: copies every "enc." tensor of the language model into the seq2seq model.
ModelParameters transfer_encoder(const ModelParameters& lm, const ModelParameters& conv);

/// Greedy decoding from bos. At each step the best non-special token is chosen (lowest id on
/// ties); decoding stops when eos scores strictly higher than it, or after max_len tokens.
/// The result excludes bos and eos.
Ids greedy_decode(const ModelParameters& params, const Ids& src, std::size_t max_len);

/// Batched greedy decoding; identical per-row rule as greedy_decode.
std::vector<Ids> greedy_decode_batch(const ModelParameters& params, const std::vector<Ids>& srcs,
                                     std::size_t max_len, std::size_t batch_size = 16);

/// Sinusoidal positional encoding rows [0, len).
Mat positional_encoding(std::size_t len, int d_model);

// Checkpoint file: magic, format version, config JSON, kind tag, then named tensors as
// little-endian float32 with explicit shape records.
inline constexpr char kCheckpointMagic[8] = {'D', 'C', 'A', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params);
ModelParameters load_checkpoint(const std::filesystem::path& path);

}  // namespace dialcal
