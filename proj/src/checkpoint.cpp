#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "dialcal/model.hpp"

namespace dialcal {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw Error("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_bytes(std::istream& in, std::uint32_t n) {
  if (n > (1u << 30)) throw Error("checkpoint record too large");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  nlohmann::json header = {{"config", params.config.to_json()},
                           {"kind", to_string(params.kind)},
                           {"vocab_fingerprint", std::to_string(params.vocab_fingerprint)}};
  const std::string text = header.dump();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.put(static_cast<char>(params.kind));
  put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, t] : params.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, 2);  // rank
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t.data()[i])));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

ModelParameters load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw Error(path.string() + " is not a checkpoint");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const nlohmann::json header = nlohmann::json::parse(get_bytes(in, get_u32(in)));

  ModelParameters p;
  p.config = ModelConfig::from_json(header.at("config"));
  p.config.validate();
  p.vocab_fingerprint = std::stoull(header.at("vocab_fingerprint").get<std::string>());
  const int kind = in.get();
  if (kind != static_cast<int>(ModelKind::kLm) && kind != static_cast<int>(ModelKind::kSeq2Seq))
    throw Error("unknown model kind tag in checkpoint");
  p.kind = static_cast<ModelKind>(kind);
  if (header.at("kind").get<std::string>() != to_string(p.kind)) throw Error("checkpoint kind tag disagrees with header");

  // Shapes must match a freshly initialized model of the same config.
  const ModelParameters expected = init_params(p.config, 0, p.kind);
  const std::uint32_t count = get_u32(in);
  if (count != expected.tensors.size()) throw Error("checkpoint tensor count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_bytes(in, get_u32(in));
    if (get_u32(in) != 2) throw Error("unsupported tensor rank for " + name);
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    auto it = expected.tensors.find(name);
    if (it == expected.tensors.end() || it->second.rows() != rows || it->second.cols() != cols)
      throw Error("unexpected tensor " + name + " in checkpoint");
    Mat t(rows, cols);
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = std::bit_cast<float>(get_u32(in));
    p.tensors.emplace(name, std::move(t));
  }
  if (!p.all_finite()) throw Error("checkpoint contains non-finite values");
  return p;
}

}  // namespace dialcal
