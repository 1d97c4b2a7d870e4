#include "embattack/model/checkpoint.h"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

namespace embattack::model {
namespace {

constexpr std::string_view kMagic = "EMBCKPT\n";
constexpr std::string_view kFormat = "embattack-checkpoint";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params) {
  nlohmann::json manifest = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : params.named_tensors()) {
    manifest.push_back({{"name", name},
                        {"shape", t.shape()},
                        {"offset", payload.size()},
                        {"count", t.numel()}});
    for (double v : t.data()) put_u64(payload, std::bit_cast<std::uint64_t>(v));
  }
  nlohmann::json header = {{"format", kFormat},
                           {"version", kCheckpointVersion},
                           {"config", params.config},
                           {"tensors", manifest},
                           {"payload_bytes", payload.size()}};
  const std::string header_text = header.dump();
  std::string out(kMagic);
  put_u64(out, header_text.size());
  out += header_text;
  out += payload;
  return out;
}

ModelParams deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw CheckpointError("checkpoint: bad magic (not an embattack checkpoint)");
  }
  const std::uint64_t header_len = get_u64(bytes, kMagic.size());
  const std::size_t header_start = kMagic.size() + 8;
  if (header_len > bytes.size() - header_start) {
    throw CheckpointError("checkpoint: header length " + std::to_string(header_len) +
                          " runs past end of file");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_start, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: corrupt header: ") + e.what());
  }

  ModelParams params;
  std::string_view payload = bytes.substr(header_start + header_len);
  try {
    if (header.value("format", std::string()) != kFormat) {
      throw CheckpointError("checkpoint: unknown format tag");
    }
    const int version = header.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint: version " + std::to_string(version) +
                            " unsupported, expected " + std::to_string(kCheckpointVersion));
    }
    const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (payload_bytes != payload.size()) {
      throw CheckpointError("checkpoint: payload is " + std::to_string(payload.size()) +
                            " bytes, manifest declares " + std::to_string(payload_bytes));
    }
    ModelConfig config = header.at("config").get<ModelConfig>();
    try {
      config.validate();
    } catch (const std::exception& e) {
      throw CheckpointError(std::string("checkpoint: invalid config: ") + e.what());
    }

    std::map<std::string, nlohmann::json> entries;
    for (const auto& entry : header.at("tensors")) {
      entries[entry.at("name").get<std::string>()] = entry;
    }
    const auto layout = expected_layout(config);
    if (entries.size() != layout.size()) {
      throw CheckpointError("checkpoint: manifest lists " + std::to_string(entries.size()) +
                            " tensors, config requires " + std::to_string(layout.size()));
    }
    params = init_params(config);
    std::size_t next_offset = 0;
    for (auto& [name, tensor] : params.named_tensors()) {
      auto it = entries.find(name);
      if (it == entries.end()) throw CheckpointError("checkpoint: manifest missing tensor " + name);
      const auto shape = it->second.at("shape").get<numerics::Shape>();
      const auto offset = it->second.at("offset").get<std::size_t>();
      const auto count = it->second.at("count").get<std::size_t>();
      if (shape != tensor.shape() || count != tensor.numel()) {
        throw CheckpointError("checkpoint: tensor " + name + " has shape " +
                              numerics::shape_to_string(shape) + ", config requires " +
                              numerics::shape_to_string(tensor.shape()));
      }
      if (offset != next_offset || offset + count * 8 > payload.size()) {
        throw CheckpointError("checkpoint: tensor " + name + " has inconsistent offset " +
                              std::to_string(offset));
      }
      auto data = tensor.mutable_data();
      for (std::size_t i = 0; i < count; ++i) {
        data[i] = std::bit_cast<double>(get_u64(payload, offset + i * 8));
      }
      next_offset = offset + count * 8;
    }
    if (next_offset != payload.size()) {
      throw CheckpointError("checkpoint: manifest covers " + std::to_string(next_offset) +
                            " of " + std::to_string(payload.size()) + " payload bytes");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

std::string file_sha256_hex(const std::filesystem::path& path) {
  return sha256_hex(read_file(path));
}

}  // namespace embattack::model
