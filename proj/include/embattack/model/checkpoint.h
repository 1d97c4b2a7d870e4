#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "embattack/model/params.h"

namespace embattack::model {

// File layout:
//   8 bytes   magic "EMBCKPT\n"
//   8 bytes   header length N, little-endian uint64
//   N bytes   JSON header: format, version, config, tensor manifest
//             (name, shape, byte offset, value count), payload_bytes
//   rest      tensor values as little-endian IEEE-754 doubles
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

std::string serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
// Throws CheckpointError naming the defect (bad magic, header, version,
// manifest, payload length) instead of reading past the data.
ModelParams load_checkpoint(const std::filesystem::path& path);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256_hex(const std::filesystem::path& path);

}  // namespace embattack::model
