#pragma once

#include <cstddef>
#include <cstdint>

#include <nlohmann/json.hpp>

#include "embattack/model/tokenizer.h"

namespace embattack::model {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t vocab_size = kVocabSize;
  std::size_t max_seq_len = 256;
  std::uint64_t seed = 0;
  // Standard deviation of the normal used for embeddings and projections.
  double init_std = 0.02;

  // Throws ArgumentError on non-positive sizes or d_model % n_heads != 0.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);

}  // namespace embattack::model
