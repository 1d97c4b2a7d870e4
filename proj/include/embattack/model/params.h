#pragma once

#include <string>
#include <utility>
#include <vector>

#include "embattack/model/config.h"
#include "embattack/numerics/tensor.h"

namespace embattack::model {

using numerics::Tensor;

// Pre-norm block: x += Attn(LN1(x)); x += FFN(LN2(x)). Projections are stored
// [in, out] so a row-vector activation multiplies on the left.
struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor w_q, b_q, w_k, b_k, w_v, b_v;
  Tensor w_o, b_o;
  Tensor ln2_gain, ln2_bias;
  Tensor w_ff1, b_ff1, w_ff2, b_ff2;
};

struct ModelParams {
  ModelConfig config;
  Tensor token_embedding;     // [V, D]
  Tensor position_embedding;  // [S, D]
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor w_out, b_out;  // untied head: [D, V], [V]

  // Stable, name-ordered view used by the optimizer and checkpoints.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;

  void set_requires_grad(bool value);
  void zero_grad();
  bool all_finite() const;
  // Deep copy; the copy does not share storage with this one.
  ModelParams clone() const;
};

// Normal(0, init_std) for embeddings and projections, unit gains, zero biases.
// Deterministic in config.seed.
ModelParams init_params(const ModelConfig& config);

// Shapes every named tensor must have for `config`, in named_tensors() order.
std::vector<std::pair<std::string, numerics::Shape>> expected_layout(const ModelConfig& config);

}  // namespace embattack::model
