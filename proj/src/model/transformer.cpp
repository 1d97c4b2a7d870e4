#include "embattack/model/transformer.h"

#include <numeric>

#include "embattack/numerics/errors.h"
#include "embattack/numerics/ops.h"

namespace embattack::model {

namespace ops = numerics;

Tensor embed_tokens(numerics::Tape& tape, const ModelParams& params, std::span<const TokenId> ids) {
  return ops::embedding_rows(tape, params.token_embedding, ids);
}

Tensor forward_embeddings(numerics::Tape& tape, const ModelParams& params, const Tensor& embeds,
                          std::span<const std::size_t> output_rows) {
  const ModelConfig& cfg = params.config;
  if (embeds.rank() != 2 || embeds.dim(1) != cfg.d_model) {
    throw ShapeError("forward_embeddings: expected [T, " + std::to_string(cfg.d_model) +
                     "] input, got " + numerics::shape_to_string(embeds.shape()));
  }
  const std::size_t len = embeds.dim(0);
  if (len > cfg.max_seq_len) {
    throw LengthError("sequence of " + std::to_string(len) + " tokens exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  }
  std::vector<int> positions(len);
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = ops::add(tape, embeds, ops::embedding_rows(tape, params.position_embedding, positions));

  for (const LayerParams& l : params.layers) {
    Tensor h = ops::layer_norm(tape, x, l.ln1_gain, l.ln1_bias);
    Tensor q = ops::linear(tape, h, l.w_q, l.b_q);
    Tensor k = ops::linear(tape, h, l.w_k, l.b_k);
    Tensor v = ops::linear(tape, h, l.w_v, l.b_v);
    Tensor attn = ops::causal_attention(tape, q, k, v, cfg.n_heads);
    x = ops::add(tape, x, ops::linear(tape, attn, l.w_o, l.b_o));

    Tensor h2 = ops::layer_norm(tape, x, l.ln2_gain, l.ln2_bias);
    Tensor ff = ops::gelu(tape, ops::linear(tape, h2, l.w_ff1, l.b_ff1));
    x = ops::add(tape, x, ops::linear(tape, ff, l.w_ff2, l.b_ff2));
  }

  if (!output_rows.empty()) {
    std::vector<int> rows;
    rows.reserve(output_rows.size());
    for (std::size_t r : output_rows) {
      if (r >= len) throw IndexError("output row " + std::to_string(r) + " beyond sequence end");
      rows.push_back(static_cast<int>(r));
    }
    x = ops::embedding_rows(tape, x, rows);
  }
  x = ops::layer_norm(tape, x, params.final_gain, params.final_bias);
  return ops::linear(tape, x, params.w_out, params.b_out);
}

Tensor forward_tokens(numerics::Tape& tape, const ModelParams& params, std::span<const TokenId> ids,
                      std::span<const std::size_t> output_rows) {
  if (ids.size() > params.config.max_seq_len) {
    throw LengthError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_seq_len " +
                      std::to_string(params.config.max_seq_len));
  }
  return forward_embeddings(tape, params, embed_tokens(tape, params, ids), output_rows);
}

}  // namespace embattack::model
