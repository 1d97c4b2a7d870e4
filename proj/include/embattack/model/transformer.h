#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "embattack/model/params.h"
#include "embattack/model/tokenizer.h"
#include "embattack/numerics/tape.h"

namespace embattack::model {

// Token-embedding rows for `ids` (no positional term). Gradients reach the
// embedding table only when it requires grad.
Tensor embed_tokens(numerics::Tape& tape, const ModelParams& params, std::span<const TokenId> ids);

// Causal decoder over input embeddings [T, D]. Positional rows 0..T-1 are
// added internally, so `embeds` lives in the same space as the token-embedding
// table and may mix table rows with free adversarial rows.
//
// Returns logits [T, V], or [R, V] for the rows listed in `output_rows` when
// it is non-empty. Throws LengthError when T > max_seq_len.
Tensor forward_embeddings(numerics::Tape& tape, const ModelParams& params, const Tensor& embeds,
                          std::span<const std::size_t> output_rows = {});

// forward_embeddings(embed_tokens(ids)).
Tensor forward_tokens(numerics::Tape& tape, const ModelParams& params, std::span<const TokenId> ids,
                      std::span<const std::size_t> output_rows = {});

}  // namespace embattack::model
