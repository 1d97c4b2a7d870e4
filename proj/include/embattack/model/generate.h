#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "embattack/model/params.h"
#include "embattack/model/tokenizer.h"

namespace embattack::model {

// Tape-free forward pass with a per-layer key/value cache, so appending one
// position costs a single row through each layer. Computes the same function
// as forward_embeddings up to floating-point reassociation.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const ModelParams& params);

  // Appends `n_rows` input-embedding rows ([n_rows, D], row-major, no
  // positional term) and returns the logits of the last appended row.
  std::vector<double> feed(std::span<const double> rows, std::size_t n_rows);
  std::vector<double> feed_token(TokenId id);

  std::size_t position() const { return position_; }

 private:
  const ModelParams& params_;
  std::vector<numerics::Buffer> keys_;
  std::vector<numerics::Buffer> values_;
  std::size_t position_ = 0;
};

// Index of the largest entry; the lowest index wins ties.
TokenId argmax(std::span<const double> logits);

// Greedy continuation of `prefix_embeds` ([T, D] input embeddings). Stops
// after max_new_tokens ids or when EOS is produced; EOS is not returned.
// Throws LengthError when T + max_new_tokens > max_seq_len.
std::vector<TokenId> generate_greedy(const ModelParams& params, const Tensor& prefix_embeds,
                                     std::size_t max_new_tokens);

}  // namespace embattack::model
