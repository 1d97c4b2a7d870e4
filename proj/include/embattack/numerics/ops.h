#pragma once

#include <cstddef>
#include <span>

#include "embattack/numerics/tape.h"
#include "embattack/numerics/tensor.h"

// Differentiable primitives. Each op computes its output eagerly and, when any
// input requires grad, appends a node with the local gradient rule to `tape`.
namespace embattack::numerics {

enum class Elementwise { kAdd, kSub, kMul, kDiv, kMax };

// `b` must have the same shape as `a`, hold a single element, or match the
// trailing dimensions of `a` (e.g. a bias row broadcast over positions).
Tensor elementwise(Tape& tape, const Tensor& a, const Tensor& b, Elementwise kind);
Tensor elementwise(Tape& tape, const Tensor& a, double b, Elementwise kind);

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return elementwise(tape, a, b, Elementwise::kAdd);
}
inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return elementwise(tape, a, b, Elementwise::kSub);
}
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return elementwise(tape, a, b, Elementwise::kMul);
}
inline Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  return elementwise(tape, a, b, Elementwise::kDiv);
}
inline Tensor maximum(Tape& tape, const Tensor& a, const Tensor& b) {
  return elementwise(tape, a, b, Elementwise::kMax);
}

// [M,K] x [K,N] -> [M,N].
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// x[M, K] * w[K, N] + b[N], fused.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);

// Numerically stable (max-subtracted) softmax along `axis`.
Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);

// Normalizes each row over the last axis, then applies gain and bias.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = 1e-5);

// tanh-approximated GELU.
Tensor gelu(Tape& tape, const Tensor& x);

// Gathers rows of a [V,D] table; the gradient scatter-adds into the table.
Tensor embedding_rows(Tape& tape, const Tensor& table, std::span<const int> ids);

// Stacks 2-D tensors with equal column counts along the row axis.
Tensor concat_rows(Tape& tape, std::span<const Tensor> parts);

// Multi-head scaled dot-product attention over [T,D] projections where
// position t attends to positions 0..t. D must be divisible by n_heads.
Tensor causal_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t n_heads);

// Mean over rows of -log softmax(logits[t])[targets[t]].
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> targets);

Tensor sum(Tape& tape, const Tensor& x);

}  // namespace embattack::numerics
