#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "embattack/attack/types.h"
#include "embattack/model/params.h"
#include "embattack/model/tokenizer.h"
#include "embattack/numerics/tape.h"

namespace embattack::attack {

using model::ModelParams;
using model::TokenId;
using numerics::Tensor;

class AttackDivergence : public std::runtime_error {
 public:
  AttackDivergence(const std::string& behavior_id, std::size_t iteration);
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

// Token layout of one attack: prefix = BOS USER <prompt>, then the adversarial
// rows, then ASSISTANT <target>.
struct AttackLayout {
  std::vector<TokenId> prefix_ids;
  std::vector<TokenId> target_ids;
  std::size_t adv_length = 0;

  // Row index of the ASSISTANT token.
  std::size_t assistant_row() const { return prefix_ids.size() + adv_length; }
  // Length of the fully rendered sequence including the whole target.
  std::size_t rendered_length() const { return assistant_row() + 1 + target_ids.size(); }
};

// Throws LengthError when the attack sequence, or the generation prefix plus
// gen_max_tokens, does not fit max_seq_len.
AttackLayout make_layout(const ModelParams& params, const model::ChatTemplate& chat,
                         const Behavior& behavior, std::size_t adv_length,
                         std::size_t gen_max_tokens);

// Adversarial rows [A, D] in token-embedding space; requires grad.
Tensor init_adversarial(const ModelParams& params, const InitStrategy& strategy,
                        std::uint64_t seed = 0);

struct AttackForward {
  Tensor loss;           // scalar
  Tensor target_logits;  // [|target|, V], row i predicts target_ids[i]
};

// Teacher-forced mean cross-entropy of target_ids given
// BOS USER <prompt> <adv> ASSISTANT. Only `adv` can carry gradient.
AttackForward attack_forward(numerics::Tape& tape, const ModelParams& params,
                             std::span<const TokenId> prefix_ids, const Tensor& adv,
                             std::span<const TokenId> target_ids);

inline Tensor attack_loss(numerics::Tape& tape, const ModelParams& params,
                          std::span<const TokenId> prefix_ids, const Tensor& adv,
                          std::span<const TokenId> target_ids) {
  return attack_forward(tape, params, prefix_ids, adv, target_ids).loss;
}

// e -= lr * g. Throws ShapeError on a size mismatch.
void step_sgd(std::span<double> embeds, std::span<const double> grads, double learning_rate);
// e -= lr * sign(g), with sign(0) = 0.
void step_sign_gd(std::span<double> embeds, std::span<const double> grads, double learning_rate);
void apply_step(const OptimizerConfig& optimizer, std::span<double> embeds,
                std::span<const double> grads);

struct StopState {
  double loss = 0.0;
  // Greedy decoding from the current prefix would emit the full target.
  bool target_reproduced = false;
};

struct StopDecision {
  bool stop = false;
  StopReason reason = StopReason::kBudgetExhausted;
};

StopDecision should_stop(const StopState& state, const EarlyStopConfig& criteria);

// True when every target row's argmax equals its target id. Under teacher
// forcing this is exactly greedy reproduction of the target.
bool target_reproduced(const Tensor& target_logits, std::span<const TokenId> target_ids);

// Greedy continuation of BOS USER <prompt> <adv> ASSISTANT, detokenized.
std::string generate_candidate(const ModelParams& params, std::span<const TokenId> prefix_ids,
                               const Tensor& adv, std::size_t max_new_tokens);

// Each iteration evaluates the loss at the current adversarial state, checks
// early stopping on that state, then steps. Candidates are generated after the
// step on iterations that are multiples of gen_every (at most n_generations),
// and once more from the final state unless that state was already generated.
// Throws AttackDivergence on a non-finite loss.
AttackResult run_attack(const ModelParams& params, const Behavior& behavior,
                        const AttackConfig& config, const model::ChatTemplate& chat = {});

// Median of the last 10% of the trace is below the median of the first 10%.
// Throws ArgumentError for traces shorter than 10.
bool loss_is_decreasing_sanity(std::span<const double> trace);

}  // namespace embattack::attack
