#include "embattack/attack/attack.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "embattack/model/generate.h"
#include "embattack/model/transformer.h"
#include "embattack/numerics/errors.h"
#include "embattack/numerics/ops.h"

namespace embattack::attack {
namespace {

using numerics::Tape;

void check_same_size(std::span<double> embeds, std::span<const double> grads) {
  if (embeds.size() != grads.size()) {
    throw ShapeError("optimizer step: " + std::to_string(embeds.size()) + " embedding values vs " +
                     std::to_string(grads.size()) + " gradient values");
  }
}

void append_table_row(const ModelParams& params, TokenId id, std::vector<double>& out) {
  const std::size_t d = params.config.d_model;
  const auto table = params.token_embedding.data();
  out.insert(out.end(), table.begin() + static_cast<std::ptrdiff_t>(id * d),
             table.begin() + static_cast<std::ptrdiff_t>((id + 1) * d));
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

AttackDivergence::AttackDivergence(const std::string& behavior_id, std::size_t iteration)
    : std::runtime_error("attack on '" + behavior_id + "' diverged: non-finite loss at iteration " +
                         std::to_string(iteration)),
      iteration_(iteration) {}

AttackLayout make_layout(const ModelParams& params, const model::ChatTemplate& chat,
                         const Behavior& behavior, std::size_t adv_length,
                         std::size_t gen_max_tokens) {
  behavior.validate();
  const model::Tokenizer tokenizer;
  AttackLayout layout;
  layout.prefix_ids = chat.user_prefix(behavior.prompt);
  layout.target_ids = tokenizer.tokenize(behavior.target);
  layout.adv_length = adv_length;

  const std::size_t limit = params.config.max_seq_len;
  if (layout.rendered_length() > limit) {
    throw LengthError("behavior '" + behavior.id + "' renders to " +
                      std::to_string(layout.rendered_length()) + " tokens with a " +
                      std::to_string(adv_length) + "-row adversarial region; max_seq_len is " +
                      std::to_string(limit));
  }
  if (layout.assistant_row() + 1 + gen_max_tokens > limit) {
    throw LengthError("behavior '" + behavior.id + "': generation prefix of " +
                      std::to_string(layout.assistant_row() + 1) + " tokens plus " +
                      std::to_string(gen_max_tokens) + " new tokens exceeds max_seq_len " +
                      std::to_string(limit));
  }
  return layout;
}

Tensor init_adversarial(const ModelParams& params, const InitStrategy& strategy,
                        std::uint64_t seed) {
  strategy.validate();
  const std::size_t d = params.config.d_model;
  const std::size_t a = strategy.length();
  std::vector<double> rows;
  rows.reserve(a * d);
  switch (strategy.kind) {
    case InitStrategy::Kind::kRepeatToken: {
      const auto id = static_cast<TokenId>(static_cast<unsigned char>(strategy.character));
      for (std::size_t i = 0; i < a; ++i) append_table_row(params, id, rows);
      break;
    }
    case InitStrategy::Kind::kString: {
      for (TokenId id : model::Tokenizer().tokenize(strategy.text)) append_table_row(params, id, rows);
      break;
    }
    case InitStrategy::Kind::kRandom: {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> normal(0.0, strategy.std_dev);
      for (std::size_t i = 0; i < a * d; ++i) rows.push_back(normal(rng));
      break;
    }
  }
  return Tensor({a, d}, std::move(rows), /*requires_grad=*/true);
}

AttackForward attack_forward(Tape& tape, const ModelParams& params,
                             std::span<const TokenId> prefix_ids, const Tensor& adv,
                             std::span<const TokenId> target_ids) {
  if (target_ids.empty()) throw ArgumentError("attack target is empty");
  if (adv.rank() != 2 || adv.dim(1) != params.config.d_model) {
    throw ShapeError("adversarial rows must be [A, " + std::to_string(params.config.d_model) +
                     "], got " + numerics::shape_to_string(adv.shape()));
  }
  const std::size_t assistant_row = prefix_ids.size() + adv.dim(0);
  const std::size_t rendered = assistant_row + 1 + target_ids.size();
  if (rendered > params.config.max_seq_len) {
    throw LengthError("attack sequence of " + std::to_string(rendered) +
                      " tokens exceeds max_seq_len " + std::to_string(params.config.max_seq_len));
  }

  // The last target token is only predicted, never consumed.
  std::vector<TokenId> suffix_ids{model::kAssistant};
  suffix_ids.insert(suffix_ids.end(), target_ids.begin(), target_ids.end() - 1);

  const Tensor parts[] = {model::embed_tokens(tape, params, prefix_ids), adv,
                          model::embed_tokens(tape, params, suffix_ids)};
  const Tensor embeds = numerics::concat_rows(tape, parts);

  std::vector<std::size_t> rows(target_ids.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = assistant_row + i;
  AttackForward out;
  out.target_logits = model::forward_embeddings(tape, params, embeds, rows);
  out.loss = numerics::cross_entropy(tape, out.target_logits, target_ids);
  return out;
}

void step_sgd(std::span<double> embeds, std::span<const double> grads, double learning_rate) {
  check_same_size(embeds, grads);
  for (std::size_t i = 0; i < embeds.size(); ++i) embeds[i] -= learning_rate * grads[i];
}

void step_sign_gd(std::span<double> embeds, std::span<const double> grads, double learning_rate) {
  check_same_size(embeds, grads);
  for (std::size_t i = 0; i < embeds.size(); ++i) {
    const double g = grads[i];
    if (g > 0.0) {
      embeds[i] -= learning_rate;
    } else if (g < 0.0) {
      embeds[i] += learning_rate;
    }
  }
}

void apply_step(const OptimizerConfig& optimizer, std::span<double> embeds,
                std::span<const double> grads) {
  if (optimizer.kind == OptimizerKind::kSgd) {
    step_sgd(embeds, grads, optimizer.learning_rate);
  } else {
    step_sign_gd(embeds, grads, optimizer.learning_rate);
  }
}

StopDecision should_stop(const StopState& state, const EarlyStopConfig& criteria) {
  const bool use_target =
      criteria.mode == EarlyStopMode::kTargetPrefix || criteria.mode == EarlyStopMode::kBoth;
  const bool use_loss =
      criteria.mode == EarlyStopMode::kLossThreshold || criteria.mode == EarlyStopMode::kBoth;
  if (use_target && state.target_reproduced) return {true, StopReason::kEarlyStopTarget};
  if (use_loss && state.loss < criteria.loss_threshold) return {true, StopReason::kEarlyStopLoss};
  return {};
}

bool target_reproduced(const Tensor& target_logits, std::span<const TokenId> target_ids) {
  if (target_logits.rank() != 2 || target_logits.dim(0) != target_ids.size()) {
    throw ShapeError("target logits " + numerics::shape_to_string(target_logits.shape()) +
                     " do not match " + std::to_string(target_ids.size()) + " target ids");
  }
  const std::size_t v = target_logits.dim(1);
  const auto data = target_logits.data();
  for (std::size_t i = 0; i < target_ids.size(); ++i) {
    if (model::argmax(data.subspan(i * v, v)) != target_ids[i]) return false;
  }
  return true;
}

std::string generate_candidate(const ModelParams& params, std::span<const TokenId> prefix_ids,
                               const Tensor& adv, std::size_t max_new_tokens) {
  std::vector<double> rows;
  rows.reserve((prefix_ids.size() + adv.dim(0) + 1) * params.config.d_model);
  for (TokenId id : prefix_ids) append_table_row(params, id, rows);
  rows.insert(rows.end(), adv.data().begin(), adv.data().end());
  append_table_row(params, model::kAssistant, rows);
  const std::size_t n_rows = rows.size() / params.config.d_model;
  const Tensor prefix({n_rows, params.config.d_model}, std::move(rows));
  const auto ids = model::generate_greedy(params, prefix, max_new_tokens);
  return model::Tokenizer().detokenize(ids);
}

AttackResult run_attack(const ModelParams& params, const Behavior& behavior,
                        const AttackConfig& config, const model::ChatTemplate& chat) {
  config.validate();
  const AttackLayout layout =
      make_layout(params, chat, behavior, config.init.length(), config.gen_max_tokens);
  Tensor adv = init_adversarial(params, config.init, config.seed);

  AttackResult result;
  result.behavior_id = behavior.id;
  // Number of optimizer steps applied to `adv`; identifies the state a
  // candidate was generated from.
  std::size_t version = 0;
  std::size_t last_generated_version = 0;
  bool generated_any = false;
  std::size_t scheduled = 0;

  auto generate = [&](std::size_t iteration) {
    result.candidates.push_back(
        {iteration, generate_candidate(params, layout.prefix_ids, adv, config.gen_max_tokens)});
    last_generated_version = version;
    generated_any = true;
  };

  for (std::size_t it = 1; it <= config.n_iterations; ++it) {
    Tape tape;
    adv.clear_grad();
    const AttackForward fwd = attack_forward(tape, params, layout.prefix_ids, adv, layout.target_ids);
    const double loss = fwd.loss.item();
    if (!std::isfinite(loss)) throw AttackDivergence(behavior.id, it);
    result.loss_trace.push_back(loss);
    result.iterations_run = it;

    if (config.early_stop.mode != EarlyStopMode::kOff) {
      const StopState state{loss, target_reproduced(fwd.target_logits, layout.target_ids)};
      const StopDecision decision = should_stop(state, config.early_stop);
      if (decision.stop) {
        result.stop_reason = decision.reason;
        break;
      }
    }

    tape.backward(fwd.loss);
    apply_step(config.optimizer, adv.mutable_data(), adv.grad());
    ++version;

    if (it % config.gen_every == 0 && scheduled < config.n_generations) {
      generate(it);
      ++scheduled;
    }
  }

  if (!generated_any || last_generated_version != version) generate(result.iterations_run);
  return result;
}

bool loss_is_decreasing_sanity(std::span<const double> trace) {
  if (trace.size() < 10) {
    throw ArgumentError("loss sanity check needs at least 10 values, got " +
                        std::to_string(trace.size()));
  }
  const std::size_t k = trace.size() / 10;
  const std::vector<double> head(trace.begin(), trace.begin() + static_cast<std::ptrdiff_t>(k));
  const std::vector<double> tail(trace.end() - static_cast<std::ptrdiff_t>(k), trace.end());
  return median(tail) < median(head);
}

}  // namespace embattack::attack
