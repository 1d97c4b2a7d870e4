#include "embattack/model/train.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "embattack/model/transformer.h"
#include "embattack/numerics/errors.h"
#include "embattack/numerics/ops.h"

namespace embattack::model {
namespace {

struct LossTerms {
  std::vector<std::size_t> rows;
  std::vector<TokenId> targets;
};

LossTerms loss_terms(const TrainingExample& ex) {
  LossTerms terms;
  for (std::size_t i = 0; i + 1 < ex.ids.size(); ++i) {
    if (ex.loss_mask[i]) {
      terms.rows.push_back(i);
      terms.targets.push_back(ex.ids[i + 1]);
    }
  }
  return terms;
}

void validate_corpus(const ModelParams& params, std::span<const TrainingExample> corpus) {
  if (corpus.empty()) throw ArgumentError("training corpus is empty");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const TrainingExample& ex = corpus[i];
    if (ex.ids.size() < 2 || ex.loss_mask.size() + 1 != ex.ids.size()) {
      throw ArgumentError("training example " + std::to_string(i) + " has an inconsistent mask");
    }
    if (ex.ids.size() - 1 > params.config.max_seq_len) {
      throw LengthError("training example " + std::to_string(i) + " has " +
                        std::to_string(ex.ids.size()) + " tokens, limit is max_seq_len + 1");
    }
  }
}

// Returns loss * n_targets; gradients are scaled by `weight` when `backprop`.
double example_loss(const ModelParams& params, const TrainingExample& ex, double weight,
                    bool backprop) {
  const LossTerms terms = loss_terms(ex);
  if (terms.rows.empty()) return 0.0;
  numerics::Tape tape;
  std::span<const TokenId> inputs(ex.ids.data(), ex.ids.size() - 1);
  Tensor logits = forward_tokens(tape, params, inputs, terms.rows);
  Tensor loss = numerics::cross_entropy(tape, logits, terms.targets);
  const double value = loss.item();
  if (backprop) {
    Tensor scaled = numerics::elementwise(tape, loss, weight, numerics::Elementwise::kMul);
    tape.backward(scaled);
  }
  return value * static_cast<double>(terms.rows.size());
}

std::size_t target_count(const TrainingExample& ex) {
  return static_cast<std::size_t>(std::count(ex.loss_mask.begin(), ex.loss_mask.end(), true));
}

}  // namespace

TrainingExample plain_text_example(std::vector<TokenId> ids) {
  const std::size_t n = ids.empty() ? 0 : ids.size() - 1;
  return TrainingExample{std::move(ids), std::vector<bool>(n, true)};
}

TrainingExample dialogue_example(std::vector<TokenId> ids, std::size_t assistant_index) {
  const std::size_t n = ids.empty() ? 0 : ids.size() - 1;
  std::vector<bool> mask(n, false);
  for (std::size_t i = assistant_index; i < n; ++i) mask[i] = true;
  return TrainingExample{std::move(ids), std::move(mask)};
}

double evaluate_loss(const ModelParams& params, std::span<const TrainingExample> corpus) {
  validate_corpus(params, corpus);
  double total = 0.0;
  std::size_t count = 0;
  for (const TrainingExample& ex : corpus) {
    total += example_loss(params, ex, 0.0, false);
    count += target_count(ex);
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

TrainReport train(ModelParams& params, std::span<const TrainingExample> corpus,
                  const TrainConfig& config, const std::function<void(const EpochStats&)>& on_epoch) {
  validate_corpus(params, corpus);
  if (config.batch_size == 0 || config.epochs == 0) {
    throw ArgumentError("epochs and batch_size must be positive");
  }
  if (!(config.learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");

  TrainReport report;
  report.initial_loss = evaluate_loss(params, corpus);

  auto named = params.named_tensors();
  std::vector<Tensor> weights;
  for (auto& [name, t] : named) weights.push_back(t);
  std::vector<std::vector<double>> m(weights.size()), v(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    m[i].assign(weights[i].numel(), 0.0);
    v[i].assign(weights[i].numel(), 0.0);
  }
  params.set_requires_grad(true);

  const std::size_t steps_per_epoch = (corpus.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    // Fisher-Yates with our own index draw for cross-platform reproducibility.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
    double epoch_total = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::size_t batch_targets = 0;
      for (std::size_t i = start; i < end; ++i) batch_targets += target_count(corpus[order[i]]);
      if (batch_targets == 0) continue;

      for (Tensor& w : weights) w.zero_grad();
      double batch_total = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const TrainingExample& ex = corpus[order[i]];
        const double weight =
            static_cast<double>(target_count(ex)) / static_cast<double>(batch_targets);
        batch_total += example_loss(params, ex, weight, true);
      }
      const double batch_loss = batch_total / static_cast<double>(batch_targets);
      if (!std::isfinite(batch_loss)) {
        throw TrainingDivergence("non-finite training loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(step + 1));
      }

      double norm_sq = 0.0;
      for (Tensor& w : weights) {
        if (!w.has_grad()) continue;
        for (double g : w.grad()) norm_sq += g * g;
      }
      const double norm = std::sqrt(norm_sq);
      const double clip = (config.grad_clip > 0.0 && norm > config.grad_clip)
                              ? config.grad_clip / norm
                              : 1.0;

      ++step;
      const double progress =
          total_steps > 1 ? static_cast<double>(step - 1) / static_cast<double>(total_steps - 1)
                          : 0.0;
      const double lr =
          config.learning_rate * (1.0 - progress * (1.0 - config.final_lr_fraction));
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t wi = 0; wi < weights.size(); ++wi) {
        Tensor& w = weights[wi];
        if (!w.has_grad()) continue;
        auto data = w.mutable_data();
        auto grad = w.grad();
        for (std::size_t j = 0; j < data.size(); ++j) {
          const double g = grad[j] * clip;
          m[wi][j] = config.beta1 * m[wi][j] + (1.0 - config.beta1) * g;
          v[wi][j] = config.beta2 * v[wi][j] + (1.0 - config.beta2) * g * g;
          data[j] -= lr * (m[wi][j] / bc1) / (std::sqrt(v[wi][j] / bc2) + config.epsilon);
        }
      }
      if (!params.all_finite()) {
        throw TrainingDivergence("non-finite weight after epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(step));
      }
      epoch_total += batch_total;
      epoch_count += batch_targets;
    }
    const double mean = epoch_count ? epoch_total / static_cast<double>(epoch_count) : 0.0;
    report.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(EpochStats{epoch, mean, step});
  }
  params.set_requires_grad(false);
  for (Tensor& w : weights) w.clear_grad();
  report.steps = step;
  report.final_loss = report.epoch_losses.back();
  return report;
}

}  // namespace embattack::model
