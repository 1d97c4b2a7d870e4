#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "embattack/model/params.h"
#include "embattack/model/tokenizer.h"

namespace embattack::model {

// One training sequence. loss_mask[i] selects whether the prediction of
// ids[i + 1] from position i contributes to the loss, so
// loss_mask.size() == ids.size() - 1.
struct TrainingExample {
  std::vector<TokenId> ids;
  std::vector<bool> loss_mask;
};

// Loss on every next-token prediction.
TrainingExample plain_text_example(std::vector<TokenId> ids);
// Loss only on predictions made from the ASSISTANT token onward.
TrainingExample dialogue_example(std::vector<TokenId> ids, std::size_t assistant_index);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  // Linear decay of the learning rate to this fraction by the last step.
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

struct TrainReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

class TrainingDivergence : public std::runtime_error {
 public:
  explicit TrainingDivergence(const std::string& what) : std::runtime_error(what) {}
};

// Token-weighted mean next-token loss over masked positions.
double evaluate_loss(const ModelParams& params, std::span<const TrainingExample> corpus);

// Adam training of `params` in place. Batches are drawn from a per-epoch
// shuffle seeded by config.seed; runs are bit-reproducible. Throws
// TrainingDivergence on a non-finite loss or weight, LengthError for
// sequences longer than max_seq_len + 1.
TrainReport train(ModelParams& params, std::span<const TrainingExample> corpus,
                  const TrainConfig& config,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace embattack::model
