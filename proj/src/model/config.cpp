#include "embattack/model/config.h"

#include "embattack/numerics/errors.h"

namespace embattack::model {

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0 || vocab_size == 0 ||
      max_seq_len == 0) {
    throw ArgumentError("model config sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ArgumentError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                        std::to_string(n_heads) + ")");
  }
  if (vocab_size != kVocabSize) {
    throw ArgumentError("vocab_size must be " + std::to_string(kVocabSize) +
                        " for the byte tokenizer");
  }
  if (!(init_std >= 0.0)) throw ArgumentError("init_std must be non-negative");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                     {"d_model", c.d_model},       {"d_ff", c.d_ff},
                     {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
                     {"seed", c.seed},             {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig defaults;
  c.n_layers = j.value("n_layers", defaults.n_layers);
  c.n_heads = j.value("n_heads", defaults.n_heads);
  c.d_model = j.value("d_model", defaults.d_model);
  c.d_ff = j.value("d_ff", defaults.d_ff);
  c.vocab_size = j.value("vocab_size", defaults.vocab_size);
  c.max_seq_len = j.value("max_seq_len", defaults.max_seq_len);
  c.seed = j.value("seed", defaults.seed);
  c.init_std = j.value("init_std", defaults.init_std);
}

}  // namespace embattack::model
