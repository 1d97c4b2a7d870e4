// Command-line entry point: synth, train, attack, compare, gradcheck.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "embattack/harness/allocator.h"
#include "embattack/harness/corpus.h"
#include "embattack/harness/run.h"
#include "embattack/model/checkpoint.h"
#include "embattack/model/train.h"
#include "embattack/numerics/errors.h"

namespace {

namespace fs = std::filesystem;
namespace harness = embattack::harness;
namespace attack = embattack::attack;
namespace model = embattack::model;
using nlohmann::json;

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  if (!fs::is_regular_file(path)) throw harness::UsageError("config file not found: " + path);
  try {
    return json::parse(harness::read_file(path));
  } catch (const json::exception& e) {
    throw harness::UsageError("config file " + path + ": " + e.what());
  }
}

// Overwrites `field` when the flag was given on the command line.
template <typename T>
void apply(const CLI::Option* option, const T& value, T& field) {
  if (option->count() > 0) field = value;
}

struct SynthFlags {
  harness::SynthOptions options;
  std::string out_dir = "data/synth";
};

struct ModelFlags {
  model::ModelConfig config;
  CLI::Option* layers = nullptr;
  CLI::Option* heads = nullptr;
  CLI::Option* d_model = nullptr;
  CLI::Option* d_ff = nullptr;
  CLI::Option* max_seq_len = nullptr;

  void add(CLI::App* app) {
    layers = app->add_option("--layers", config.n_layers, "Transformer blocks");
    heads = app->add_option("--heads", config.n_heads, "Attention heads");
    d_model = app->add_option("--d-model", config.d_model, "Residual width");
    d_ff = app->add_option("--d-ff", config.d_ff, "Feed-forward width");
    max_seq_len = app->add_option("--max-seq-len", config.max_seq_len, "Context window");
  }
  void merge(model::ModelConfig& into) const {
    apply(layers, config.n_layers, into.n_layers);
    apply(heads, config.n_heads, into.n_heads);
    apply(d_model, config.d_model, into.d_model);
    apply(d_ff, config.d_ff, into.d_ff);
    apply(max_seq_len, config.max_seq_len, into.max_seq_len);
  }
};

struct TrainFlags {
  std::string config_path;
  harness::TrainRunConfig values;
  ModelFlags model;
  CLI::Option* corpus = nullptr;
  CLI::Option* triggers = nullptr;
  CLI::Option* lexicon = nullptr;
  CLI::Option* checkpoint = nullptr;
  CLI::Option* summary = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* batch_size = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* final_lr = nullptr;
  CLI::Option* grad_clip = nullptr;
  CLI::Option* n_behaviors = nullptr;
  CLI::Option* n_distractors = nullptr;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config; flags override its fields");
    corpus = app->add_option("--corpus", values.corpus_path, "Corpus JSONL (default: synthesize)");
    triggers = app->add_option("--triggers", values.triggers_path, "Held-out trigger JSONL");
    lexicon = app->add_option("--lexicon", values.lexicon_path, "Refusal lexicon file");
    checkpoint = app->add_option("--checkpoint", values.checkpoint_path, "Output checkpoint");
    summary = app->add_option("--summary", values.summary_path, "Output summary JSON");
    seed = app->add_option("--seed", values.seed, "Global seed");
    epochs = app->add_option("--epochs", values.train.epochs, "Training epochs");
    batch_size = app->add_option("--batch-size", values.train.batch_size, "Sequences per step");
    lr = app->add_option("--lr", values.train.learning_rate, "Adam learning rate");
    final_lr = app->add_option("--final-lr-fraction", values.train.final_lr_fraction,
                               "Learning rate at the last step, relative to --lr");
    grad_clip = app->add_option("--grad-clip", values.train.grad_clip, "Gradient norm clip (0: off)");
    n_behaviors = app->add_option("--n-behaviors", values.synth.n_behaviors, "Synthesized behaviors");
    n_distractors = app->add_option("--n-distractors", values.synth.n_distractors,
                                    "Synthesized distractor sequences");
    model.add(app);
  }

  harness::TrainRunConfig resolve() const {
    harness::TrainRunConfig c = read_config(config_path).get<harness::TrainRunConfig>();
    apply(corpus, values.corpus_path, c.corpus_path);
    apply(triggers, values.triggers_path, c.triggers_path);
    apply(lexicon, values.lexicon_path, c.lexicon_path);
    apply(checkpoint, values.checkpoint_path, c.checkpoint_path);
    apply(summary, values.summary_path, c.summary_path);
    apply(seed, values.seed, c.seed);
    apply(epochs, values.train.epochs, c.train.epochs);
    apply(batch_size, values.train.batch_size, c.train.batch_size);
    apply(lr, values.train.learning_rate, c.train.learning_rate);
    apply(final_lr, values.train.final_lr_fraction, c.train.final_lr_fraction);
    apply(grad_clip, values.train.grad_clip, c.train.grad_clip);
    apply(n_behaviors, values.synth.n_behaviors, c.synth.n_behaviors);
    apply(n_distractors, values.synth.n_distractors, c.synth.n_distractors);
    model.merge(c.model);
    return c;
  }
};

struct RunFlags {
  std::string config_path;
  harness::RunConfig values;
  std::string optimizer;
  std::string init_kind;
  std::string early_stop;
  CLI::Option* checkpoint = nullptr;
  CLI::Option* behaviors = nullptr;
  CLI::Option* lexicon = nullptr;
  CLI::Option* out_dir = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* variant = nullptr;
  CLI::Option* jobs = nullptr;
  CLI::Option* errored = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* iterations = nullptr;
  CLI::Option* gen_max_tokens = nullptr;
  CLI::Option* early_stop_opt = nullptr;
  CLI::Option* loss_threshold = nullptr;
  // Single-attack only.
  CLI::Option* optimizer_opt = nullptr;
  CLI::Option* init_opt = nullptr;
  CLI::Option* init_text = nullptr;
  CLI::Option* init_char = nullptr;
  CLI::Option* init_count = nullptr;
  CLI::Option* init_std = nullptr;
  CLI::Option* gen_every = nullptr;
  CLI::Option* n_generations = nullptr;

  void add_common(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config; flags override its fields");
    checkpoint = app->add_option("--checkpoint", values.checkpoint_path, "Model checkpoint");
    behaviors = app->add_option("--behaviors", values.behaviors_path, "Behavior JSONL");
    lexicon = app->add_option("--lexicon", values.lexicon_path, "Refusal lexicon file");
    out_dir = app->add_option("--out-dir", values.output_dir, "Report directory");
    seed = app->add_option("--seed", values.seed, "Global seed");
    jobs = app->add_option("--jobs", values.jobs, "Concurrent attacks")->check(CLI::PositiveNumber);
    errored = app->add_option("--count-errored-as-failure", values.count_errored_as_failure,
                              "Keep errored behaviors in the ASR denominator");
    lr = app->add_option("--lr", values.attack.optimizer.learning_rate, "Attack learning rate");
    iterations = app->add_option("--iterations", values.attack.n_iterations, "Attack iterations");
    gen_max_tokens = app->add_option("--gen-max-tokens", values.attack.gen_max_tokens,
                                     "Tokens per generated candidate");
    early_stop_opt = app->add_option("--early-stop", early_stop,
                                     "off | target_prefix | loss_threshold | both");
    loss_threshold = app->add_option("--loss-threshold", values.attack.early_stop.loss_threshold,
                                     "Early-stop loss threshold");
  }

  void add_single(CLI::App* app) {
    variant = app->add_option("--variant", values.variant, "Label recorded in the report");
    optimizer_opt = app->add_option("--optimizer", optimizer, "sgd | sign_gd");
    init_opt = app->add_option("--init", init_kind, "repeat_token | string | random");
    init_text = app->add_option("--init-text", values.attack.init.text, "String initialization");
    init_char = app->add_option("--init-char", values.attack.init.character, "Repeated character");
    init_count = app->add_option("--init-count", values.attack.init.count,
                                 "Rows for repeat_token and random initialization");
    init_std = app->add_option("--init-std", values.attack.init.std_dev, "Random init deviation");
    gen_every = app->add_option("--gen-every", values.attack.gen_every, "Iterations between candidates");
    n_generations = app->add_option("--n-generations", values.attack.n_generations,
                                    "Scheduled candidates");
  }

  harness::RunConfig resolve(const harness::RunConfig& defaults) const {
    const json file = read_config(config_path);
    harness::RunConfig c = defaults;
    if (!file.empty()) {
      json merged = defaults;
      merged.merge_patch(file);
      c = merged.get<harness::RunConfig>();
    }
    apply(checkpoint, values.checkpoint_path, c.checkpoint_path);
    apply(behaviors, values.behaviors_path, c.behaviors_path);
    apply(lexicon, values.lexicon_path, c.lexicon_path);
    apply(out_dir, values.output_dir, c.output_dir);
    apply(seed, values.seed, c.seed);
    apply(jobs, values.jobs, c.jobs);
    apply(errored, values.count_errored_as_failure, c.count_errored_as_failure);
    attack::AttackConfig& a = c.attack;
    apply(lr, values.attack.optimizer.learning_rate, a.optimizer.learning_rate);
    apply(iterations, values.attack.n_iterations, a.n_iterations);
    apply(gen_max_tokens, values.attack.gen_max_tokens, a.gen_max_tokens);
    if (early_stop_opt->count() > 0) a.early_stop.mode = attack::parse_early_stop_mode(early_stop);
    apply(loss_threshold, values.attack.early_stop.loss_threshold, a.early_stop.loss_threshold);
    if (variant) {
      apply(variant, values.variant, c.variant);
      if (optimizer_opt->count() > 0) a.optimizer.kind = attack::parse_optimizer_kind(optimizer);
      if (init_opt->count() > 0) a.init.kind = attack::parse_init_kind(init_kind);
      apply(init_text, values.attack.init.text, a.init.text);
      apply(init_char, values.attack.init.character, a.init.character);
      apply(init_count, values.attack.init.count, a.init.count);
      apply(init_std, values.attack.init.std_dev, a.init.std_dev);
      apply(gen_every, values.attack.gen_every, a.gen_every);
      apply(n_generations, values.attack.n_generations, a.n_generations);
    }
    return c;
  }
};

int run_synth(const SynthFlags& flags) {
  const harness::SynthCorpus corpus = harness::synth_corpus(flags.options);
  const fs::path dir = flags.out_dir;
  fs::create_directories(dir);
  harness::write_file(dir / "corpus.jsonl", harness::corpus_to_jsonl(corpus.training));
  harness::write_file(dir / "behaviors.jsonl", harness::behaviors_to_jsonl(corpus.behaviors));
  harness::write_file(dir / "triggers.jsonl", harness::triggers_to_jsonl(corpus.heldout_triggers));
  std::printf("wrote %zu training entries, %zu behaviors, %zu held-out triggers to %s\n",
              corpus.training.size(), corpus.behaviors.size(), corpus.heldout_triggers.size(),
              dir.c_str());
  return harness::kExitSuccess;
}

int run_train(const TrainFlags& flags) {
  const harness::TrainRunConfig config = flags.resolve();
  config.model.validate();
  const harness::TrainSummary summary =
      harness::cmd_train(config, [](const model::EpochStats& s) {
        std::fprintf(stderr, "epoch %zu: mean loss %.4f over %zu steps\n", s.epoch, s.mean_loss,
                     s.steps);
      });
  std::printf("final loss %.4f, refusal rate %.3f (%zu/%zu), checkpoint %s (sha256 %s)\n",
              summary.final_loss, summary.refusal_rate, summary.n_refusals, summary.n_triggers,
              config.checkpoint_path.c_str(), summary.checkpoint_sha256.c_str());
  return harness::kExitSuccess;
}

int run_attack_cmd(const RunFlags& flags) {
  const harness::RunConfig config = flags.resolve(harness::RunConfig{});
  const harness::VariantRun run = harness::cmd_attack(config);
  std::cout << harness::read_file(fs::path(config.output_dir) / harness::kSummaryFile);
  return harness::kExitSuccess;
}

int run_compare(const RunFlags& flags) {
  harness::RunConfig defaults;
  defaults.attack.early_stop.mode = attack::EarlyStopMode::kOff;
  defaults.variant = "comparison";
  const harness::RunConfig config = flags.resolve(defaults);
  const harness::ComparisonResult result = harness::cmd_compare(harness::make_comparison(config));
  std::cout << harness::read_file(fs::path(config.output_dir) / harness::kSummaryFile);
  return result.monotonicity.holds() ? harness::kExitSuccess : harness::kExitCheckFailure;
}

int run_gradcheck(double tolerance, std::uint64_t seed) {
  bool all = true;
  for (const harness::GradCheckResult& r : harness::cmd_gradcheck(tolerance, seed)) {
    std::printf("%-30s max rel error %.3e  %s\n", r.name.c_str(), r.max_relative_error,
                r.passed ? "ok" : "FAIL");
    all = all && r.passed;
  }
  std::printf("gradcheck %s (tolerance %.1e)\n", all ? "passed" : "failed", tolerance);
  return all ? harness::kExitSuccess : harness::kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
  harness::configure_allocator();
  CLI::App app{"Embedding-space adversarial attacks on a toy refusal-tuned language model"};
  app.require_subcommand(1);

  SynthFlags synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Write the synthetic corpus and behaviors");
  synth_cmd->add_option("--n-behaviors", synth.options.n_behaviors, "Behaviors to synthesize");
  synth_cmd->add_option("--n-distractors", synth.options.n_distractors, "Distractor sequences");
  synth_cmd->add_option("--seed", synth.options.seed, "Corpus seed");
  synth_cmd->add_option("--out-dir", synth.out_dir, "Output directory");

  TrainFlags train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train the refusal-tuned toy model");
  train.add(train_cmd);

  RunFlags attack_flags;
  CLI::App* attack_cmd = app.add_subcommand("attack", "Attack every behavior with one configuration");
  attack_flags.add_common(attack_cmd);
  attack_flags.add_single(attack_cmd);

  RunFlags compare_flags;
  CLI::App* compare_cmd =
      app.add_subcommand("compare", "Run the original, opt_init and opt_init_multigen variants");
  compare_flags.add_common(compare_cmd);

  double tolerance = 1e-4;
  std::uint64_t gradcheck_seed = 0;
  CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck_cmd->add_option("--tolerance", tolerance, "Largest accepted relative error");
  gradcheck_cmd->add_option("--seed", gradcheck_seed, "Seed for sampled inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return harness::kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train);
    if (*attack_cmd) return run_attack_cmd(attack_flags);
    if (*compare_cmd) return run_compare(compare_flags);
    if (*gradcheck_cmd) return run_gradcheck(tolerance, gradcheck_seed);
  } catch (const harness::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return harness::kExitUsage;
  } catch (const embattack::ArgumentError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return harness::kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return harness::kExitCheckFailure;
  }
  return harness::kExitUsage;
}
