#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embattack/attack/types.h"
#include "embattack/harness/corpus.h"
#include "embattack/judge/judge.h"
#include "embattack/model/config.h"
#include "embattack/model/params.h"
#include "embattack/model/train.h"

namespace embattack::harness {

// Bad flags, missing inputs or inconsistent configuration; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr int kExitSuccess = 0;
inline constexpr int kExitCheckFailure = 1;
inline constexpr int kExitUsage = 2;

// Seed fan-out from one global seed.
std::uint64_t corpus_seed(std::uint64_t global_seed);
std::uint64_t init_seed(std::uint64_t global_seed);
std::uint64_t shuffle_seed(std::uint64_t global_seed);
std::uint64_t behavior_seed(std::uint64_t global_seed, std::size_t behavior_index);

struct TrainRunConfig {
  model::ModelConfig model;
  model::TrainConfig train = default_train_config();
  SynthOptions synth;
  std::string corpus_path;    // empty: synthesize from `synth`
  std::string triggers_path;  // empty: the synthesized held-out triggers
  std::string lexicon_path;   // empty: built-in refusal lexicon
  std::string checkpoint_path = "model.ckpt";
  std::string summary_path;   // empty: <checkpoint_path>.summary.json
  std::uint64_t seed = 0;
  // Greedy tokens decoded per held-out trigger when measuring refusals.
  std::size_t refusal_probe_tokens = 40;

  static model::TrainConfig default_train_config();
};

void to_json(nlohmann::json& j, const TrainRunConfig& c);
void from_json(const nlohmann::json& j, TrainRunConfig& c);

struct TrainSummary {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
  std::size_t n_sequences = 0;
  std::size_t n_triggers = 0;
  std::size_t n_refusals = 0;
  double refusal_rate = 0.0;
  std::string checkpoint_sha256;
};

void to_json(nlohmann::json& j, const TrainSummary& s);

// Fraction of prompts whose greedy continuation after ASSISTANT contains a
// refusal phrase. Throws ArgumentError on an empty prompt list.
double refusal_rate(const model::ModelParams& params, std::span<const std::string> prompts,
                    std::span<const std::string> lexicon, std::size_t max_new_tokens,
                    std::size_t* n_refusals = nullptr);

// Trains, writes the checkpoint and the summary JSON. Throws UsageError when
// an input path does not exist and model::TrainingDivergence on divergence.
TrainSummary cmd_train(const TrainRunConfig& config,
                       const std::function<void(const model::EpochStats&)>& on_epoch = {});

struct RunConfig {
  model::ModelConfig model;  // replaced by the checkpoint's config when loaded
  std::string checkpoint_path = "model.ckpt";
  attack::AttackConfig attack;
  std::string lexicon_path;  // empty: built-in refusal lexicon
  std::string behaviors_path = "behaviors.jsonl";
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  std::string variant = "custom";
  // Concurrent attacks within a variant; results do not depend on it.
  std::size_t jobs = 1;
  bool count_errored_as_failure = true;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// SHA-256 over the compact config JSON, the checkpoint digest and the seed,
// joined by newlines.
std::string config_fingerprint(const nlohmann::json& config, std::string_view checkpoint_sha256,
                               std::uint64_t seed);

struct VariantRun {
  std::string label;
  attack::AttackConfig attack;
  judge::AsrReport report;
  std::vector<attack::AttackResult> results;
};

// Attacks every behavior with behavior_seed(seed, i) and judges the results.
// Per-behavior failures (divergence, length) are recorded in the result.
VariantRun run_variant(const model::ModelParams& params, std::span<const attack::Behavior> behaviors,
                       const judge::Judge& judge, const std::string& label,
                       const attack::AttackConfig& attack, std::uint64_t seed, std::size_t jobs,
                       bool count_errored_as_failure, const std::string& fingerprint);

// Output file names inside RunConfig::output_dir.
inline constexpr std::string_view kReportFile = "report.json";
inline constexpr std::string_view kTableFile = "table.csv";
inline constexpr std::string_view kSummaryFile = "summary.txt";

// report.json content minus "metadata", which holds the wall-clock fields.
nlohmann::json strip_metadata(nlohmann::json report);

// Runs one variant and writes report.json, table.csv and summary.txt.
// Throws UsageError for a missing checkpoint or an empty behavior file.
VariantRun cmd_attack(const RunConfig& config);

inline constexpr std::array<std::string_view, 3> kComparisonLabels = {"original", "opt_init",
                                                                     "opt_init_multigen"};

struct ComparisonSpec {
  RunConfig base;
  std::array<attack::AttackConfig, 3> variants;
};

// The three canonical variants built around the base attack's learning rate,
// iteration budget, token budget, early stopping and seed.
ComparisonSpec make_comparison(const RunConfig& base);

// Throws UsageError unless learning rate, iteration budget, decoding budget,
// early stopping and seed agree across variants.
void validate_comparison(const ComparisonSpec& spec);

struct MonotonicityCheck {
  bool original_le_opt_init = false;
  bool opt_init_le_multigen = false;
  bool original_lt_multigen = false;
  bool holds() const { return original_le_opt_init && opt_init_le_multigen && original_lt_multigen; }
};

MonotonicityCheck check_monotonicity(const judge::AsrReport& original,
                                     const judge::AsrReport& opt_init,
                                     const judge::AsrReport& multigen);

struct ComparisonResult {
  std::array<VariantRun, 3> runs;
  MonotonicityCheck monotonicity;
};

// Runs the three variants in order and writes report.json, table.csv and
// summary.txt.
ComparisonResult cmd_compare(const ComparisonSpec& spec);

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  bool passed = false;
};

// Finite-difference checks of every differentiable primitive and of the
// attack loss with respect to adversarial embeddings. A check passes when its
// error is strictly below `tolerance`.
std::vector<GradCheckResult> cmd_gradcheck(double tolerance, std::uint64_t seed);

}  // namespace embattack::harness
