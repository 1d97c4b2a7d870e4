#include "embattack/harness/run.h"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

#include "embattack/attack/attack.h"
#include "embattack/model/checkpoint.h"
#include "embattack/model/generate.h"
#include "embattack/numerics/errors.h"

namespace embattack::harness {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string dump(const json& j) { return j.dump(2, ' ', false, json::error_handler_t::replace) + "\n"; }

void require_file(const std::string& path, std::string_view what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void write_output(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, content);
}

std::vector<std::string> lexicon_from(const std::string& path) {
  if (path.empty()) return judge::default_refusal_lexicon();
  require_file(path, "refusal lexicon");
  return judge::load_refusal_lexicon(path);
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

json metadata(std::chrono::steady_clock::time_point start) {
  return {{"timestamp", utc_timestamp()},
          {"elapsed_seconds",
           std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
}

std::vector<attack::Behavior> load_behaviors(const std::string& path) {
  require_file(path, "behavior file");
  auto behaviors = behaviors_from_jsonl(read_file(path));
  if (behaviors.empty()) throw UsageError("behavior file " + path + " is empty");
  return behaviors;
}

model::ModelParams load_model(const std::string& path) {
  require_file(path, "checkpoint");
  return model::load_checkpoint(path);
}

std::string first_success_cell(const judge::BehaviorOutcome& o) {
  if (o.errored) return "error";
  return o.first_success_iteration ? std::to_string(*o.first_success_iteration) : "-";
}

void append_variant_table(std::string& out, const VariantRun& run) {
  char line[160];
  std::snprintf(line, sizeof(line), "variant %s: ASR %s%% (%zu/%zu, %zu errored)\n",
                run.label.c_str(), judge::format_percent(run.report.asr_percent).c_str(),
                run.report.n_success, run.report.denominator, run.report.n_errored);
  out += line;
  std::snprintf(line, sizeof(line), "  %-28s %-8s %-14s %s\n", "behavior", "success",
                "first_success", "candidates");
  out += line;
  for (const judge::BehaviorOutcome& o : run.report.outcomes) {
    std::snprintf(line, sizeof(line), "  %-28s %-8s %-14s %zu\n", o.behavior_id.c_str(),
                  o.success ? "yes" : "no", first_success_cell(o).c_str(), o.n_candidates_judged);
    out += line;
  }
}

json variant_json(const VariantRun& run) {
  json results = json::array();
  for (const attack::AttackResult& r : run.results) results.push_back(r);
  return {{"label", run.label}, {"attack", run.attack}, {"report", run.report}, {"results", results}};
}

}  // namespace

std::uint64_t corpus_seed(std::uint64_t global_seed) { return global_seed; }
std::uint64_t init_seed(std::uint64_t global_seed) { return global_seed; }
std::uint64_t shuffle_seed(std::uint64_t global_seed) { return global_seed; }
std::uint64_t behavior_seed(std::uint64_t global_seed, std::size_t behavior_index) {
  return global_seed ^ static_cast<std::uint64_t>(behavior_index);
}

model::TrainConfig TrainRunConfig::default_train_config() {
  model::TrainConfig c;
  c.epochs = 6;
  c.batch_size = 2;
  c.learning_rate = 1e-3;
  c.final_lr_fraction = 0.1;
  return c;
}

void to_json(json& j, const TrainRunConfig& c) {
  j = {{"model", c.model},
       {"train",
        {{"epochs", c.train.epochs},
         {"batch_size", c.train.batch_size},
         {"learning_rate", c.train.learning_rate},
         {"beta1", c.train.beta1},
         {"beta2", c.train.beta2},
         {"epsilon", c.train.epsilon},
         {"grad_clip", c.train.grad_clip},
         {"final_lr_fraction", c.train.final_lr_fraction}}},
       {"synth",
        {{"n_behaviors", c.synth.n_behaviors},
         {"n_distractors", c.synth.n_distractors},
         {"max_filler_bytes", c.synth.max_filler_bytes}}},
       {"corpus_path", c.corpus_path},
       {"triggers_path", c.triggers_path},
       {"lexicon_path", c.lexicon_path},
       {"checkpoint_path", c.checkpoint_path},
       {"summary_path", c.summary_path},
       {"seed", c.seed},
       {"refusal_probe_tokens", c.refusal_probe_tokens}};
}

void from_json(const json& j, TrainRunConfig& c) {
  const TrainRunConfig d;
  c.model = j.value("model", d.model);
  c.train = d.train;
  if (j.contains("train")) {
    const json& t = j.at("train");
    c.train.epochs = t.value("epochs", d.train.epochs);
    c.train.batch_size = t.value("batch_size", d.train.batch_size);
    c.train.learning_rate = t.value("learning_rate", d.train.learning_rate);
    c.train.beta1 = t.value("beta1", d.train.beta1);
    c.train.beta2 = t.value("beta2", d.train.beta2);
    c.train.epsilon = t.value("epsilon", d.train.epsilon);
    c.train.grad_clip = t.value("grad_clip", d.train.grad_clip);
    c.train.final_lr_fraction = t.value("final_lr_fraction", d.train.final_lr_fraction);
  }
  c.synth = d.synth;
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    c.synth.n_behaviors = s.value("n_behaviors", d.synth.n_behaviors);
    c.synth.n_distractors = s.value("n_distractors", d.synth.n_distractors);
    c.synth.max_filler_bytes = s.value("max_filler_bytes", d.synth.max_filler_bytes);
  }
  c.corpus_path = j.value("corpus_path", d.corpus_path);
  c.triggers_path = j.value("triggers_path", d.triggers_path);
  c.lexicon_path = j.value("lexicon_path", d.lexicon_path);
  c.checkpoint_path = j.value("checkpoint_path", d.checkpoint_path);
  c.summary_path = j.value("summary_path", d.summary_path);
  c.seed = j.value("seed", d.seed);
  c.refusal_probe_tokens = j.value("refusal_probe_tokens", d.refusal_probe_tokens);
}

void to_json(json& j, const TrainSummary& s) {
  j = {{"initial_loss", s.initial_loss},
       {"final_loss", s.final_loss},
       {"epoch_losses", s.epoch_losses},
       {"steps", s.steps},
       {"n_sequences", s.n_sequences},
       {"n_triggers", s.n_triggers},
       {"n_refusals", s.n_refusals},
       {"refusal_rate", s.refusal_rate},
       {"checkpoint_sha256", s.checkpoint_sha256}};
}

double refusal_rate(const model::ModelParams& params, std::span<const std::string> prompts,
                    std::span<const std::string> lexicon, std::size_t max_new_tokens,
                    std::size_t* n_refusals) {
  if (prompts.empty()) throw ArgumentError("refusal_rate: no prompts");
  const model::ChatTemplate chat;
  const model::Tokenizer tokenizer;
  std::size_t refusals = 0;
  for (const std::string& prompt : prompts) {
    std::vector<model::TokenId> ids = chat.user_prefix(prompt);
    ids.push_back(chat.assistant);
    if (ids.size() + max_new_tokens > params.config.max_seq_len) {
      throw LengthError("refusal probe '" + prompt + "' does not fit the context window");
    }
    model::IncrementalDecoder decoder(params);
    std::vector<double> logits;
    for (model::TokenId id : ids) logits = decoder.feed_token(id);
    std::vector<model::TokenId> out;
    for (std::size_t i = 0; i < max_new_tokens; ++i) {
      const model::TokenId next = model::argmax(logits);
      if (next == model::kEos) break;
      out.push_back(next);
      if (i + 1 < max_new_tokens) logits = decoder.feed_token(next);
    }
    if (judge::find_refusal(tokenizer.detokenize(out), lexicon)) ++refusals;
  }
  if (n_refusals) *n_refusals = refusals;
  return static_cast<double>(refusals) / static_cast<double>(prompts.size());
}

TrainSummary cmd_train(const TrainRunConfig& config,
                       const std::function<void(const model::EpochStats&)>& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<CorpusEntry> corpus;
  std::vector<std::string> triggers;
  if (config.corpus_path.empty()) {
    SynthOptions options = config.synth;
    options.seed = corpus_seed(config.seed);
    SynthCorpus synth = synth_corpus(options);
    corpus = std::move(synth.training);
    triggers = std::move(synth.heldout_triggers);
  } else {
    require_file(config.corpus_path, "corpus");
    if (config.triggers_path.empty()) throw UsageError("a corpus file requires a trigger file");
    corpus = corpus_from_jsonl(read_file(config.corpus_path));
    if (corpus.empty()) throw UsageError("corpus " + config.corpus_path + " is empty");
  }
  if (!config.triggers_path.empty()) {
    require_file(config.triggers_path, "trigger file");
    triggers = triggers_from_jsonl(read_file(config.triggers_path));
  }
  if (triggers.empty()) throw UsageError("no held-out triggers to measure refusals on");
  const std::vector<std::string> lexicon = lexicon_from(config.lexicon_path);

  model::ModelConfig model_config = config.model;
  model_config.seed = init_seed(config.seed);
  model::ModelParams params = model::init_params(model_config);
  model::TrainConfig train_config = config.train;
  train_config.seed = shuffle_seed(config.seed);
  const auto examples = to_training_examples(corpus);
  const model::TrainReport report = model::train(params, examples, train_config, on_epoch);

  write_output(config.checkpoint_path, model::serialize_checkpoint(params));
  TrainSummary summary;
  summary.initial_loss = report.initial_loss;
  summary.final_loss = report.final_loss;
  summary.epoch_losses = report.epoch_losses;
  summary.steps = report.steps;
  summary.n_sequences = examples.size();
  summary.n_triggers = triggers.size();
  summary.refusal_rate =
      refusal_rate(params, triggers, lexicon, config.refusal_probe_tokens, &summary.n_refusals);
  summary.checkpoint_sha256 = model::file_sha256_hex(config.checkpoint_path);

  const std::string summary_path =
      config.summary_path.empty() ? config.checkpoint_path + ".summary.json" : config.summary_path;
  json out = summary;
  out["config"] = config;
  out["metadata"] = metadata(start);
  write_output(summary_path, dump(out));
  return summary;
}

void to_json(json& j, const RunConfig& c) {
  j = {{"model", c.model},
       {"checkpoint_path", c.checkpoint_path},
       {"attack", c.attack},
       {"lexicon_path", c.lexicon_path},
       {"behaviors_path", c.behaviors_path},
       {"output_dir", c.output_dir},
       {"seed", c.seed},
       {"variant", c.variant},
       {"jobs", c.jobs},
       {"count_errored_as_failure", c.count_errored_as_failure}};
}

void from_json(const json& j, RunConfig& c) {
  const RunConfig d;
  c.model = j.value("model", d.model);
  c.checkpoint_path = j.value("checkpoint_path", d.checkpoint_path);
  c.attack = j.value("attack", d.attack);
  c.lexicon_path = j.value("lexicon_path", d.lexicon_path);
  c.behaviors_path = j.value("behaviors_path", d.behaviors_path);
  c.output_dir = j.value("output_dir", d.output_dir);
  c.seed = j.value("seed", d.seed);
  c.variant = j.value("variant", d.variant);
  c.jobs = j.value("jobs", d.jobs);
  c.count_errored_as_failure = j.value("count_errored_as_failure", d.count_errored_as_failure);
}

std::string config_fingerprint(const json& config, std::string_view checkpoint_sha256,
                               std::uint64_t seed) {
  std::string material = config.dump(-1, ' ', false, json::error_handler_t::replace);
  material += '\n';
  material += checkpoint_sha256;
  material += '\n';
  material += std::to_string(seed);
  return model::sha256_hex(material);
}

VariantRun run_variant(const model::ModelParams& params, std::span<const attack::Behavior> behaviors,
                       const judge::Judge& judge, const std::string& label,
                       const attack::AttackConfig& attack, std::uint64_t seed, std::size_t jobs,
                       bool count_errored_as_failure, const std::string& fingerprint) {
  attack.validate();
  VariantRun run;
  run.label = label;
  run.attack = attack;
  run.results.resize(behaviors.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= behaviors.size()) return;
      attack::AttackConfig config = attack;
      config.seed = behavior_seed(seed, i);
      try {
        run.results[i] = attack::run_attack(params, behaviors[i], config);
      } catch (const attack::AttackDivergence& e) {
        run.results[i].behavior_id = behaviors[i].id;
        run.results[i].iterations_run = e.iteration();
        run.results[i].error = e.what();
      } catch (const std::logic_error& e) {
        // Argument, shape and length errors are specific to the behavior.
        run.results[i].behavior_id = behaviors[i].id;
        run.results[i].error = e.what();
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(jobs, behaviors.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<judge::BehaviorOutcome> outcomes;
  outcomes.reserve(behaviors.size());
  for (std::size_t i = 0; i < behaviors.size(); ++i) {
    outcomes.push_back(judge::judge_attack(run.results[i], behaviors[i], judge));
  }
  run.report = judge::compute_asr(outcomes, count_errored_as_failure);
  run.report.variant = label;
  run.report.config_fingerprint = fingerprint;
  return run;
}

json strip_metadata(json report) {
  report.erase("metadata");
  return report;
}

VariantRun cmd_attack(const RunConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  config.attack.validate();
  const auto behaviors = load_behaviors(config.behaviors_path);
  const judge::RuleBasedJudge judge(lexicon_from(config.lexicon_path));
  const model::ModelParams params = load_model(config.checkpoint_path);
  const std::string digest = model::file_sha256_hex(config.checkpoint_path);

  RunConfig echoed = config;
  echoed.model = params.config;
  const json config_json = echoed;
  const std::string fingerprint = config_fingerprint(config_json, digest, config.seed);
  VariantRun run = run_variant(params, behaviors, judge, config.variant, config.attack, config.seed,
                               config.jobs, config.count_errored_as_failure, fingerprint);

  json report = variant_json(run);
  report["config"] = config_json;
  report["checkpoint_sha256"] = digest;
  report["metadata"] = metadata(start);
  const fs::path dir = config.output_dir;
  write_output(dir / kReportFile, dump(report));
  write_output(dir / kTableFile, "variant,asr_percent\n" + run.label + "," +
                                     judge::format_percent(run.report.asr_percent) + "\n");
  std::string summary;
  append_variant_table(summary, run);
  write_output(dir / kSummaryFile, summary);
  return run;
}

ComparisonSpec make_comparison(const RunConfig& base) {
  ComparisonSpec spec;
  spec.base = base;
  const attack::AttackConfig& b = base.attack;
  auto single_final = [&](attack::AttackConfig c) {
    c.gen_every = c.n_iterations;
    c.n_generations = 1;
    return c;
  };

  attack::AttackConfig original = b;
  original.optimizer.kind = attack::OptimizerKind::kSgd;
  original.init = attack::InitStrategy::repeat_token('x', attack::InitStrategy{}.count);
  spec.variants[0] = single_final(original);

  attack::AttackConfig opt_init = b;
  opt_init.optimizer.kind = attack::OptimizerKind::kSignGd;
  opt_init.init = attack::InitStrategy::string(std::string(attack::kInstructionInitString));
  spec.variants[1] = single_final(opt_init);

  attack::AttackConfig multigen = opt_init;
  multigen.gen_every = attack::AttackConfig{}.gen_every;
  multigen.n_generations = attack::AttackConfig{}.n_generations;
  spec.variants[2] = multigen;
  return spec;
}

void validate_comparison(const ComparisonSpec& spec) {
  const attack::AttackConfig& first = spec.variants[0];
  for (std::size_t v = 0; v < spec.variants.size(); ++v) {
    const attack::AttackConfig& c = spec.variants[v];
    const std::string label(kComparisonLabels[v]);
    if (c.optimizer.learning_rate != first.optimizer.learning_rate) {
      throw UsageError("variant " + label + " uses a different learning rate");
    }
    if (c.n_iterations != first.n_iterations) {
      throw UsageError("variant " + label + " uses a different iteration budget");
    }
    if (c.gen_max_tokens != first.gen_max_tokens) {
      throw UsageError("variant " + label + " uses a different generation length");
    }
    if (c.early_stop.mode != first.early_stop.mode ||
        c.early_stop.loss_threshold != first.early_stop.loss_threshold) {
      throw UsageError("variant " + label + " uses different early stopping");
    }
    if (c.seed != first.seed) throw UsageError("variant " + label + " uses a different seed");
    try {
      c.validate();
    } catch (const ArgumentError& e) {
      throw UsageError("variant " + label + ": " + e.what());
    }
  }
}

MonotonicityCheck check_monotonicity(const judge::AsrReport& original,
                                     const judge::AsrReport& opt_init,
                                     const judge::AsrReport& multigen) {
  // Compare exact tenths rather than rounded doubles.
  auto tenths = [](const judge::AsrReport& r) {
    return r.denominator == 0 ? std::size_t{0} : judge::asr_tenths(r.n_success, r.denominator);
  };
  MonotonicityCheck check;
  check.original_le_opt_init = tenths(original) <= tenths(opt_init);
  check.opt_init_le_multigen = tenths(opt_init) <= tenths(multigen);
  check.original_lt_multigen = tenths(original) < tenths(multigen);
  return check;
}

ComparisonResult cmd_compare(const ComparisonSpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  validate_comparison(spec);
  const RunConfig& base = spec.base;
  const auto behaviors = load_behaviors(base.behaviors_path);
  const judge::RuleBasedJudge judge(lexicon_from(base.lexicon_path));
  const model::ModelParams params = load_model(base.checkpoint_path);
  const std::string digest = model::file_sha256_hex(base.checkpoint_path);

  RunConfig echoed = base;
  echoed.model = params.config;
  echoed.variant = "comparison";
  json config_json = echoed;
  json variant_configs = json::array();
  for (std::size_t v = 0; v < spec.variants.size(); ++v) {
    variant_configs.push_back({{"label", kComparisonLabels[v]}, {"attack", spec.variants[v]}});
  }
  config_json["variants"] = variant_configs;
  const std::string fingerprint = config_fingerprint(config_json, digest, base.seed);

  ComparisonResult result;
  for (std::size_t v = 0; v < spec.variants.size(); ++v) {
    result.runs[v] = run_variant(params, behaviors, judge, std::string(kComparisonLabels[v]),
                                 spec.variants[v], base.seed, base.jobs,
                                 base.count_errored_as_failure, fingerprint);
  }
  result.monotonicity = check_monotonicity(result.runs[0].report, result.runs[1].report,
                                           result.runs[2].report);

  json variants = json::array();
  for (const VariantRun& run : result.runs) variants.push_back(variant_json(run));
  const MonotonicityCheck& m = result.monotonicity;
  json report = {{"config", config_json},
                 {"checkpoint_sha256", digest},
                 {"config_fingerprint", fingerprint},
                 {"variants", variants},
                 {"monotonicity",
                  {{"original_le_opt_init", m.original_le_opt_init},
                   {"opt_init_le_multigen", m.opt_init_le_multigen},
                   {"original_lt_multigen", m.original_lt_multigen},
                   {"holds", m.holds()}}},
                 {"metadata", metadata(start)}};
  const fs::path dir = base.output_dir;
  write_output(dir / kReportFile, dump(report));
  std::string csv = "variant,asr_percent\n";
  std::string summary;
  for (const VariantRun& run : result.runs) {
    csv += run.label + "," + judge::format_percent(run.report.asr_percent) + "\n";
    append_variant_table(summary, run);
    summary += "\n";
  }
  summary += std::string("ordering original <= opt_init <= opt_init_multigen, original < "
                         "opt_init_multigen: ") +
             (m.holds() ? "holds" : "violated") + "\n";
  write_output(dir / kTableFile, csv);
  write_output(dir / kSummaryFile, summary);
  return result;
}

}  // namespace embattack::harness
