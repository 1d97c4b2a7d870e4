#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embattack/attack/types.h"
#include "embattack/model/tokenizer.h"
#include "embattack/model/train.h"

namespace embattack::harness {

using attack::Behavior;

// Half-open byte range [begin, end) of a plain-text entry.
struct ByteSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const ByteSpan&) const = default;
};

struct CorpusEntry {
  enum class Kind { kText, kDialogue };

  Kind kind = Kind::kText;
  std::string text;      // kText
  std::string prompt;    // kDialogue
  std::string response;  // kDialogue
  // Bytes of `text` (kText) or `response` (kDialogue) whose prediction enters
  // the loss. Empty scores every such byte and the closing EOS.
  std::vector<ByteSpan> scored;

  // Both throw ArgumentError for empty or out-of-range spans.
  static CorpusEntry plain(std::string text, std::vector<ByteSpan> scored = {});
  static CorpusEntry dialogue(std::string prompt, std::string response,
                              std::vector<ByteSpan> scored = {});
  bool operator==(const CorpusEntry&) const = default;
};

struct SynthOptions {
  std::size_t n_behaviors = 16;
  std::size_t n_distractors = 16;
  std::uint64_t seed = 0;
  // Longest user turn in training dialogues.
  std::size_t max_filler_bytes = 200;
};

struct SynthCorpus {
  std::vector<CorpusEntry> training;
  std::vector<Behavior> behaviors;
  // Harmful requests phrased with templates absent from training.
  std::vector<std::string> heldout_triggers;
};

inline constexpr std::string_view kRefusalResponse = "I'm sorry, I cannot help with that.";

// Deterministic in options. Throws ArgumentError when n_behaviors is 0 or
// exceeds the topic pool.
SynthCorpus synth_corpus(const SynthOptions& options);
std::size_t max_synth_behaviors();

std::vector<model::TrainingExample> to_training_examples(std::span<const CorpusEntry> corpus,
                                                         const model::ChatTemplate& chat = {});

// JSON Lines I/O. Readers throw ArgumentError with the offending line number;
// writers throw ArgumentError for strings that are not valid UTF-8.
std::string corpus_to_jsonl(std::span<const CorpusEntry> corpus);
std::vector<CorpusEntry> corpus_from_jsonl(std::string_view text);
std::string behaviors_to_jsonl(std::span<const Behavior> behaviors);
// Also enforces unique ids and non-empty fields.
std::vector<Behavior> behaviors_from_jsonl(std::string_view text);
std::string triggers_to_jsonl(std::span<const std::string> triggers);
std::vector<std::string> triggers_from_jsonl(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace embattack::harness
