#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace embattack::model {

using TokenId = int;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by four specials.
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kUser = 258;
inline constexpr TokenId kAssistant = 259;
inline constexpr std::size_t kVocabSize = 260;

class Tokenizer {
 public:
  std::vector<TokenId> tokenize(std::string_view text) const;
  // Special ids carry no bytes and are dropped.
  std::string detokenize(std::span<const TokenId> ids) const;
  std::size_t vocab_size() const { return kVocabSize; }
};

// Chat rendering: BOS USER <prompt> [adversarial region] ASSISTANT <response> EOS.
struct ChatTemplate {
  TokenId user = kUser;
  TokenId assistant = kAssistant;

  // BOS USER <prompt>: everything before the adversarial region.
  std::vector<TokenId> user_prefix(std::string_view prompt) const;
  // ASSISTANT <response>, without EOS: the teacher-forced tail of an attack.
  std::vector<TokenId> assistant_turn(std::string_view response) const;
  // Full training dialogue; also returns the index of the ASSISTANT token.
  std::vector<TokenId> dialogue(std::string_view prompt, std::string_view response,
                                std::size_t* assistant_index = nullptr) const;
};

}  // namespace embattack::model
