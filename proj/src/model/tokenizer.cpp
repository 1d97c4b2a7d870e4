#include "embattack/model/tokenizer.h"

namespace embattack::model {

std::vector<TokenId> Tokenizer::tokenize(std::string_view text) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
  return ids;
}

std::string Tokenizer::detokenize(std::span<const TokenId> ids) const {
  std::string text;
  text.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= 0 && id < 256) text.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return text;
}

std::vector<TokenId> ChatTemplate::user_prefix(std::string_view prompt) const {
  std::vector<TokenId> ids{kBos, user};
  for (TokenId id : Tokenizer{}.tokenize(prompt)) ids.push_back(id);
  return ids;
}

std::vector<TokenId> ChatTemplate::assistant_turn(std::string_view response) const {
  std::vector<TokenId> ids{assistant};
  for (TokenId id : Tokenizer{}.tokenize(response)) ids.push_back(id);
  return ids;
}

std::vector<TokenId> ChatTemplate::dialogue(std::string_view prompt, std::string_view response,
                                            std::size_t* assistant_index) const {
  std::vector<TokenId> ids = user_prefix(prompt);
  if (assistant_index) *assistant_index = ids.size();
  for (TokenId id : assistant_turn(response)) ids.push_back(id);
  ids.push_back(kEos);
  return ids;
}

}  // namespace embattack::model
