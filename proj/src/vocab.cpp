#include "asw/vocab.hpp"

#include "asw/error.hpp"

namespace asw {

TokenSeq Vocabulary::tokenize(std::string_view text) const {
  TokenSeq out;
  out.reserve(text.size());
  for (const char c : text) {
    out.push_back(static_cast<unsigned char>(c));
  }
  return out;
}

std::string Vocabulary::detokenize(TokenSpan tokens) const {
  if (!tokens.empty() && tokens.back() == kEos) {
    tokens = tokens.first(tokens.size() - 1);
  }
  std::string out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId id = tokens[i];
    if (id >= 256) {
      throw Error(Errc::malformed_sequence,
                  "token " + std::to_string(id) + " at position " + std::to_string(i) +
                      " is not a byte");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

}  // namespace asw
