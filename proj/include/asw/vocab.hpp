#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace asw {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;
using TokenSpan = std::span<const TokenId>;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by the reserved
// <bos>, <eos> and <pad> ids.
class Vocabulary {
 public:
  static constexpr TokenId kBos = 256;
  static constexpr TokenId kEos = 257;
  static constexpr TokenId kPad = 258;
  static constexpr std::uint32_t kSize = 259;

  std::uint32_t size() const noexcept { return kSize; }
  bool is_reserved(TokenId id) const noexcept { return id >= 256 && id < kSize; }
  bool is_valid(TokenId id) const noexcept { return id < kSize; }

  TokenSeq tokenize(std::string_view text) const;
  // Strips one trailing <eos>; throws MalformedSequence on any other reserved id.
  std::string detokenize(TokenSpan tokens) const;
};

}  // namespace asw
