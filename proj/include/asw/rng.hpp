#pragma once

#include <array>
#include <cstdint>

namespace asw {

// ChaCha20 keystream generator. Every random draw in the toolkit goes through
// this type so that results never depend on the standard library's
// distribution implementations.
class ChaChaRng {
 public:
  explicit ChaChaRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  // Standard normal via Box-Muller; the spare value is cached.
  double normal() noexcept;
  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;
  // Keystream bits, most significant bit of each word first.
  bool next_bit() noexcept;

 private:
  void refill() noexcept;

  std::array<std::uint32_t, 16> state_{};
  std::array<std::uint32_t, 16> block_{};
  unsigned index_ = 16;
  std::uint32_t bit_word_ = 0;
  unsigned bits_left_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// Derives an independent seed from (seed, salt); used to split one config
// seed into several streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept;

}  // namespace asw
