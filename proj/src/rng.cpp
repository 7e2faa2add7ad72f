#include "asw/rng.hpp"

#include <bit>
#include <cmath>
#include <numbers>

namespace asw {
namespace {

constexpr void quarter_round(std::array<std::uint32_t, 16>& x, int a, int b, int c, int d) noexcept {
  x[a] += x[b];
  x[d] = std::rotl(x[d] ^ x[a], 16);
  x[c] += x[d];
  x[b] = std::rotl(x[b] ^ x[c], 12);
  x[a] += x[b];
  x[d] = std::rotl(x[d] ^ x[a], 8);
  x[c] += x[d];
  x[b] = std::rotl(x[b] ^ x[c], 7);
}

}  // namespace

ChaChaRng::ChaChaRng(std::uint64_t seed, std::uint64_t stream) noexcept {
  // "expand 32-byte k"
  state_[0] = 0x61707865u;
  state_[1] = 0x3320646eu;
  state_[2] = 0x79622d32u;
  state_[3] = 0x6b206574u;
  // The 64-bit seed fills the key twice, the second copy bit-inverted.
  state_[4] = static_cast<std::uint32_t>(seed);
  state_[5] = static_cast<std::uint32_t>(seed >> 32);
  state_[6] = ~state_[4];
  state_[7] = ~state_[5];
  state_[8] = 0x243f6a88u;
  state_[9] = 0x85a308d3u;
  state_[10] = 0x13198a2eu;
  state_[11] = 0x03707344u;
  state_[12] = 0;  // block counter
  state_[13] = 0;
  state_[14] = static_cast<std::uint32_t>(stream);
  state_[15] = static_cast<std::uint32_t>(stream >> 32);
}

void ChaChaRng::refill() noexcept {
  block_ = state_;
  for (int round = 0; round < 10; ++round) {
    quarter_round(block_, 0, 4, 8, 12);
    quarter_round(block_, 1, 5, 9, 13);
    quarter_round(block_, 2, 6, 10, 14);
    quarter_round(block_, 3, 7, 11, 15);
    quarter_round(block_, 0, 5, 10, 15);
    quarter_round(block_, 1, 6, 11, 12);
    quarter_round(block_, 2, 7, 8, 13);
    quarter_round(block_, 3, 4, 9, 14);
  }
  for (int i = 0; i < 16; ++i) {
    block_[i] += state_[i];
  }
  if (++state_[12] == 0) {
    ++state_[13];
  }
  index_ = 0;
}

std::uint32_t ChaChaRng::next_u32() noexcept {
  if (index_ >= 16) {
    refill();
  }
  return block_[index_++];
}

std::uint64_t ChaChaRng::next_u64() noexcept {
  const std::uint64_t hi = next_u32();
  const std::uint64_t lo = next_u32();
  return (hi << 32) | lo;
}

double ChaChaRng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double ChaChaRng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) {
    u1 = uniform();
  }
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t ChaChaRng::below(std::uint64_t bound) noexcept {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = bound * (UINT64_MAX / bound);
  std::uint64_t x = next_u64();
  while (x >= limit) {
    x = next_u64();
  }
  return x % bound;
}

bool ChaChaRng::next_bit() noexcept {
  if (bits_left_ == 0) {
    bit_word_ = next_u32();
    bits_left_ = 32;
  }
  --bits_left_;
  return ((bit_word_ >> bits_left_) & 1u) != 0;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace asw
