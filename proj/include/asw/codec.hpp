#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asw/model.hpp"
#include "asw/rng.hpp"
#include "asw/sampling.hpp"
#include "asw/vocab.hpp"
#include "asw/window.hpp"

namespace asw {

// One bit per element (0 or 1).
using Bits = std::vector<std::uint8_t>;

Bits bytes_to_bits(std::span<const std::uint8_t> bytes);
// Throws DomainError when the bit count is not a multiple of 8.
std::vector<std::uint8_t> bits_to_bytes(std::span<const std::uint8_t> bits);

inline constexpr unsigned kDefaultPrecision = 30;
inline constexpr unsigned kHeaderBits = 32;

// Integer frequencies over a sorted support summing to exactly 2^precision.
struct QuantDist {
  std::vector<TokenId> support;
  std::vector<std::uint64_t> freq;
  std::vector<std::uint64_t> cumulative;  // support.size() + 1 entries
  unsigned precision = kDefaultPrecision;

  std::uint64_t total() const noexcept { return std::uint64_t{1} << precision; }
  // Index of `token` in the support, if present.
  std::optional<std::size_t> index_of(TokenId token) const noexcept;
  std::uint64_t hash() const noexcept;
  bool operator==(const QuantDist&) const = default;
};

// Largest-remainder apportionment of 2^precision with a floor of one unit per
// support token; remainder ties go to the lower token id.
QuantDist quantize(const ProbDist& dist, unsigned precision = kDefaultPrecision);

// Payload source for embedding: the whitened frame (32-bit big-endian bit
// count + message) followed by an endless keyed filler stream.
class BitStream {
 public:
  static BitStream framed(std::span<const std::uint8_t> message, std::uint64_t prng_seed);
  // Unframed, unwhitened bits followed by filler.
  static BitStream raw(Bits bits, std::uint64_t prng_seed);

  bool next();
  std::size_t payload_bits() const noexcept { return payload_.size(); }
  std::size_t cursor() const noexcept { return cursor_; }

 private:
  BitStream(Bits payload, std::uint64_t prng_seed);

  Bits payload_;
  std::size_t cursor_ = 0;
  ChaChaRng filler_;
};

Bits frame_payload(std::span<const std::uint8_t> message, std::uint64_t prng_seed);
// Total frame length announced by the header, once 32 bits are available.
std::optional<std::size_t> framed_length(std::span<const std::uint8_t> bits, std::uint64_t prng_seed);
// Recovers the message from committed bits; FramingError when incomplete.
Bits deframe(std::span<const std::uint8_t> bits, std::uint64_t prng_seed);

inline constexpr unsigned kCodeBits = 62;
inline constexpr std::uint64_t kCodeTop = (std::uint64_t{1} << kCodeBits) - 1;
inline constexpr std::uint64_t kCodeHalf = std::uint64_t{1} << (kCodeBits - 1);
inline constexpr std::uint64_t kCodeQuarter = std::uint64_t{1} << (kCodeBits - 2);

// Range-coder interval shared by embedder and extractor. `value` is only
// used on the embedding side (the code point read from the payload).
struct CoderState {
  std::uint64_t low = 0;
  std::uint64_t high = kCodeTop;
  std::uint64_t value = 0;
  std::uint64_t pending = 0;    // underflow bits awaiting resolution
  std::uint64_t committed = 0;  // bits fully determined so far
  bool primed = false;

  bool operator==(const CoderState&) const = default;
};

// Selects the token whose subinterval contains the stream's code point and
// narrows the interval to it.
TokenId ac_embed_step(const QuantDist& qd, BitStream& stream, CoderState& state);

// Narrows the interval to `token` and appends the bits this resolves.
// Throws DesyncError (step 0) when the token is outside the support.
void ac_extract_step(const QuantDist& qd, TokenId token, CoderState& state, Bits& out);

struct StepTrace {
  std::size_t t = 0;
  std::uint64_t window_hash = 0;
  std::uint64_t dist_hash = 0;
  std::size_t support_size = 0;
  TokenId token = 0;
  bool in_support = true;
  std::uint64_t cum_low = 0;  // token's subinterval inside 2^precision
  std::uint64_t freq = 0;
  std::uint64_t bits_committed = 0;  // cumulative after this step
};

using TraceSink = std::function<void(const StepTrace&)>;

struct EmbedResult {
  TokenSeq tokens;  // generated tokens, including a terminating <eos> if any
  std::string text;
  bool ended_with_eos = false;
  std::uint64_t payload_bits = 0;
  std::uint64_t bits_committed = 0;
};

struct ExtractOptions {
  // Keep decoding after the payload is complete (trace comparisons).
  bool full_pass = false;
  // Record desyncs instead of throwing, leaving the coder state untouched at
  // the failing step, and keep going.
  bool diagnostic = false;
  TraceSink trace;
};

struct ExtractResult {
  Bits message;
  Bits committed_bits;
  std::vector<StepTrace> steps;
  std::vector<std::size_t> desync_steps;
  bool framed_ok = false;
};

class StegoSession {
 public:
  StegoSession(const LanguageModel& model, TokenSeq prompt, WindowPolicy policy,
               SamplerConfig sampler, unsigned precision = kDefaultPrecision,
               std::uint64_t prng_seed = 0, std::size_t max_len = 512);

  EmbedResult embed(std::span<const std::uint8_t> message, const TraceSink& trace = {}) const;
  ExtractResult extract(TokenSpan stego_tokens, const ExtractOptions& options = {}) const;
  ExtractResult extract_text(std::string_view stegotext, const ExtractOptions& options = {}) const;

  // The step-t quantized distribution given the generated prefix.
  QuantDist step_distribution(WindowedInference& inference, TokenSpan generated) const;
  WindowedInference make_inference() const;

  const LanguageModel& model() const noexcept { return *model_; }
  const TokenSeq& prompt() const noexcept { return prompt_; }
  const WindowPolicy& policy() const noexcept { return policy_; }
  const SamplerConfig& sampler() const noexcept { return sampler_; }
  unsigned precision() const noexcept { return precision_; }
  std::uint64_t prng_seed() const noexcept { return prng_seed_; }
  std::size_t max_len() const noexcept { return max_len_; }
  // Generation stops here: max_len, further limited by the model context
  // under the full-context policy.
  std::size_t step_limit() const noexcept;

 private:
  const LanguageModel* model_;
  TokenSeq prompt_;
  WindowPolicy policy_;
  SamplerConfig sampler_;
  unsigned precision_;
  std::uint64_t prng_seed_;
  std::size_t max_len_;
};

// Committed bits per generated token.
double capacity(const EmbedResult& run);

}  // namespace asw
