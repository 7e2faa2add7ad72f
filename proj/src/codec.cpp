#include "asw/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "asw/error.hpp"

namespace asw {

using u128 = unsigned __int128;

Bits bytes_to_bits(std::span<const std::uint8_t> bytes) {
  Bits bits;
  bits.reserve(bytes.size() * 8);
  for (const std::uint8_t b : bytes) {
    for (int i = 7; i >= 0; --i) {
      bits.push_back(static_cast<std::uint8_t>((b >> i) & 1u));
    }
  }
  return bits;
}

std::vector<std::uint8_t> bits_to_bytes(std::span<const std::uint8_t> bits) {
  if (bits.size() % 8 != 0) {
    throw Error(Errc::domain_error, std::to_string(bits.size()) + " bits is not a whole number of bytes");
  }
  std::vector<std::uint8_t> bytes(bits.size() / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    bytes[i / 8] = static_cast<std::uint8_t>((bytes[i / 8] << 1) | (bits[i] & 1u));
  }
  return bytes;
}

std::optional<std::size_t> QuantDist::index_of(TokenId token) const noexcept {
  const auto it = std::lower_bound(support.begin(), support.end(), token);
  if (it == support.end() || *it != token) {
    return std::nullopt;
  }
  return static_cast<std::size_t>(it - support.begin());
}

std::uint64_t QuantDist::hash() const noexcept {
  const std::uint64_t h = fnv1a_of(std::span<const TokenId>(support));
  return fnv1a_of(std::span<const std::uint64_t>(freq), h);
}

QuantDist quantize(const ProbDist& dist, unsigned precision) {
  if (precision == 0 || precision > 40) {
    throw Error(Errc::precision_exhausted, "precision must lie in [1, 40]");
  }
  QuantDist qd;
  qd.precision = precision;
  qd.support = dist.support;
  const std::size_t n = qd.support.size();
  const std::uint64_t total = qd.total();
  if (n == 0) {
    throw Error(Errc::domain_error, "empty support");
  }
  if (n > total) {
    throw Error(Errc::precision_exhausted, "support of " + std::to_string(n) +
                                               " tokens exceeds 2^" + std::to_string(precision));
  }

  double mass = 0.0;
  for (const TokenId id : qd.support) {
    mass += dist.probs[id];
  }
  std::vector<double> remainder(n);
  qd.freq.resize(n);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ideal = dist.probs[qd.support[i]] / mass * static_cast<double>(total);
    const double base = std::floor(ideal);
    qd.freq[i] = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(base));
    remainder[i] = ideal - static_cast<double>(qd.freq[i]);
    assigned += static_cast<std::int64_t>(qd.freq[i]);
  }

  std::int64_t diff = static_cast<std::int64_t>(total) - assigned;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (diff > 0) {
    // Support ids are sorted, so a stable sort keeps lower ids first on ties.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; diff > 0; k = (k + 1) % n, --diff) {
      ++qd.freq[order[k]];
    }
  } else if (diff < 0) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] < remainder[b]; });
    std::size_t k = 0;
    while (diff < 0) {
      if (qd.freq[order[k]] > 1) {
        --qd.freq[order[k]];
        ++diff;
      }
      k = (k + 1) % n;
    }
  }

  qd.cumulative.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    qd.cumulative[i + 1] = qd.cumulative[i] + qd.freq[i];
  }
  return qd;
}

namespace {

// Keystream that whitens the frame so the embedded bits look uniform even
// for structured messages.
ChaChaRng frame_keystream(std::uint64_t prng_seed) { return ChaChaRng(mix_seed(prng_seed, 1), 1); }
ChaChaRng filler_stream(std::uint64_t prng_seed) { return ChaChaRng(mix_seed(prng_seed, 2), 2); }

std::uint64_t header_value(std::span<const std::uint8_t> header) {
  std::uint64_t v = 0;
  for (const std::uint8_t b : header) {
    v = (v << 1) | (b & 1u);
  }
  return v;
}

}  // namespace

Bits frame_payload(std::span<const std::uint8_t> message, std::uint64_t prng_seed) {
  if (message.size() > 0xffffffffull) {
    throw Error(Errc::domain_error, "message longer than the 32-bit length header allows");
  }
  Bits frame;
  frame.reserve(kHeaderBits + message.size());
  const auto len = static_cast<std::uint32_t>(message.size());
  for (int i = kHeaderBits - 1; i >= 0; --i) {
    frame.push_back(static_cast<std::uint8_t>((len >> i) & 1u));
  }
  for (const std::uint8_t b : message) {
    if (b > 1) {
      throw Error(Errc::domain_error, "message elements must be bits");
    }
    frame.push_back(b);
  }
  ChaChaRng key = frame_keystream(prng_seed);
  for (auto& b : frame) {
    b ^= static_cast<std::uint8_t>(key.next_bit());
  }
  return frame;
}

std::optional<std::size_t> framed_length(std::span<const std::uint8_t> bits, std::uint64_t prng_seed) {
  if (bits.size() < kHeaderBits) {
    return std::nullopt;
  }
  ChaChaRng key = frame_keystream(prng_seed);
  Bits header(kHeaderBits);
  for (std::size_t i = 0; i < kHeaderBits; ++i) {
    header[i] = static_cast<std::uint8_t>(bits[i] ^ static_cast<std::uint8_t>(key.next_bit()));
  }
  return kHeaderBits + header_value(header);
}

Bits deframe(std::span<const std::uint8_t> bits, std::uint64_t prng_seed) {
  const auto total = framed_length(bits, prng_seed);
  if (!total) {
    throw Error(Errc::framing_error, "only " + std::to_string(bits.size()) +
                                         " bits recovered, the length header needs 32");
  }
  if (bits.size() < *total) {
    throw Error(Errc::framing_error, "header announces " + std::to_string(*total - kHeaderBits) +
                                         " message bits but only " +
                                         std::to_string(bits.size() - kHeaderBits) + " were recovered");
  }
  ChaChaRng key = frame_keystream(prng_seed);
  Bits message;
  message.reserve(*total - kHeaderBits);
  for (std::size_t i = 0; i < *total; ++i) {
    const auto b = static_cast<std::uint8_t>(bits[i] ^ static_cast<std::uint8_t>(key.next_bit()));
    if (i >= kHeaderBits) {
      message.push_back(b);
    }
  }
  return message;
}

BitStream::BitStream(Bits payload, std::uint64_t prng_seed)
    : payload_(std::move(payload)), filler_(filler_stream(prng_seed)) {}

BitStream BitStream::framed(std::span<const std::uint8_t> message, std::uint64_t prng_seed) {
  return BitStream(frame_payload(message, prng_seed), prng_seed);
}

BitStream BitStream::raw(Bits bits, std::uint64_t prng_seed) {
  return BitStream(std::move(bits), prng_seed);
}

bool BitStream::next() {
  if (cursor_ < payload_.size()) {
    return payload_[cursor_++] != 0;
  }
  ++cursor_;
  return filler_.next_bit();
}

namespace {

void check_width(const QuantDist& qd, const CoderState& state) {
  const std::uint64_t range = state.high - state.low + 1;
  if (state.low >= state.high || range < 2 * qd.total()) {
    throw Error(Errc::precision_exhausted, "coder interval narrower than two quantization units");
  }
}

void narrow(const QuantDist& qd, std::size_t index, CoderState& state) {
  const std::uint64_t range = state.high - state.low + 1;
  const u128 r = range;
  const std::uint64_t hi = static_cast<std::uint64_t>((r * qd.cumulative[index + 1]) >> qd.precision);
  const std::uint64_t lo = static_cast<std::uint64_t>((r * qd.cumulative[index]) >> qd.precision);
  state.high = state.low + hi - 1;
  state.low = state.low + lo;
}

// Shared renormalization. `emit` receives resolved bits; `pull` supplies the
// next code bit on the embedding side (nullptr on the extraction side).
template <typename Emit, typename Pull>
void renormalize(CoderState& state, Emit&& emit, Pull&& pull) {
  for (;;) {
    if (state.high < kCodeHalf) {
      emit(0);
    } else if (state.low >= kCodeHalf) {
      emit(1);
      state.low -= kCodeHalf;
      state.high -= kCodeHalf;
      state.value -= kCodeHalf;
    } else if (state.low >= kCodeQuarter && state.high < kCodeHalf + kCodeQuarter) {
      ++state.pending;
      state.low -= kCodeQuarter;
      state.high -= kCodeQuarter;
      state.value -= kCodeQuarter;
    } else {
      break;
    }
    state.low <<= 1;
    state.high = (state.high << 1) | 1u;
    state.value = ((state.value << 1) | (pull() ? 1u : 0u)) & kCodeTop;
  }
}

}  // namespace

TokenId ac_embed_step(const QuantDist& qd, BitStream& stream, CoderState& state) {
  if (!state.primed) {
    for (unsigned i = 0; i < kCodeBits; ++i) {
      state.value = (state.value << 1) | (stream.next() ? 1u : 0u);
    }
    state.primed = true;
  }
  check_width(qd, state);
  const std::uint64_t range = state.high - state.low + 1;
  const u128 offset = static_cast<u128>(state.value - state.low) + 1;
  const auto target = static_cast<std::uint64_t>(((offset << qd.precision) - 1) / range);
  const auto it = std::upper_bound(qd.cumulative.begin() + 1, qd.cumulative.end(), target);
  const auto index = static_cast<std::size_t>(it - qd.cumulative.begin() - 1);
  narrow(qd, index, state);
  renormalize(
      state,
      [&state](int) {
        state.committed += 1 + state.pending;
        state.pending = 0;
      },
      [&stream] { return stream.next(); });
  return qd.support[index];
}

void ac_extract_step(const QuantDist& qd, TokenId token, CoderState& state, Bits& out) {
  const auto index = qd.index_of(token);
  if (!index) {
    throw DesyncError(0, "token " + std::to_string(token) + " outside the step distribution's support");
  }
  check_width(qd, state);
  narrow(qd, *index, state);
  renormalize(
      state,
      [&state, &out](int bit) {
        out.push_back(static_cast<std::uint8_t>(bit));
        for (; state.pending > 0; --state.pending) {
          out.push_back(static_cast<std::uint8_t>(bit ^ 1));
        }
        state.committed = out.size();
      },
      [] { return false; });
}

StegoSession::StegoSession(const LanguageModel& model, TokenSeq prompt, WindowPolicy policy,
                           SamplerConfig sampler, unsigned precision, std::uint64_t prng_seed,
                           std::size_t max_len)
    : model_(&model),
      prompt_(std::move(prompt)),
      policy_(std::move(policy)),
      sampler_(sampler),
      precision_(precision),
      prng_seed_(prng_seed),
      max_len_(max_len) {
  policy_.validate();
  sampler_.validate();
  if (max_len_ == 0) {
    throw Error(Errc::config_error, "max_len must be positive");
  }
  if (precision_ == 0 || precision_ > 40 || (std::uint64_t{1} << precision_) < model.vocab_size()) {
    throw Error(Errc::config_error, "precision must cover the vocabulary and be at most 40 bits");
  }
  for (const TokenId id : prompt_) {
    if (id >= model.vocab_size()) {
      throw Error(Errc::unknown_token, "prompt token outside vocabulary");
    }
  }
}

std::size_t StegoSession::step_limit() const noexcept {
  if (policy_.kind != WindowKind::full) {
    return max_len_;
  }
  const std::size_t room = model_->max_context() > prompt_.size() ? model_->max_context() - prompt_.size() : 0;
  return std::min(max_len_, room);
}

WindowedInference StegoSession::make_inference() const {
  return WindowedInference(*model_, policy_, prompt_);
}

QuantDist StegoSession::step_distribution(WindowedInference& inference, TokenSpan generated) const {
  ProbDist dist = dist_from_logits(inference.logits(generated), sampler_);
  if (model_->vocab_size() == Vocabulary::kSize) {
    // <bos> and <pad> have no text form; only bytes and <eos> can be emitted.
    std::erase_if(dist.support, [](TokenId id) { return id == Vocabulary::kBos || id == Vocabulary::kPad; });
    if (dist.support.empty()) {
      throw Error(Errc::numerical_error, "no emittable token in the step distribution");
    }
  }
  return quantize(dist, precision_);
}

EmbedResult StegoSession::embed(std::span<const std::uint8_t> message, const TraceSink& trace) const {
  BitStream stream = BitStream::framed(message, prng_seed_);
  WindowedInference inference = make_inference();
  CoderState state;
  EmbedResult result;
  result.payload_bits = stream.payload_bits();
  const std::size_t limit = step_limit();

  for (std::size_t t = 0; t < limit; ++t) {
    const QuantDist qd = step_distribution(inference, result.tokens);
    const std::uint64_t committed_before = state.committed;
    const TokenId token = ac_embed_step(qd, stream, state);
    if (trace) {
      const std::size_t index = *qd.index_of(token);
      trace(StepTrace{t, window_hash(prompt_, result.tokens, policy_), qd.hash(), qd.support.size(),
                      token, true, qd.cumulative[index], qd.freq[index], state.committed});
    }
    result.tokens.push_back(token);
    if (token == Vocabulary::kEos) {
      // The extractor never sees <eos>, so the payload must be complete
      // before it.
      if (committed_before < result.payload_bits) {
        throw CapacityError(committed_before, result.payload_bits);
      }
      result.ended_with_eos = true;
      break;
    }
  }
  if (state.committed < result.payload_bits) {
    throw CapacityError(state.committed, result.payload_bits);
  }
  result.bits_committed = state.committed;
  result.text = Vocabulary{}.detokenize(result.tokens);
  return result;
}

ExtractResult StegoSession::extract(TokenSpan stego_tokens, const ExtractOptions& options) const {
  WindowedInference inference = make_inference();
  CoderState state;
  ExtractResult result;
  std::optional<std::size_t> needed;

  for (std::size_t t = 0; t < stego_tokens.size(); ++t) {
    const TokenSpan prefix = stego_tokens.first(t);
    const TokenId token = stego_tokens[t];
    const QuantDist qd = step_distribution(inference, prefix);
    const auto index = qd.index_of(token);
    StepTrace step{t, window_hash(prompt_, prefix, policy_), qd.hash(), qd.support.size(), token,
                   index.has_value(), 0, 0, 0};
    if (index) {
      step.cum_low = qd.cumulative[*index];
      step.freq = qd.freq[*index];
      ac_extract_step(qd, token, state, result.committed_bits);
    } else if (options.diagnostic) {
      result.desync_steps.push_back(t);
    } else {
      throw DesyncError(t, "token " + std::to_string(token) + " outside the reconstructed support");
    }
    step.bits_committed = result.committed_bits.size();
    if (options.trace) {
      options.trace(step);
    }
    if (options.diagnostic) {
      result.steps.push_back(step);
    }
    if (!needed) {
      needed = framed_length(result.committed_bits, prng_seed_);
    }
    if (!options.full_pass && !options.diagnostic && needed && result.committed_bits.size() >= *needed) {
      break;
    }
  }

  if (options.diagnostic) {
    try {
      result.message = deframe(result.committed_bits, prng_seed_);
      result.framed_ok = true;
    } catch (const Error&) {
      result.framed_ok = false;
    }
    return result;
  }
  result.message = deframe(result.committed_bits, prng_seed_);
  result.framed_ok = true;
  return result;
}

ExtractResult StegoSession::extract_text(std::string_view stegotext, const ExtractOptions& options) const {
  return extract(Vocabulary{}.tokenize(stegotext), options);
}

double capacity(const EmbedResult& run) {
  if (run.tokens.empty()) {
    throw Error(Errc::domain_error, "capacity is undefined for an empty generation");
  }
  return static_cast<double>(run.bits_committed) / static_cast<double>(run.tokens.size());
}

}  // namespace asw
