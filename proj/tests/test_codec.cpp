#include <gtest/gtest.h>

#include <cmath>

#include "asw/codec.hpp"
#include "asw/error.hpp"
#include "test_util.hpp"

using namespace asw;

namespace {

ProbDist dist_of(std::vector<double> probs) {
  ProbDist d;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0) d.support.push_back(static_cast<TokenId>(i));
  }
  d.probs = std::move(probs);
  return d;
}

ProbDist random_dist(ChaChaRng& rng, std::size_t vocab) {
  std::vector<double> p(vocab, 0.0);
  double sum = 0.0;
  const bool peaked = rng.below(3) == 0;
  for (auto& v : p) {
    if (rng.below(4) == 0) continue;
    v = peaked ? std::exp(8.0 * rng.normal()) : rng.uniform() + 1e-3;
    sum += v;
  }
  if (sum == 0.0) {
    p[rng.below(vocab)] = sum = 1.0;
  }
  for (auto& v : p) v /= sum;
  return dist_of(std::move(p));
}

Bits random_bits(ChaChaRng& rng, std::size_t n) {
  Bits b(n);
  for (auto& x : b) x = rng.next_bit() ? 1 : 0;
  return b;
}

// Drops the zero-probability tail so uniform subset models have an exact support.
const SamplerConfig kTrunc{1.0, 0.999, 0};

}  // namespace

TEST(Quantize, Examples) {
  const auto a = quantize(dist_of({0.7, 0.3}), 4);
  EXPECT_EQ(a.freq, (std::vector<std::uint64_t>{11, 5}));
  EXPECT_EQ(a.cumulative, (std::vector<std::uint64_t>{0, 11, 16}));
  EXPECT_EQ(quantize(dist_of({0.5, 0.5}), 4).freq, (std::vector<std::uint64_t>{8, 8}));
  EXPECT_EQ(quantize(dist_of({1.0}), 4).freq, (std::vector<std::uint64_t>{16}));
}

TEST(Quantize, TiesGoToLowerId) {
  const auto q = quantize(dist_of({1.0 / 3, 1.0 / 3, 1.0 / 3}), 4);
  EXPECT_EQ(q.freq, (std::vector<std::uint64_t>{6, 5, 5}));
}

TEST(Quantize, TinyProbabilitiesKeepOneUnit) {
  const auto q = quantize(dist_of({1.0 - 2e-12, 1e-12, 1e-12}), 8);
  EXPECT_EQ(q.freq, (std::vector<std::uint64_t>{254, 1, 1}));
}

TEST(Quantize, Invariants) {
  ChaChaRng rng(4);
  for (int i = 0; i < 200; ++i) {
    const ProbDist d = random_dist(rng, 2 + rng.below(300));
    const unsigned q = 9 + static_cast<unsigned>(rng.below(32));
    const QuantDist qd = quantize(d, q);
    EXPECT_EQ(qd.support, d.support);
    EXPECT_EQ(qd.cumulative.back(), std::uint64_t{1} << q);
    bool floored = false;
    for (const TokenId id : d.support) {
      floored = floored || d.probs[id] * std::ldexp(1.0, static_cast<int>(q)) < 1.0;
    }
    for (std::size_t k = 0; k < qd.freq.size(); ++k) {
      EXPECT_GE(qd.freq[k], 1u);
      EXPECT_EQ(qd.cumulative[k + 1] - qd.cumulative[k], qd.freq[k]);
      // Without the one-unit floor kicking in, every share is a floor or a ceiling.
      const double exact = d.probs[qd.support[k]] * std::ldexp(1.0, static_cast<int>(q));
      if (!floored) {
        EXPECT_LT(std::abs(static_cast<double>(qd.freq[k]) - exact), 1.0 + 1e-9 * exact);
      }
    }
  }
}

TEST(Quantize, PrecisionExhausted) {
  std::vector<double> p(20, 0.05);
  try {
    quantize(dist_of(p), 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::precision_exhausted);
  }
}

TEST(Bits, ByteConversions) {
  EXPECT_EQ(bytes_to_bits(std::vector<std::uint8_t>{0xA5}), (Bits{1, 0, 1, 0, 0, 1, 0, 1}));
  EXPECT_EQ(bits_to_bytes(Bits{0, 1, 0, 0, 0, 0, 0, 1}), (std::vector<std::uint8_t>{'A'}));
  EXPECT_THROW(bits_to_bytes(Bits{1, 0, 1}), Error);
}

TEST(Framing, RoundTripAndTruncation) {
  const Bits msg{1, 1, 0, 1, 0};
  const Bits frame = frame_payload(msg, 42);
  ASSERT_EQ(frame.size(), 37u);
  EXPECT_EQ(framed_length(frame, 42), std::optional<std::size_t>(37));
  EXPECT_EQ(deframe(frame, 42), msg);
  EXPECT_EQ(deframe(frame_payload(Bits{}, 42), 42), Bits{});
  try {
    deframe(std::span(frame).first(36), 42);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::framing_error);
  }
  EXPECT_THROW(deframe(std::span(frame).first(20), 42), Error);
}

TEST(Coder, UniformFourPicksByCodeFraction) {
  const QuantDist qd = quantize(dist_of({0.25, 0.25, 0.25, 0.25}), 4);
  // Code fraction 0.5 ("10...") lands in the third quarter.
  for (const Bits& prefix : {Bits{1, 0}, Bits{1, 0, 1, 1, 1, 1}, Bits{0, 1}, Bits{1, 1}}) {
    BitStream s = BitStream::raw(prefix, 7);
    CoderState st;
    const TokenId tok = ac_embed_step(qd, s, st);
    EXPECT_EQ(tok, static_cast<TokenId>(prefix[0] * 2 + prefix[1]));
    EXPECT_EQ(st.committed, 2u);
  }
}

TEST(Coder, SingleTokenSupportCarriesNothing) {
  const QuantDist qd = quantize(dist_of({0.0, 1.0}), 10);
  BitStream s = BitStream::raw(Bits{1, 0, 1}, 0);
  CoderState st;
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(ac_embed_step(qd, s, st), 1u);
  }
  EXPECT_EQ(st.committed, 0u);
}

TEST(Coder, ExtractRejectsOutsideSupport) {
  const QuantDist qd = quantize(dist_of({0.5, 0.5, 0.0}), 10);
  CoderState st;
  Bits out;
  EXPECT_THROW(ac_extract_step(qd, 2, st, out), DesyncError);
}

TEST(Coder, RandomRoundTrips) {
  // Embedding random bits through random distributions and extracting them
  // again must reproduce exactly the committed prefix of the bit stream.
  ChaChaRng rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    const unsigned q = 9 + static_cast<unsigned>(rng.below(22));
    const std::size_t steps = 1 + rng.below(40);
    const Bits bits = random_bits(rng, 64 + rng.below(200));
    std::vector<QuantDist> dists;
    for (std::size_t t = 0; t < steps; ++t) {
      dists.push_back(quantize(random_dist(rng, 2 + rng.below(200)), q));
    }
    BitStream stream = BitStream::raw(bits, trial);
    CoderState enc;
    TokenSeq tokens;
    for (const auto& qd : dists) {
      tokens.push_back(ac_embed_step(qd, stream, enc));
    }
    CoderState dec;
    Bits out;
    for (std::size_t t = 0; t < steps; ++t) {
      ac_extract_step(dists[t], tokens[t], dec, out);
    }
    ASSERT_EQ(out.size(), enc.committed) << "trial " << trial;
    BitStream replay = BitStream::raw(bits, trial);
    for (std::size_t i = 0; i < out.size(); ++i) {
      ASSERT_EQ(out[i], replay.next() ? 1 : 0) << "trial " << trial << " bit " << i;
    }
    EXPECT_EQ(enc.low, dec.low);
    EXPECT_EQ(enc.high, dec.high);
  }
}

TEST(Session, UniformModelCapacity) {
  // Four equally likely tokens carry exactly two bits each.
  const UniformSubsetModel model(Vocabulary::kSize, {'a', 'b', 'c', 'd'});
  const StegoSession session(model, TokenSeq{'Q'}, WindowPolicy::basic(4), kTrunc, 30, 5, 64);
  ChaChaRng rng(1);
  const Bits msg = random_bits(rng, 40);
  const EmbedResult r = session.embed(msg);
  EXPECT_FALSE(r.ended_with_eos);
  EXPECT_EQ(r.tokens.size(), 64u);
  EXPECT_EQ(r.bits_committed, 128u);
  EXPECT_DOUBLE_EQ(capacity(r), 2.0);
  EXPECT_EQ(session.extract(r.tokens).message, msg);
}

TEST(Session, EmptyMessageAndCapacityErrors) {
  const UniformSubsetModel two(Vocabulary::kSize, {'x', 'y'});
  const StegoSession small(two, TokenSeq{'Q'}, WindowPolicy::full_context(), kTrunc, 30, 1, 40);
  const EmbedResult r = small.embed(Bits{});
  EXPECT_EQ(r.payload_bits, 32u);
  EXPECT_EQ(small.extract(r.tokens).message, Bits{});

  try {
    small.embed(Bits(20, 1));
    FAIL();
  } catch (const CapacityError& e) {
    EXPECT_LT(e.bits_embedded(), e.bits_required());
    EXPECT_EQ(e.bits_required(), 52u);
  }

  const UniformSubsetModel one(Vocabulary::kSize, {'z'});
  const StegoSession stuck(one, TokenSeq{'Q'}, WindowPolicy::full_context(), kTrunc, 30, 1, 40);
  EXPECT_THROW(stuck.embed(Bits{}), CapacityError);
  EXPECT_DOUBLE_EQ(capacity(EmbedResult{TokenSeq(10, 'z'), "", false, 32, 0}), 0.0);
  EXPECT_THROW(capacity(EmbedResult{}), Error);
}

TEST(Session, EosCanEndTheText) {
  std::vector<TokenId> allowed{Vocabulary::kEos};
  for (TokenId c = 'a'; c <= 'p'; ++c) allowed.push_back(c);
  const UniformSubsetModel model(Vocabulary::kSize, allowed);
  bool saw_eos = false;
  for (std::uint64_t seed = 0; seed < 40 && !saw_eos; ++seed) {
    const StegoSession s(model, TokenSeq{'Q'}, WindowPolicy::full_context(), kTrunc, 30, seed, 200);
    try {
      const EmbedResult r = s.embed(Bits{1, 0, 1});
      if (r.ended_with_eos) {
        saw_eos = true;
        EXPECT_EQ(r.tokens.back(), Vocabulary::kEos);
        EXPECT_EQ(s.extract(r.tokens).message, (Bits{1, 0, 1}));
        EXPECT_EQ(s.extract_text(r.text).message, (Bits{1, 0, 1}));
      }
    } catch (const CapacityError&) {
    }
  }
  EXPECT_TRUE(saw_eos);
}

class SessionWithModel : public ::testing::Test {
 protected:
  Transformer model = testutil::tiny_model();
  TokenSeq prompt = Vocabulary{}.tokenize("Q: tell me\nA:");
};

TEST_F(SessionWithModel, RoundTripsAcrossPolicies) {
  const std::vector<WindowPolicy> policies{
      WindowPolicy::full_context(), WindowPolicy::basic(5),
      WindowPolicy::anchored(5, HardBridge{{'.', '.', '.', ' '}}),
      WindowPolicy::anchored(5, SoftBridge{model.embed_tokens(TokenSeq{'#', '#'})},
                             BridgeActivation::after_overflow)};
  ChaChaRng rng(8);
  for (const auto& p : policies) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const StegoSession s(model, prompt, p, SamplerConfig{}, 30, seed, 100);
      const Bits msg = random_bits(rng, 48);
      const EmbedResult r = s.embed(msg);
      EXPECT_EQ(s.extract(r.tokens).message, msg);
      const ExtractResult all = s.extract(r.tokens, ExtractOptions{true, false, {}});
      EXPECT_EQ(all.committed_bits.size(), r.bits_committed);
    }
  }
}

TEST_F(SessionWithModel, DeterministicEmbedding) {
  const StegoSession s(model, prompt, WindowPolicy::basic(4), SamplerConfig{}, 30, 3, 80);
  const Bits msg{1, 0, 0, 1, 1, 1};
  EXPECT_EQ(s.embed(msg).tokens, s.embed(msg).tokens);
}

TEST_F(SessionWithModel, TopPSupportAndDesync) {
  SamplerConfig sampler;
  sampler.top_p = 0.6;
  const StegoSession s(model, prompt, WindowPolicy::basic(6), sampler, 30, 2, 80);
  const Bits msg{1, 1, 0, 0, 1};
  const EmbedResult r = s.embed(msg);
  ASSERT_EQ(s.extract(r.tokens).message, msg);

  WindowedInference inf = s.make_inference();
  const QuantDist first = s.step_distribution(inf, TokenSeq{});
  TokenId outside = 0;
  while (first.index_of(outside)) ++outside;
  TokenSeq bad = r.tokens;
  bad[0] = outside;
  try {
    s.extract(bad);
    FAIL();
  } catch (const DesyncError& e) {
    EXPECT_EQ(e.step(), 0u);
  }
  const ExtractResult diag = s.extract(bad, ExtractOptions{false, true, {}});
  ASSERT_FALSE(diag.desync_steps.empty());
  EXPECT_EQ(diag.desync_steps.front(), 0u);
}

TEST_F(SessionWithModel, TruncationAndWrongSeed) {
  const StegoSession s(model, prompt, WindowPolicy::basic(6), SamplerConfig{}, 30, 9, 120);
  const Bits msg(40, 1);
  const EmbedResult r = s.embed(msg);
  try {
    s.extract(TokenSpan(r.tokens).first(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::framing_error);
  }
  const StegoSession wrong(model, prompt, WindowPolicy::basic(6), SamplerConfig{}, 30, 10, 120);
  try {
    EXPECT_NE(wrong.extract(r.tokens).message, msg);
  } catch (const Error&) {
  }
}

TEST_F(SessionWithModel, NeverEmitsBosOrPad) {
  const StegoSession s(model, prompt, WindowPolicy::full_context(), SamplerConfig{}, 30, 1, 60);
  WindowedInference inf = s.make_inference();
  const QuantDist qd = s.step_distribution(inf, TokenSeq{});
  EXPECT_FALSE(qd.index_of(Vocabulary::kBos));
  EXPECT_FALSE(qd.index_of(Vocabulary::kPad));
  EXPECT_TRUE(qd.index_of(Vocabulary::kEos));
}

TEST_F(SessionWithModel, ConfigValidation) {
  EXPECT_THROW(StegoSession(model, prompt, WindowPolicy::basic(3), SamplerConfig{}, 8), Error);
  EXPECT_THROW(StegoSession(model, prompt, WindowPolicy::basic(3), SamplerConfig{}, 41), Error);
  EXPECT_THROW(StegoSession(model, prompt, WindowPolicy::basic(3), SamplerConfig{}, 30, 0, 0), Error);
  const StegoSession full(model, TokenSeq(100, 'a'), WindowPolicy::full_context(), SamplerConfig{}, 30, 0, 512);
  EXPECT_EQ(full.step_limit(), 28u);
}
