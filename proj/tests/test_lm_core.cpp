#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "asw/backprop.hpp"
#include "asw/error.hpp"
#include "asw/model.hpp"
#include "asw/pretrain.hpp"
#include "asw/sampling.hpp"
#include "test_util.hpp"

using namespace asw;

TEST(Tokenizer, EmptyAndAscii) {
  const Vocabulary v;
  EXPECT_TRUE(v.tokenize("").empty());
  EXPECT_EQ(v.tokenize("AB"), (TokenSeq{65, 66}));
  EXPECT_EQ(v.detokenize(TokenSeq{}), "");
  EXPECT_EQ(v.detokenize(v.tokenize("hello")), "hello");
}

TEST(Tokenizer, RandomBlobRoundTrips) {
  ChaChaRng rng(9);
  std::string blob(1024, '\0');
  for (auto& c : blob) {
    c = static_cast<char>(rng.below(256));
  }
  const Vocabulary v;
  EXPECT_EQ(v.detokenize(v.tokenize(blob)), blob);
}

TEST(Tokenizer, TrailingEosStrippedInteriorReservedRejected) {
  const Vocabulary v;
  EXPECT_EQ(v.detokenize(TokenSeq{'x', Vocabulary::kEos}), "x");
  try {
    v.detokenize(TokenSeq{'x', Vocabulary::kBos, 'y'});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::malformed_sequence);
  }
  EXPECT_THROW(v.detokenize(TokenSeq{Vocabulary::kEos, 'y'}), Error);
}

TEST(Sampling, SoftmaxExamples) {
  const SamplerConfig plain;
  const auto a = dist_from_logits(std::vector<double>{0.0, 0.0}, plain);
  EXPECT_DOUBLE_EQ(a.probs[0], 0.5);
  EXPECT_DOUBLE_EQ(a.probs[1], 0.5);
  const auto b = dist_from_logits(std::vector<double>{std::log(1.0), std::log(3.0)}, plain);
  EXPECT_NEAR(b.probs[0], 0.25, 1e-15);
  EXPECT_NEAR(b.probs[1], 0.75, 1e-15);
  EXPECT_EQ(b.support, (std::vector<TokenId>{0, 1}));
}

TEST(Sampling, TopPCutoff) {
  SamplerConfig cfg;
  cfg.top_p = 0.5;
  const auto d = dist_from_logits(std::vector<double>{0.0, 10.0}, cfg);
  EXPECT_EQ(d.support, (std::vector<TokenId>{1}));
  EXPECT_DOUBLE_EQ(d.probs[1], 1.0);
  EXPECT_DOUBLE_EQ(d.probs[0], 0.0);
}

TEST(Sampling, TopPKeepsRelativeRatios) {
  SamplerConfig cfg;
  cfg.top_p = 0.8;
  const std::vector<double> logits{1.0, 2.0, 3.0, 0.5, 2.5};
  const auto full = softmax(logits);
  const auto d = dist_from_logits(logits, cfg);
  ASSERT_GE(d.support.size(), 2u);
  const TokenId a = d.support[0], b = d.support[1];
  EXPECT_NEAR(d.probs[a] / d.probs[b], full[a] / full[b], 1e-12);
  double sum = 0.0;
  for (const double p : d.probs) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Sampling, InvalidConfigAndNonFinite) {
  SamplerConfig cfg;
  cfg.temperature = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.temperature = 1.0;
  cfg.top_p = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_THROW(dist_from_logits(std::vector<double>{0.0, NAN}, SamplerConfig{}), Error);
}

TEST(Sampling, MultinomialFrequencies) {
  ProbDist single{{0.0, 1.0, 0.0}, {1}};
  ChaChaRng rng(1);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(sample_multinomial(single, rng), 1u);
  }
  ProbDist half{{0.5, 0.5}, {0, 1}};
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    ones += sample_multinomial(half, rng) == 1 ? 1 : 0;
  }
  EXPECT_NEAR(static_cast<double>(ones) / n, 0.5, 0.01);

  ChaChaRng r1(77), r2(77);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(sample_multinomial(half, r1), sample_multinomial(half, r2));
  }
}

TEST(Rng, StreamsDiffer) {
  ChaChaRng a(1, 0), b(1, 1), c(1, 0);
  EXPECT_NE(a.next_u64(), b.next_u64());
  c.next_u64();
  EXPECT_EQ(a.next_u64(), c.next_u64());
  EXPECT_NE(mix_seed(5, 1), mix_seed(5, 2));
}

TEST(Model, DeterministicAndTokenEmbeddingEquivalent) {
  const Transformer m = testutil::tiny_model();
  const TokenSeq ctx{Vocabulary::kBos, 'h', 'i', ' ', 't'};
  const auto a = m.next_logits(ctx);
  const auto b = m.next_logits(ctx);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, m.next_logits_emb(m.embed_tokens(ctx)));
}

TEST(Model, IncrementalCursorMatchesFreshEvaluation) {
  const Transformer m = testutil::tiny_model();
  const TokenSeq ctx{'a', 'b', 'c', 'd', 'e', 'f'};
  auto cursor = m.start();
  cursor->push_tokens(TokenSpan(ctx).first(3));
  auto copy = cursor->clone();
  cursor->push_tokens(TokenSpan(ctx).subspan(3));
  EXPECT_EQ(cursor->logits(), m.next_logits(ctx));
  EXPECT_EQ(copy->logits(), m.next_logits(TokenSpan(ctx).first(3)));
}

TEST(Model, ErrorPaths) {
  const Transformer m = testutil::tiny_model();
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::io_error;
  };
  EXPECT_EQ(code_of([&] { m.next_logits(TokenSeq{}); }), Errc::empty_context);
  EXPECT_EQ(code_of([&] { m.next_logits_emb(Matrix(0, m.embedding_dim())); }), Errc::empty_context);
  EXPECT_EQ(code_of([&] { m.next_logits(TokenSeq(m.max_context() + 1, 'a')); }), Errc::context_overflow);
  EXPECT_EQ(code_of([&] { m.embed_tokens(TokenSeq{400}); }), Errc::unknown_token);
  EXPECT_EQ(code_of([&] { m.next_logits_emb(Matrix(2, m.embedding_dim() + 1)); }), Errc::shape_error);
}

TEST(Model, EmbedTokensIsTableLookup) {
  const Transformer m = testutil::tiny_model();
  const std::size_t e = m.embedding_dim();
  EXPECT_EQ(m.embed_tokens(TokenSeq{}).rows(), 0u);
  const Matrix one = m.embed_tokens(TokenSeq{7});
  ASSERT_EQ(one.rows(), 1u);
  const auto table = m.params().subspan(m.layout().token_embedding + 7 * e, e);
  for (std::size_t c = 0; c < e; ++c) {
    EXPECT_EQ(one(0, c), table[c]);
  }
  const Matrix two = m.embed_tokens(TokenSeq{7, 7});
  EXPECT_EQ(two.rows(), 2u);
  EXPECT_TRUE(std::equal(two.row(0).begin(), two.row(0).end(), two.row(1).begin()));
}

TEST(Model, GoldenLogitsForBos) {
  // Default reference architecture, init seed 1, context [<bos>].
  const Transformer m = Transformer::initialize(ModelConfig{}, 1);
  const auto l = m.next_logits(TokenSeq{Vocabulary::kBos});
  ASSERT_EQ(l.size(), 259u);
  EXPECT_NEAR(l[0], testutil::kGoldenBos[0], 1e-12);
  EXPECT_NEAR(l[65], testutil::kGoldenBos[1], 1e-12);
  EXPECT_NEAR(l[257], testutil::kGoldenBos[2], 1e-12);
}

TEST(Model, SaveLoadRoundTrip) {
  const Transformer m = testutil::tiny_model();
  const auto path = testutil::temp_path("roundtrip.aswl");
  m.save(path);
  const Transformer back = Transformer::load(path);
  // The header carries no context length; loaded models use the default.
  ModelConfig expect = m.config();
  expect.max_context = ModelConfig{}.max_context;
  EXPECT_EQ(back.config(), expect);
  EXPECT_EQ(back.params_hash(), m.params_hash());
  EXPECT_EQ(back.next_logits(TokenSeq{1, 2, 3}), m.next_logits(TokenSeq{1, 2, 3}));
  std::filesystem::remove(path);
}

TEST(Model, LoadRejectsGarbage) {
  const auto path = testutil::temp_path("garbage.aswl");
  testutil::write_text(path, "not a model");
  EXPECT_THROW(Transformer::load(path), Error);
  std::filesystem::remove(path);
}

TEST(Model, EmbeddingGradientMatchesFiniteDifferences) {
  const Transformer m = testutil::tiny_model();
  const std::size_t e = m.embedding_dim();
  Matrix emb = m.embed_tokens(TokenSeq{'q', 'r', 's', 't'});
  const TokenId target = 'u';

  KvCache cache = m.new_cache();
  const SegmentTape tape = forward_segment(m, emb, cache);
  std::vector<double> d_logits(m.vocab_size(), 0.0);
  d_logits[target] = 1.0;
  Matrix d_hidden(emb.rows(), e);
  head_backward(m, cache.last_hidden, d_logits, d_hidden.row(emb.rows() - 1), {});
  BackwardRequest req;
  req.d_hidden = &d_hidden;
  const Matrix grad = backward_segment(m, cache, tape, req).d_input;

  const double h = 1e-5;
  for (std::size_t r = 0; r < emb.rows(); ++r) {
    for (std::size_t c = 0; c < e; c += 3) {
      const double keep = emb(r, c);
      emb(r, c) = keep + h;
      const double up = m.next_logits_emb(emb)[target];
      emb(r, c) = keep - h;
      const double down = m.next_logits_emb(emb)[target];
      emb(r, c) = keep;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grad(r, c), fd, 1e-6 * std::max(1.0, std::abs(fd))) << r << "," << c;
    }
  }
}

TEST(Model, ParameterGradientMatchesFiniteDifferences) {
  Transformer m = testutil::tiny_model();
  const TokenSeq seq{'a', 'b', 'a', 'c', Vocabulary::kEos};
  std::vector<double> grads(m.params().size(), 0.0);
  sequence_loss_grad(m, seq, grads);
  ChaChaRng rng(3);
  std::vector<double> scratch(m.params().size());
  const double h = 1e-5;
  for (int k = 0; k < 40; ++k) {
    const std::size_t i = rng.below(m.params().size());
    double& p = m.mutable_params()[i];
    const double keep = p;
    p = keep + h;
    const double up = sequence_loss_grad(m, seq, scratch);
    p = keep - h;
    const double down = sequence_loss_grad(m, seq, scratch);
    p = keep;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(grads[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "param " << i;
  }
}

TEST(Model, UniformSubsetModel) {
  const UniformSubsetModel u(259, {3, 5});
  const auto d = dist_from_logits(u.next_logits(TokenSeq{1}), SamplerConfig{});
  EXPECT_NEAR(d.probs[3], 0.5, 1e-12);
  EXPECT_NEAR(d.probs[5], 0.5, 1e-12);
  EXPECT_LT(d.probs[4], 1e-300);
}

TEST(Pretrain, CorpusIsDeterministic) {
  const auto a = synthetic_qa(5, 3);
  const auto b = synthetic_qa(5, 3);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].prompt, b[i].prompt);
    EXPECT_EQ(a[i].response, b[i].response);
    EXPECT_EQ(a[i].prompt.rfind("Q: ", 0), 0u);
  }
  EXPECT_EQ(qa_prompts(3, 1), qa_prompts(3, 1));
}

TEST(Pretrain, ShortRunLowersLossAndIsReproducible) {
  PretrainConfig cfg;
  cfg.model = testutil::tiny_config();
  cfg.steps = 30;
  cfg.batch = 2;
  cfg.corpus_size = 50;
  std::vector<double> losses;
  const Transformer a = pretrain(cfg, [&](std::size_t, double l) { losses.push_back(l); });
  const Transformer b = pretrain(cfg);
  EXPECT_EQ(a.params_hash(), b.params_hash());
  ASSERT_EQ(losses.size(), 30u);
  EXPECT_LT(losses.back(), losses.front());
}
