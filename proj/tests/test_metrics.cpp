#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "asw/error.hpp"
#include "asw/metrics.hpp"
#include "test_util.hpp"

using namespace asw;

namespace {

ProbDist pd(std::vector<double> p) {
  ProbDist d;
  d.probs = std::move(p);
  for (std::size_t i = 0; i < d.probs.size(); ++i) d.support.push_back(static_cast<TokenId>(i));
  return d;
}

std::vector<std::string> words(std::string_view s) { return split_words(s); }

}  // namespace

TEST(Kl, Examples) {
  EXPECT_EQ(stepwise_kl(pd({0.3, 0.7}), pd({0.3, 0.7})), 0.0);
  EXPECT_NEAR(stepwise_kl(pd({0.5, 0.5}), pd({0.25, 0.75})), 0.14384, 5e-6);
  EXPECT_NEAR(stepwise_kl(pd({1.0, 0.0}), pd({0.5, 0.5})), std::numbers::ln2, 1e-15);
  EXPECT_TRUE(std::isinf(stepwise_kl(pd({0.5, 0.5}), pd({1.0, 0.0}))));
  EXPECT_THROW(stepwise_kl(pd({1.0}), pd({0.5, 0.5})), Error);
}

TEST(Kl, TotalVariation) {
  EXPECT_DOUBLE_EQ(total_variation(pd({0.5, 0.5}), pd({0.25, 0.75})), 0.25);
  EXPECT_EQ(total_variation(pd({0.1, 0.9}), pd({0.1, 0.9})), 0.0);
}

TEST(Pinsker, Examples) {
  EXPECT_EQ(pinsker_bound(std::vector<double>{}), 0.0);
  EXPECT_EQ(pinsker_bound(std::vector<double>{0.0, 0.0}), 0.0);
  // 2 bits of KL.
  EXPECT_NEAR(pinsker_bound(std::vector<double>{2.0 * std::numbers::ln2}), std::sqrt(std::numbers::ln2), 1e-12);
  EXPECT_NEAR(std::sqrt(std::numbers::ln2), 0.8326, 5e-5);
}

TEST(Pinsker, DominatesStepTvd) {
  ChaChaRng rng(12);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> p(6), q(6);
    double sp = 0, sq = 0;
    for (std::size_t k = 0; k < 6; ++k) {
      p[k] = std::exp(2 * rng.normal());
      q[k] = std::exp(2 * rng.normal());
      sp += p[k];
      sq += q[k];
    }
    for (std::size_t k = 0; k < 6; ++k) {
      p[k] /= sp;
      q[k] /= sq;
    }
    const double kl = stepwise_kl(pd(p), pd(q));
    EXPECT_LE(total_variation(pd(p), pd(q)), pinsker_bound(std::vector<double>{kl}) + 1e-12);
  }
}

TEST(KlRuns, FullPolicyIsExactlyZeroAndTracesAreConsistent) {
  const Transformer m = testutil::tiny_model(8);
  const TokenSeq prompt = Vocabulary{}.tokenize("Q: measure\nA:");
  const std::vector<WindowPolicy> policies{WindowPolicy::full_context(), WindowPolicy::basic(3),
                                           WindowPolicy::anchored(3, HardBridge{{'.'}})};
  const auto traces = kl_runs(m, prompt, policies, 20, 4);
  ASSERT_EQ(traces.size(), 3u);
  ASSERT_FALSE(traces[0].kl.empty());
  for (const double v : traces[0].kl) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(traces[0].mean(), 0.0);
  for (const auto& tr : traces) {
    ASSERT_EQ(tr.kl.size(), traces[0].kl.size());
    for (std::size_t t = 0; t < tr.kl.size(); ++t) {
      EXPECT_GE(tr.kl[t], 0.0);
      EXPECT_LE(tr.tvd[t], pinsker_bound(std::span(tr.kl).subspan(t, 1)) + 1e-12);
    }
  }
  EXPECT_GT(traces[1].mean(), 0.0);
  const KLTrace single = avg_kl_run(m, prompt, policies[1], 20, 4);
  EXPECT_EQ(single.kl, traces[1].kl);
}

TEST(Perplexity, UniformAndDeterministicModels) {
  const Vocabulary v;
  std::vector<TokenId> all(Vocabulary::kSize);
  for (TokenId i = 0; i < Vocabulary::kSize; ++i) all[i] = i;
  const UniformSubsetModel uniform(Vocabulary::kSize, all);
  EXPECT_NEAR(perplexity(uniform, v.tokenize("Q"), v.tokenize("any text")), 259.0, 1e-9);
  const UniformSubsetModel only_a(Vocabulary::kSize, {'a'});
  EXPECT_DOUBLE_EQ(perplexity(only_a, v.tokenize("Q"), v.tokenize("aaaa")), 1.0);
  EXPECT_THROW(perplexity(uniform, v.tokenize("Q"), TokenSeq{}), Error);
}

TEST(Perplexity, Delta) {
  EXPECT_DOUBLE_EQ(delta_ppl(std::vector<double>{2.0, 4.0}, std::vector<double>{5.0, 5.0}), 2.0);
  EXPECT_DOUBLE_EQ(delta_ppl(std::vector<double>{3.0}, std::vector<double>{3.0}), 0.0);
  EXPECT_THROW(delta_ppl(std::vector<double>{}, std::vector<double>{1.0}), Error);
}

TEST(TextQuality, Examples) {
  const auto ref = words("the cat sat on the mat");
  EXPECT_DOUBLE_EQ(bleu2(ref, ref), 1.0);
  EXPECT_DOUBLE_EQ(rouge_l(ref, ref), 1.0);
  const auto other = words("dogs bark loudly");
  EXPECT_EQ(bleu2(ref, other), 0.0);
  EXPECT_EQ(rouge_l(ref, other), 0.0);
  EXPECT_NEAR(rouge_l(words("a b c d"), words("a b d")), 6.0 / 7.0, 1e-12);
  EXPECT_EQ(bleu2(ref, std::vector<std::string>{}), 0.0);
  EXPECT_EQ(rouge_l(ref, std::vector<std::string>{}), 0.0);
}

TEST(TextQuality, BleuByHand) {
  // Unigram precision 3/3, bigram 1/2, brevity penalty exp(1 - 4/3).
  const double expected = std::exp(1.0 - 4.0 / 3.0) * std::sqrt(1.0 * 0.5);
  EXPECT_NEAR(bleu2(words("a b c d"), words("a b d")), expected, 1e-12);
  const double v = bleu2(words("x y z"), words("z y x x"));
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1.0);
}

TEST(TextQuality, SplitWords) {
  EXPECT_EQ(words("  a\tb\n c  "), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(words("").empty());
}
