#include <gtest/gtest.h>

#include <filesystem>

#include "asw/error.hpp"
#include "asw/robust.hpp"
#include "test_util.hpp"

using namespace asw;

TEST(Influence, SpotValues) {
  EXPECT_EQ(expected_influenced_exact(5, 1, 2), Rational(7, 5));
  EXPECT_DOUBLE_EQ(expected_influenced(5, 1, 2), 1.4);
  EXPECT_EQ(brute_force_E(5, 1, 2), Rational(7, 5));
  EXPECT_EQ(brute_force_E(3, 1, 1), Rational(2, 3));
  EXPECT_EQ(brute_force_E(2, 1, 1), Rational(1, 2));
}

TEST(Influence, EdgeCases) {
  for (std::int64_t T = 1; T <= 9; ++T) {
    for (std::int64_t w = 1; w <= T; ++w) {
      EXPECT_EQ(expected_influenced_exact(T, 0, w), 0);
      EXPECT_EQ(expected_influenced_exact(T, T, w), T - 1);
    }
  }
  EXPECT_THROW(expected_influenced_exact(5, 6, 2), Error);
  EXPECT_THROW(expected_influenced_exact(5, 1, 0), Error);
}

TEST(Influence, ClosedFormMatchesEnumeration) {
  for (std::int64_t T = 1; T <= 10; ++T) {
    for (std::int64_t m = 0; m <= T; ++m) {
      for (std::int64_t w = 1; w <= T; ++w) {
        ASSERT_EQ(expected_influenced_exact(T, m, w), brute_force_E(T, m, w)) << T << " " << m << " " << w;
      }
    }
  }
}

TEST(Influence, DeltaIsForwardDifference) {
  EXPECT_EQ(influenced_delta_exact(5, 1, 2), Rational(2, 5));
  EXPECT_EQ(influenced_delta_exact(5, 1, 2),
            expected_influenced_exact(5, 1, 3) - expected_influenced_exact(5, 1, 2));
  EXPECT_EQ(influenced_delta_exact(8, 0, 3), 0);
  EXPECT_EQ(influenced_delta_exact(8, 6, 3), 0);  // m > T - w
  EXPECT_GT(influenced_delta_exact(8, 5, 3), 0);
  EXPECT_THROW(influenced_delta_exact(5, 1, 4), Error);
  EXPECT_THROW(influenced_delta_exact(5, 1, 0), Error);
}

TEST(Influence, BruteForceRefusesHugeInputs) {
  try {
    brute_force_E(40, 20, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::too_large);
  }
}

TEST(Influence, Binomial) {
  EXPECT_EQ(binomial(5, 2), 10);
  EXPECT_EQ(binomial(5, -1), 0);
  EXPECT_EQ(binomial(5, 6), 0);
  EXPECT_EQ(binomial(60, 30), BigInt("118264581564861424"));
}

TEST(Attack, KindNames) {
  for (const AttackKind k : {AttackKind::substitute, AttackKind::deletion, AttackKind::insertion}) {
    EXPECT_EQ(parse_attack_kind(attack_kind_name(k)), k);
  }
  EXPECT_THROW(parse_attack_kind("shuffle"), Error);
}

TEST(Attack, ApplyAttackShapes) {
  const TokenSeq text{'a', 'b', 'c', 'd', 'e', 'f'};
  ChaChaRng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto sub = apply_attack(text, AttackKind::substitute, 2, rng);
    ASSERT_EQ(sub.tokens.size(), text.size());
    int changed = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
      EXPECT_EQ(sub.origin[i], std::optional<std::size_t>(i));
      changed += sub.tokens[i] != text[i] ? 1 : 0;
      EXPECT_LT(sub.tokens[i], 256u);
    }
    EXPECT_EQ(changed, 2);

    const auto del = apply_attack(text, AttackKind::deletion, 2, rng);
    ASSERT_EQ(del.tokens.size(), 4u);
    for (std::size_t i = 0; i < del.tokens.size(); ++i) {
      ASSERT_TRUE(del.origin[i]);
      EXPECT_EQ(del.tokens[i], text[*del.origin[i]]);
      if (i > 0) {
        EXPECT_LT(*del.origin[i - 1], *del.origin[i]);
      }
    }

    const auto ins = apply_attack(text, AttackKind::insertion, 3, rng);
    ASSERT_EQ(ins.tokens.size(), 9u);
    int inserted = 0;
    for (std::size_t i = 0; i < ins.tokens.size(); ++i) {
      if (ins.origin[i]) {
        EXPECT_EQ(ins.tokens[i], text[*ins.origin[i]]);
      } else {
        ++inserted;
      }
    }
    EXPECT_EQ(inserted, 3);
  }
}

class RobustSession : public ::testing::Test {
 protected:
  Transformer model = testutil::tiny_model(5);
  TokenSeq prompt = Vocabulary{}.tokenize("Q: robust?\nA:");

  TokenSeq stego(const StegoSession& s) {
    const EmbedResult r = s.embed(Bits{1, 0, 1, 1});
    TokenSeq t = r.tokens;
    if (r.ended_with_eos) t.pop_back();
    return t;
  }
};

TEST_F(RobustSession, FullContextSubstitutionRatio) {
  const StegoSession s(model, prompt, WindowPolicy::full_context(), SamplerConfig{}, 30, 2, 40);
  const TokenSeq text = stego(s);
  const std::size_t T = text.size();
  ASSERT_GE(T, 10u);
  const auto reference = reference_distributions(s, text);
  for (const std::size_t j : {std::size_t{0}, std::size_t{4}, T - 1}) {
    AttackedText attacked;
    attacked.tokens = text;
    attacked.tokens[j] = text[j] == 'Z' ? 'Y' : 'Z';
    for (std::size_t i = 0; i < T; ++i) attacked.origin.push_back(i);
    const TrialOutcome o = attack_trial(s, text, reference, attacked);
    EXPECT_EQ(o.counted, T);
    EXPECT_EQ(o.unaffected, j + 1);
  }
}

TEST_F(RobustSession, NoModificationLeavesEverythingUnaffected) {
  const StegoSession s(model, prompt, WindowPolicy::anchored(4, HardBridge{{'.', ' '}}), SamplerConfig{}, 30, 2, 30);
  const TokenSeq text = stego(s);
  for (const AttackKind k : {AttackKind::substitute, AttackKind::deletion, AttackKind::insertion}) {
    const RobustnessReport r = simulate_attack(s, text, AttackSpec{k, 0, 1}, 3);
    EXPECT_DOUBLE_EQ(r.unaffected_ratio, 1.0);
    EXPECT_DOUBLE_EQ(r.mc_E, 0.0);
  }
}

TEST_F(RobustSession, ContextFreeModelIsNeverAffected) {
  const UniformSubsetModel flat(Vocabulary::kSize, {'a', 'b', 'c', 'd'});
  const StegoSession s(flat, prompt, WindowPolicy::basic(3), SamplerConfig{1.0, 0.999, 0}, 30, 2, 30);
  const TokenSeq text = stego(s);
  const RobustnessReport r = simulate_attack(s, text, AttackSpec{AttackKind::substitute, 2, 1}, 10);
  EXPECT_DOUBLE_EQ(r.unaffected_ratio, 1.0);
}

TEST_F(RobustSession, WindowedSubstitutionAgreesWithTheory) {
  const StegoSession s(model, prompt, WindowPolicy::anchored(5, HardBridge{{'.', ' '}}), SamplerConfig{}, 30, 7, 40);
  const TokenSeq text = stego(s);
  const RobustnessReport r = simulate_attack(s, text, AttackSpec{AttackKind::substitute, 2, 9}, 300);
  ASSERT_TRUE(r.closed_form_E);
  EXPECT_EQ(r.T, text.size());
  EXPECT_EQ(r.w, 5u);
  EXPECT_EQ(r.policy, "asw-hard");
  EXPECT_LT(std::abs(r.mc_E - *r.closed_form_E), 4.0 * r.mc_E_stderr + 1e-9);

  const RobustnessReport again = simulate_attack(s, text, AttackSpec{AttackKind::substitute, 2, 9}, 300);
  EXPECT_EQ(again.mc_E, r.mc_E);
}

TEST_F(RobustSession, DeletionAndInsertionDenominators) {
  const StegoSession s(model, prompt, WindowPolicy::basic(4), SamplerConfig{}, 30, 3, 30);
  const TokenSeq text = stego(s);
  const auto reference = reference_distributions(s, text);
  ChaChaRng rng(1);
  const AttackedText del = apply_attack(text, AttackKind::deletion, 2, rng);
  const TrialOutcome d = attack_trial(s, text, reference, del);
  EXPECT_EQ(d.counted, text.size());
  EXPECT_LE(d.unaffected, text.size() - 2);
  const AttackedText ins = apply_attack(text, AttackKind::insertion, 3, rng);
  const TrialOutcome i = attack_trial(s, text, reference, ins);
  EXPECT_EQ(i.counted, text.size() + 3);
  EXPECT_LE(i.unaffected, text.size());
  EXPECT_FALSE(simulate_attack(s, text, AttackSpec{AttackKind::insertion, 1, 1}, 2).closed_form_E);
}

TEST_F(RobustSession, ReportOutputs) {
  const StegoSession s(model, prompt, WindowPolicy::basic(4), SamplerConfig{}, 30, 3, 30);
  const TokenSeq text = stego(s);
  std::vector<RobustnessReport> reports;
  for (std::size_t m : {1u, 2u}) {
    reports.push_back(simulate_attack(s, text, AttackSpec{AttackKind::substitute, m, 1}, 5));
  }
  const std::string json = report_json(reports[0]);
  EXPECT_NE(json.find("\"unaffected_ratio\""), std::string::npos);
  EXPECT_NE(json.find("\"kind\": \"substitute\""), std::string::npos);
  const auto path = testutil::temp_path("robust.csv");
  write_report_csv(path, reports);
  const std::string csv = testutil::read_text(path);
  EXPECT_NE(csv.find("m=1"), std::string::npos);
  EXPECT_NE(csv.find("m=2"), std::string::npos);
  EXPECT_NE(csv.find("basic"), std::string::npos);
  std::filesystem::remove(path);
  EXPECT_THROW(simulate_attack(s, text, AttackSpec{AttackKind::substitute, text.size() + 1, 1}, 1), Error);
}
