#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "asw/codec.hpp"
#include "asw/vocab.hpp"

namespace asw {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

// C(n, k), zero when k < 0 or k > n.
BigInt binomial(std::int64_t n, std::int64_t k);

// Expected number of positions 1..T-1 whose window of the w preceding
// generated tokens contains at least one of m uniformly chosen substituted
// positions.
Rational expected_influenced_exact(std::int64_t T, std::int64_t m, std::int64_t w);
double expected_influenced(std::int64_t T, std::int64_t m, std::int64_t w);

// E(w + 1) - E(w) in closed form; requires 1 <= w <= T - 2.
Rational influenced_delta_exact(std::int64_t T, std::int64_t m, std::int64_t w);
double influenced_delta(std::int64_t T, std::int64_t m, std::int64_t w);

// Enumerates every m-subset; TooLarge when C(T, m) exceeds 10^6.
Rational brute_force_E(std::int64_t T, std::int64_t m, std::int64_t w);

enum class AttackKind { substitute, deletion, insertion };

const char* attack_kind_name(AttackKind kind) noexcept;
AttackKind parse_attack_kind(std::string_view name);

struct AttackSpec {
  AttackKind kind = AttackKind::substitute;
  std::size_t m = 1;
  std::uint64_t seed = 0;
};

// An attacked copy of the generated tokens. origin[i] is the index of the
// original token now at position i, or nullopt for inserted tokens.
struct AttackedText {
  TokenSeq tokens;
  std::vector<std::optional<std::size_t>> origin;
};

// Replacement and inserted tokens are uniform over the 256 byte ids;
// substitutions always differ from the token they replace.
AttackedText apply_attack(TokenSpan tokens, AttackKind kind, std::size_t m, ChaChaRng& rng);

struct TrialOutcome {
  std::size_t counted = 0;     // T for substitution/deletion, T + m for insertion
  std::size_t unaffected = 0;  // positions whose step distribution is unchanged
};

struct RobustnessReport {
  std::size_t T = 0;
  std::size_t w = 0;
  std::size_t m = 0;
  AttackKind kind = AttackKind::substitute;
  std::string policy;
  std::size_t trials = 0;
  double unaffected_ratio = 1.0;
  // Influenced positions per trial (counted - unaffected).
  double mc_E = 0.0;
  double mc_E_stderr = 0.0;
  // Closed form, only for substitution under windowed policies.
  std::optional<double> closed_form_E;
};

// Runs `trials` independent attacks on the generated tokens of a stegotext
// and compares every step distribution with the unattacked run. Attacks only
// touch generated tokens; the prompt and bridge live in the session.
RobustnessReport simulate_attack(const StegoSession& session, TokenSpan stego_tokens,
                                 const AttackSpec& attack, std::size_t trials);

// Single trial, exposed for tests.
TrialOutcome attack_trial(const StegoSession& session, TokenSpan stego_tokens,
                          const std::vector<QuantDist>& reference, const AttackedText& attacked);

// Step distributions of the unattacked run, one per generated token.
std::vector<QuantDist> reference_distributions(const StegoSession& session, TokenSpan stego_tokens);

std::string report_json(const RobustnessReport& report);
// Rows: policy x w, columns: m (one table per attack kind).
void write_report_csv(const std::filesystem::path& path, std::span<const RobustnessReport> reports);

}  // namespace asw
