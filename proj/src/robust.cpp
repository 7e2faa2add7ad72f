#include "asw/robust.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

#include "asw/error.hpp"

namespace asw {

BigInt binomial(std::int64_t n, std::int64_t k) {
  if (k < 0 || n < 0 || k > n) {
    return 0;
  }
  k = std::min(k, n - k);
  BigInt out = 1;
  for (std::int64_t i = 1; i <= k; ++i) {
    out = out * (n - k + i) / i;
  }
  return out;
}

namespace {

void check_args(std::int64_t T, std::int64_t m, std::int64_t w) {
  if (T < 1 || m < 0 || m > T || w < 1) {
    throw Error(Errc::domain_error, "need T >= 1, 0 <= m <= T, w >= 1 (got T=" + std::to_string(T) +
                                        ", m=" + std::to_string(m) + ", w=" + std::to_string(w) + ")");
  }
}

double to_double(const Rational& r) { return r.convert_to<double>(); }

}  // namespace

Rational expected_influenced_exact(std::int64_t T, std::int64_t m, std::int64_t w) {
  check_args(T, m, w);
  const BigInt total = binomial(T, m);
  BigInt untouched = 0;
  for (std::int64_t i = 1; i <= std::min(w, T - 1); ++i) {
    untouched += binomial(T - i, m);
  }
  untouched += std::max<std::int64_t>(0, T - 1 - w) * binomial(T - w, m);
  return Rational(T - 1) - Rational(untouched, total);
}

double expected_influenced(std::int64_t T, std::int64_t m, std::int64_t w) {
  return to_double(expected_influenced_exact(T, m, w));
}

Rational influenced_delta_exact(std::int64_t T, std::int64_t m, std::int64_t w) {
  check_args(T, m, w);
  if (w > T - 2) {
    throw Error(Errc::domain_error, "delta needs 1 <= w <= T-2");
  }
  return Rational((T - w - 1) * binomial(T - w - 1, m - 1), binomial(T, m));
}

double influenced_delta(std::int64_t T, std::int64_t m, std::int64_t w) {
  return to_double(influenced_delta_exact(T, m, w));
}

Rational brute_force_E(std::int64_t T, std::int64_t m, std::int64_t w) {
  check_args(T, m, w);
  const BigInt count = binomial(T, m);
  if (count > 1000000 || T > 63) {
    throw Error(Errc::too_large, "C(" + std::to_string(T) + ", " + std::to_string(m) +
                                     ") subsets is beyond the enumeration limit");
  }
  // Walk all m-subsets as index combinations in lexicographic order.
  std::vector<std::int64_t> pick(static_cast<std::size_t>(m));
  for (std::int64_t k = 0; k < m; ++k) {
    pick[k] = k;
  }
  BigInt influenced = 0;
  std::uint64_t subsets = 0;
  for (;;) {
    std::uint64_t mask = 0;
    for (const auto p : pick) {
      mask |= std::uint64_t{1} << p;
    }
    for (std::int64_t i = 1; i < T; ++i) {
      const std::int64_t lo = std::max<std::int64_t>(0, i - w);
      const std::uint64_t ctx = ((std::uint64_t{1} << i) - 1) & ~((std::uint64_t{1} << lo) - 1);
      if ((ctx & mask) != 0) {
        ++influenced;
      }
    }
    ++subsets;
    std::int64_t k = m - 1;
    while (k >= 0 && pick[k] == T - m + k) {
      --k;
    }
    if (k < 0) {
      break;
    }
    ++pick[k];
    for (std::int64_t j = k + 1; j < m; ++j) {
      pick[j] = pick[j - 1] + 1;
    }
  }
  return Rational(influenced, BigInt(subsets));
}

const char* attack_kind_name(AttackKind kind) noexcept {
  switch (kind) {
    case AttackKind::substitute: return "substitute";
    case AttackKind::deletion: return "delete";
    case AttackKind::insertion: return "insert";
  }
  return "?";
}

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "substitute") return AttackKind::substitute;
  if (name == "delete") return AttackKind::deletion;
  if (name == "insert") return AttackKind::insertion;
  throw Error(Errc::config_error, "unknown attack kind '" + std::string(name) + "'");
}

namespace {

// m distinct indices out of [0, n), sorted (partial Fisher-Yates).
std::vector<std::size_t> choose(std::size_t n, std::size_t m, ChaChaRng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = i;
  }
  for (std::size_t i = 0; i < m; ++i) {
    std::swap(idx[i], idx[i + rng.below(n - i)]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

AttackedText apply_attack(TokenSpan tokens, AttackKind kind, std::size_t m, ChaChaRng& rng) {
  const std::size_t n = tokens.size();
  AttackedText out;
  switch (kind) {
    case AttackKind::substitute: {
      if (m > n) {
        throw Error(Errc::domain_error, "cannot substitute more tokens than the text holds");
      }
      out.tokens.assign(tokens.begin(), tokens.end());
      for (std::size_t i = 0; i < n; ++i) {
        out.origin.emplace_back(i);
      }
      for (const std::size_t i : choose(n, m, rng)) {
        // 255 candidates: every byte except the original one.
        auto r = static_cast<TokenId>(rng.below(255));
        if (tokens[i] < 256 && r >= tokens[i]) {
          ++r;
        }
        out.tokens[i] = r;
      }
      break;
    }
    case AttackKind::deletion: {
      if (m > n) {
        throw Error(Errc::domain_error, "cannot delete " + std::to_string(m) + " of " +
                                            std::to_string(n) + " tokens");
      }
      const auto gone = choose(n, m, rng);
      std::size_t g = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (g < gone.size() && gone[g] == i) {
          ++g;
          continue;
        }
        out.tokens.push_back(tokens[i]);
        out.origin.emplace_back(i);
      }
      break;
    }
    case AttackKind::insertion: {
      const auto added = choose(n + m, m, rng);
      std::size_t a = 0, src = 0;
      for (std::size_t i = 0; i < n + m; ++i) {
        if (a < added.size() && added[a] == i) {
          ++a;
          out.tokens.push_back(static_cast<TokenId>(rng.below(256)));
          out.origin.emplace_back(std::nullopt);
        } else {
          out.tokens.push_back(tokens[src]);
          out.origin.emplace_back(src);
          ++src;
        }
      }
      break;
    }
  }
  return out;
}

namespace {

TokenSpan text_tokens(TokenSpan tokens) {
  if (!tokens.empty() && tokens.back() == Vocabulary::kEos) {
    return tokens.first(tokens.size() - 1);
  }
  return tokens;
}

std::string policy_label(const WindowPolicy& policy) {
  switch (policy.kind) {
    case WindowKind::full: return "full";
    case WindowKind::basic: return "basic";
    case WindowKind::asw: return policy.has_soft_bridge() ? "asw-soft" : "asw-hard";
  }
  return "?";
}

}  // namespace

std::vector<QuantDist> reference_distributions(const StegoSession& session, TokenSpan stego_tokens) {
  const TokenSpan text = text_tokens(stego_tokens);
  WindowedInference inference = session.make_inference();
  std::vector<QuantDist> out;
  out.reserve(text.size());
  for (std::size_t t = 0; t < text.size(); ++t) {
    out.push_back(session.step_distribution(inference, text.first(t)));
  }
  return out;
}

TrialOutcome attack_trial(const StegoSession& session, TokenSpan stego_tokens,
                          const std::vector<QuantDist>& reference, const AttackedText& attacked) {
  const TokenSpan original = text_tokens(stego_tokens);
  const TokenSpan prompt = session.prompt();
  const WindowPolicy& policy = session.policy();
  WindowedInference inference = session.make_inference();
  TrialOutcome outcome;
  outcome.counted = std::max(original.size(), attacked.tokens.size());
  const TokenSpan now = attacked.tokens;
  for (std::size_t i = 0; i < now.size(); ++i) {
    if (!attacked.origin[i]) {
      continue;  // inserted position
    }
    const std::size_t j = *attacked.origin[i];
    // Identical windows give identical distributions, so only changed
    // windows are re-evaluated.
    if (same_window(prompt, policy, original, j, now, i) ||
        session.step_distribution(inference, now.first(i)) == reference[j]) {
      ++outcome.unaffected;
    }
  }
  return outcome;
}

RobustnessReport simulate_attack(const StegoSession& session, TokenSpan stego_tokens,
                                 const AttackSpec& attack, std::size_t trials) {
  if (trials == 0) {
    throw Error(Errc::domain_error, "at least one trial is required");
  }
  const TokenSpan text = text_tokens(stego_tokens);
  if (attack.kind != AttackKind::insertion && attack.m > text.size()) {
    throw Error(Errc::domain_error, "m=" + std::to_string(attack.m) + " exceeds the " +
                                        std::to_string(text.size()) + " generated tokens");
  }
  const auto reference = reference_distributions(session, text);

  RobustnessReport report;
  report.T = text.size();
  report.w = session.policy().kind == WindowKind::full ? text.size() : session.policy().w;
  report.m = attack.m;
  report.kind = attack.kind;
  report.policy = policy_label(session.policy());
  report.trials = trials;
  if (attack.kind == AttackKind::substitute && !text.empty()) {
    report.closed_form_E = expected_influenced(static_cast<std::int64_t>(text.size()),
                                               static_cast<std::int64_t>(attack.m),
                                               static_cast<std::int64_t>(std::max<std::size_t>(report.w, 1)));
  }

  double ratio_sum = 0.0, sum = 0.0, sum_sq = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    ChaChaRng rng(mix_seed(attack.seed, 6), trial);
    const AttackedText attacked = apply_attack(text, attack.kind, attack.m, rng);
    const TrialOutcome o = attack_trial(session, text, reference, attacked);
    const double influenced = static_cast<double>(o.counted - o.unaffected);
    ratio_sum += o.counted == 0 ? 1.0 : static_cast<double>(o.unaffected) / static_cast<double>(o.counted);
    sum += influenced;
    sum_sq += influenced * influenced;
  }
  const double n = static_cast<double>(trials);
  report.unaffected_ratio = ratio_sum / n;
  report.mc_E = sum / n;
  if (trials > 1) {
    const double var = std::max(0.0, (sum_sq - n * report.mc_E * report.mc_E) / (n - 1.0));
    report.mc_E_stderr = std::sqrt(var / n);
  }
  return report;
}

std::string report_json(const RobustnessReport& r) {
  nlohmann::json j{{"T", r.T},
                   {"w", r.w},
                   {"m", r.m},
                   {"kind", attack_kind_name(r.kind)},
                   {"policy", r.policy},
                   {"trials", r.trials},
                   {"unaffected_ratio", r.unaffected_ratio},
                   {"mc_E", r.mc_E},
                   {"mc_E_stderr", r.mc_E_stderr}};
  j["closed_form_E"] = r.closed_form_E ? nlohmann::json(*r.closed_form_E) : nlohmann::json(nullptr);
  return j.dump(2);
}

void write_report_csv(const std::filesystem::path& path, std::span<const RobustnessReport> reports) {
  std::ofstream out(path);
  if (!out) {
    throw Error(Errc::io_error, "cannot write " + path.string());
  }
  std::set<std::size_t> ms;
  std::map<std::tuple<std::string, std::string, std::size_t>, std::map<std::size_t, double>> rows;
  for (const auto& r : reports) {
    ms.insert(r.m);
    rows[{attack_kind_name(r.kind), r.policy, r.w}][r.m] = r.unaffected_ratio;
  }
  out << "kind,policy,w";
  for (const auto m : ms) {
    out << ",m=" << m;
  }
  out << '\n';
  out.precision(6);
  for (const auto& [key, cells] : rows) {
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key);
    for (const auto m : ms) {
      out << ',';
      if (const auto it = cells.find(m); it != cells.end()) {
        out << it->second;
      }
    }
    out << '\n';
  }
}

}  // namespace asw
