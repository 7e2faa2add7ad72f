#include "asw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

#include "asw/error.hpp"
#include "asw/rng.hpp"

namespace asw {

double stepwise_kl(const ProbDist& p_full, const ProbDist& p_window) {
  if (p_full.probs.size() != p_window.probs.size()) {
    throw Error(Errc::shape_error, "distributions over different vocabularies");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p_full.probs.size(); ++i) {
    const double p = p_full.probs[i];
    if (p == 0.0) {
      continue;
    }
    const double q = p_window.probs[i];
    if (q == 0.0) {
      return std::numeric_limits<double>::infinity();
    }
    kl += p * std::log(p / q);
  }
  return std::max(kl, 0.0);
}

double total_variation(const ProbDist& p, const ProbDist& q) {
  if (p.probs.size() != q.probs.size()) {
    throw Error(Errc::shape_error, "distributions over different vocabularies");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    s += std::abs(p.probs[i] - q.probs[i]);
  }
  return 0.5 * s;
}

double KLTrace::mean() const {
  if (kl.empty()) {
    return 0.0;
  }
  return std::accumulate(kl.begin(), kl.end(), 0.0) / static_cast<double>(kl.size());
}

std::vector<KLTrace> kl_runs(const LanguageModel& model, const TokenSeq& prompt,
                             std::span<const WindowPolicy> policies, std::size_t max_len,
                             std::uint64_t seed) {
  const SamplerConfig plain;
  std::vector<WindowedInference> windows;
  for (const auto& policy : policies) {
    windows.emplace_back(model, policy, prompt);
  }
  WindowedInference full(model, WindowPolicy::full_context(), prompt);
  std::vector<KLTrace> traces(policies.size());
  ChaChaRng rng(mix_seed(seed, 7), 7);
  TokenSeq generated;
  const std::size_t limit = std::min(max_len, model.max_context() - std::min(model.max_context(), prompt.size()));
  for (std::size_t t = 0; t < limit; ++t) {
    const ProbDist p_full = dist_from_logits(full.logits(generated), plain);
    for (std::size_t k = 0; k < windows.size(); ++k) {
      const ProbDist p_win = dist_from_logits(windows[k].logits(generated), plain);
      traces[k].kl.push_back(stepwise_kl(p_full, p_win));
      traces[k].tvd.push_back(total_variation(p_full, p_win));
    }
    ProbDist sample = p_full;
    if (model.vocab_size() == Vocabulary::kSize) {
      std::erase_if(sample.support,
                    [](TokenId id) { return id == Vocabulary::kBos || id == Vocabulary::kPad; });
    }
    const TokenId next = sample_multinomial(sample, rng);
    if (next == Vocabulary::kEos && model.vocab_size() == Vocabulary::kSize) {
      break;
    }
    generated.push_back(next);
  }
  return traces;
}

KLTrace avg_kl_run(const LanguageModel& model, const TokenSeq& prompt, const WindowPolicy& policy,
                   std::size_t max_len, std::uint64_t seed) {
  return kl_runs(model, prompt, std::span<const WindowPolicy>(&policy, 1), max_len, seed).front();
}

double pinsker_bound(std::span<const double> kl_nats) {
  double bits = 0.0;
  for (const double k : kl_nats) {
    bits += k / std::numbers::ln2;
  }
  return std::sqrt(std::numbers::ln2 / 2.0 * bits);
}

double pinsker_bound(const KLTrace& trace) { return pinsker_bound(trace.kl); }

double perplexity(const LanguageModel& model, const TokenSeq& prompt, std::span<const TokenId> tokens) {
  if (tokens.empty()) {
    throw Error(Errc::domain_error, "perplexity of an empty sequence");
  }
  auto cursor = model.start();
  cursor->push_tokens(prompt);
  double nll = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (t > 0) {
      cursor->push_token(tokens[t - 1]);
    }
    const auto lp = log_softmax(cursor->logits());
    nll -= lp.at(tokens[t]);
  }
  return std::exp(nll / static_cast<double>(tokens.size()));
}

double delta_ppl(std::span<const double> reference_ppl, std::span<const double> stego_ppl) {
  if (reference_ppl.empty() || stego_ppl.empty()) {
    throw Error(Errc::domain_error, "delta perplexity needs runs on both sides");
  }
  const double a = std::accumulate(reference_ppl.begin(), reference_ppl.end(), 0.0) /
                   static_cast<double>(reference_ppl.size());
  const double b = std::accumulate(stego_ppl.begin(), stego_ppl.end(), 0.0) /
                   static_cast<double>(stego_ppl.size());
  return std::abs(a - b);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    if (i > start) {
      out.emplace_back(text.substr(start, i - start));
    }
  }
  return out;
}

namespace {

double clipped_precision(std::span<const std::string> ref, std::span<const std::string> cand, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
  for (std::size_t i = 0; i + n <= ref.size(); ++i) {
    ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
  }
  for (std::size_t i = 0; i + n <= cand.size(); ++i) {
    ++cand_counts[{cand.begin() + i, cand.begin() + i + n}];
  }
  std::size_t matched = 0;
  for (const auto& [gram, count] : cand_counts) {
    const auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) {
      matched += std::min(count, it->second);
    }
  }
  return static_cast<double>(matched) / static_cast<double>(cand.size() - n + 1);
}

}  // namespace

double bleu2(std::span<const std::string> reference, std::span<const std::string> candidate) {
  if (candidate.empty() || reference.empty()) {
    return 0.0;
  }
  // Orders beyond the candidate length are dropped rather than zeroing the score.
  const std::size_t orders = std::min<std::size_t>(2, candidate.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= orders; ++n) {
    const double p = clipped_precision(reference, candidate, n);
    if (p == 0.0) {
      return 0.0;
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(orders));
}

double rouge_l(std::span<const std::string> reference, std::span<const std::string> candidate) {
  if (candidate.empty() || reference.empty()) {
    return 0.0;
  }
  std::vector<std::size_t> prev(candidate.size() + 1, 0), cur(candidate.size() + 1, 0);
  for (std::size_t i = 1; i <= reference.size(); ++i) {
    for (std::size_t j = 1; j <= candidate.size(); ++j) {
      cur[j] = reference[i - 1] == candidate[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[candidate.size()]);
  if (lcs == 0.0) {
    return 0.0;
  }
  const double recall = lcs / static_cast<double>(reference.size());
  const double precision = lcs / static_cast<double>(candidate.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace asw
