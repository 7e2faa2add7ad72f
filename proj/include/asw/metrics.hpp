#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asw/model.hpp"
#include "asw/sampling.hpp"
#include "asw/window.hpp"

namespace asw {

// KL(p_full || p_window) in nats over the full probability vectors. Returns
// +infinity when p_window is zero somewhere p_full is not.
double stepwise_kl(const ProbDist& p_full, const ProbDist& p_window);
double total_variation(const ProbDist& p, const ProbDist& q);

struct KLTrace {
  std::vector<double> kl;   // nats, one per step
  std::vector<double> tvd;  // total variation at the same steps
  double mean() const;
};

// Samples one trajectory from the full-context distribution and measures
// every policy on that same prefix sequence at each step (temperature 1,
// no truncation). Sampling skips <bos>/<pad> and stops at <eos>.
std::vector<KLTrace> kl_runs(const LanguageModel& model, const TokenSeq& prompt,
                             std::span<const WindowPolicy> policies, std::size_t max_len,
                             std::uint64_t seed);
KLTrace avg_kl_run(const LanguageModel& model, const TokenSeq& prompt, const WindowPolicy& policy,
                   std::size_t max_len, std::uint64_t seed);

// sqrt((ln 2 / 2) * sum of KL in bits), i.e. Pinsker's bound on the total
// variation of the whole generation.
double pinsker_bound(std::span<const double> kl_nats);
double pinsker_bound(const KLTrace& trace);

// exp(mean negative log-likelihood) of `tokens` following `prompt` under
// full-context inference.
double perplexity(const LanguageModel& model, const TokenSeq& prompt, std::span<const TokenId> tokens);
double delta_ppl(std::span<const double> reference_ppl, std::span<const double> stego_ppl);

std::vector<std::string> split_words(std::string_view text);
double bleu2(std::span<const std::string> reference, std::span<const std::string> candidate);
double rouge_l(std::span<const std::string> reference, std::span<const std::string> candidate);

}  // namespace asw
