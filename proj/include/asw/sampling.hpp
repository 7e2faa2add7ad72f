#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "asw/model.hpp"
#include "asw/rng.hpp"
#include "asw/vocab.hpp"

namespace asw {

struct SamplerConfig {
  double temperature = 1.0;
  double top_p = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Probability vector over the whole vocabulary plus the retained support
// (strictly increasing ids). Tokens outside the support have probability 0.
struct ProbDist {
  std::vector<double> probs;
  std::vector<TokenId> support;
};

std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);
std::vector<double> log_softmax(std::span<const double> logits, double temperature = 1.0);

// softmax(logits / temperature), truncated to the smallest descending-
// probability prefix whose mass reaches top_p and renormalized. top_p >= 1
// keeps the whole vocabulary.
ProbDist dist_from_logits(std::span<const double> logits, const SamplerConfig& config);

TokenId sample_multinomial(const ProbDist& dist, ChaChaRng& rng);

}  // namespace asw
