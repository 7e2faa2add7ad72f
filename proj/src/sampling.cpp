#include "asw/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "asw/error.hpp"

namespace asw {

void SamplerConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(Errc::config_error, "temperature must be positive");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw Error(Errc::config_error, "top_p must lie in (0, 1]");
  }
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  double max_logit = -INFINITY;
  for (const double l : logits) {
    max_logit = std::max(max_logit, l / temperature);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - max_logit);
    total += out[i];
  }
  for (double& v : out) {
    v /= total;
  }
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  double max_logit = -INFINITY;
  for (const double l : logits) {
    max_logit = std::max(max_logit, l / temperature);
  }
  double total = 0.0;
  for (const double l : logits) {
    total += std::exp(l / temperature - max_logit);
  }
  const double log_z = max_logit + std::log(total);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] / temperature - log_z;
  }
  return out;
}

ProbDist dist_from_logits(std::span<const double> logits, const SamplerConfig& config) {
  config.validate();
  for (const double l : logits) {
    if (!std::isfinite(l)) {
      throw Error(Errc::numerical_error, "non-finite logit");
    }
  }
  ProbDist dist;
  dist.probs = softmax(logits, config.temperature);
  const std::size_t n = dist.probs.size();
  if (config.top_p >= 1.0) {
    dist.support.resize(n);
    std::iota(dist.support.begin(), dist.support.end(), TokenId{0});
    return dist;
  }

  std::vector<TokenId> order(n);
  std::iota(order.begin(), order.end(), TokenId{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](TokenId a, TokenId b) { return dist.probs[a] > dist.probs[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < n) {
    mass += dist.probs[order[keep]];
    ++keep;
    if (mass >= config.top_p) {
      break;
    }
  }
  dist.support.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(dist.support.begin(), dist.support.end());

  double kept = 0.0;
  for (const TokenId id : dist.support) {
    kept += dist.probs[id];
  }
  std::vector<double> truncated(n, 0.0);
  for (const TokenId id : dist.support) {
    truncated[id] = dist.probs[id] / kept;
  }
  dist.probs = std::move(truncated);
  return dist;
}

TokenId sample_multinomial(const ProbDist& dist, ChaChaRng& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  for (const TokenId id : dist.support) {
    cumulative += dist.probs[id];
    if (u < cumulative) {
      return id;
    }
  }
  // Rounding left the cumulative mass just below u; take the last token with mass.
  for (auto it = dist.support.rbegin(); it != dist.support.rend(); ++it) {
    if (dist.probs[*it] > 0.0) {
      return *it;
    }
  }
  return dist.support.back();
}

}  // namespace asw
