#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "asw/model.hpp"
#include "asw/optim.hpp"
#include "asw/rng.hpp"
#include "asw/vocab.hpp"

namespace asw {

struct QaText {
  std::string prompt;
  std::string response;
};

// Topic question/answer pairs: the prompt names a topic and the answer is a
// few templated sentences using that topic's vocabulary, names and numbers.
std::vector<QaText> synthetic_qa(std::size_t count, std::uint64_t seed);

// Seeded evaluation prompts, tokenized.
std::vector<TokenSeq> qa_prompts(std::size_t count, std::uint64_t seed);

// Text the model learns to read as "earlier text left out here"; it is the
// reference informative hard bridge.
inline constexpr std::string_view kElisionMarker = "... ";

struct SequenceMix {
  double elision_rate = 0.3;     // prompt || marker || response[k:] || <eos>
  double silent_cut_rate = 0.1;  // prompt || response[k:] || <eos>
  double fragment_rate = 0.2;    // response[k:] || <eos>, no prompt
};

// prompt || response || <eos> unless one of the cut variants is drawn; the
// cut k is uniform over the interior of the response.
TokenSeq training_sequence(const QaText& sample, const SequenceMix& mix, ChaChaRng& rng);

// Mean next-token cross-entropy over the sequence (every position predicts
// its successor) and its gradient with respect to all parameters, added to
// `grads`.
double sequence_loss_grad(const Transformer& model, TokenSpan sequence, std::span<double> grads);

struct PretrainConfig {
  ModelConfig model{};
  std::uint64_t seed = 1;
  std::size_t corpus_size = 2000;
  std::size_t steps = 1500;
  std::size_t batch = 4;
  SequenceMix mix{};
  AdamWConfig optimizer{3e-3, 0.9, 0.99, 1e-8, 0.0};
};

using PretrainProgress = std::function<void(std::size_t step, double loss)>;

Transformer pretrain(const PretrainConfig& config, const PretrainProgress& progress = {});

}  // namespace asw
