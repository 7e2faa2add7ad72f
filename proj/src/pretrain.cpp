#include "asw/pretrain.hpp"

#include <array>
#include <cmath>

#include "asw/backprop.hpp"
#include "asw/error.hpp"
#include "asw/sampling.hpp"

namespace asw {

namespace {

struct Topic {
  const char* name;
  std::array<const char*, 6> nouns;
  std::array<const char*, 4> adjectives;
  std::array<const char*, 4> verbs;
};

constexpr std::array<Topic, 12> kTopics{{
    {"the ocean", {"waves", "tides", "whales", "corals", "currents", "shells"}, {"deep", "salty", "blue", "cold"}, {"move", "carry", "hide", "shape"}},
    {"volcanoes", {"lava", "ash", "magma", "craters", "vents", "rocks"}, {"hot", "molten", "active", "grey"}, {"erupt", "melt", "build", "bury"}},
    {"coffee", {"beans", "roasts", "grinders", "cups", "farms", "filters"}, {"dark", "bitter", "fresh", "strong"}, {"brew", "roast", "grind", "pour"}},
    {"chess", {"pawns", "bishops", "rooks", "openings", "endgames", "clocks"}, {"quiet", "sharp", "classic", "tricky"}, {"attack", "defend", "trade", "castle"}},
    {"bees", {"hives", "queens", "pollen", "flowers", "combs", "drones"}, {"busy", "golden", "tiny", "wild"}, {"buzz", "gather", "guard", "dance"}},
    {"trains", {"rails", "stations", "engines", "tickets", "tunnels", "wagons"}, {"fast", "crowded", "electric", "old"}, {"stop", "haul", "depart", "switch"}},
    {"the moon", {"craters", "phases", "orbits", "eclipses", "tides", "seas"}, {"pale", "bright", "distant", "full"}, {"wax", "wane", "rise", "pull"}},
    {"bread", {"loaves", "ovens", "flour", "yeast", "crusts", "doughs"}, {"warm", "crusty", "soft", "sour"}, {"bake", "rise", "knead", "slice"}},
    {"rivers", {"banks", "deltas", "floods", "bridges", "boats", "fish"}, {"wide", "muddy", "long", "calm"}, {"flow", "bend", "flood", "drain"}},
    {"computers", {"chips", "screens", "programs", "circuits", "cables", "servers"}, {"small", "digital", "quick", "modern"}, {"compute", "store", "crash", "boot"}},
    {"gardens", {"seeds", "roses", "weeds", "tools", "beds", "hedges"}, {"green", "neat", "shady", "lush"}, {"grow", "bloom", "water", "prune"}},
    {"music", {"songs", "drums", "chords", "notes", "bands", "pianos"}, {"loud", "gentle", "lively", "sad"}, {"play", "sing", "tune", "record"}},
}};

constexpr std::array<const char*, 12> kNames{"Ada", "Omar", "Lena", "Ravi", "Mia", "Tom",
                                             "Yuki", "Sofia", "Ken", "Nora", "Ivan", "Zoe"};

constexpr std::array<const char*, 4> kQuestions{"Q: Tell me about %.\nA:", "Q: What do you know about %?\nA:",
                                                "Q: Describe %.\nA:", "Q: Give facts on %.\nA:"};

template <typename Array>
const char* pick(const Array& items, ChaChaRng& rng) {
  return items[rng.below(items.size())];
}

std::string capitalized(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') {
    s[0] = static_cast<char>(s[0] - 'a' + 'A');
  }
  return s;
}

std::string number(ChaChaRng& rng, std::uint64_t lo, std::uint64_t hi) {
  return std::to_string(lo + rng.below(hi - lo + 1));
}

std::string sentence(const Topic& topic, ChaChaRng& rng) {
  const std::string n1 = pick(topic.nouns, rng);
  const std::string n2 = pick(topic.nouns, rng);
  const std::string adj = pick(topic.adjectives, rng);
  const std::string verb = pick(topic.verbs, rng);
  const std::string name = pick(kNames, rng);
  switch (rng.below(7)) {
    case 0: return capitalized(topic.name) + " is known for its " + adj + " " + n1 + ".";
    case 1: return "In " + number(rng, 1800, 2023) + ", " + name + " studied " + n1 + " and " + n2 + ".";
    case 2: return "About " + number(rng, 2, 98) + " percent of " + n1 + " are " + adj + ".";
    case 3: return name + " says that " + n1 + " " + verb + " the " + n2 + ".";
    case 4: return "Most " + n1 + " last " + number(rng, 2, 60) + " years.";
    case 5: return capitalized(n1) + " often " + verb + " near " + adj + " " + n2 + ".";
    default: return "There are " + number(rng, 10, 9999) + " " + adj + " " + n1 + " in " + name + "'s town.";
  }
}

}  // namespace

std::vector<QaText> synthetic_qa(std::size_t count, std::uint64_t seed) {
  ChaChaRng rng(mix_seed(seed, 8), 8);
  std::vector<QaText> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Topic& topic = kTopics[rng.below(kTopics.size())];
    std::string prompt = pick(kQuestions, rng);
    prompt.replace(prompt.find('%'), 1, topic.name);
    std::string response;
    const std::size_t sentences = 3 + rng.below(3);
    for (std::size_t s = 0; s < sentences; ++s) {
      response += " " + sentence(topic, rng);
    }
    out.push_back({std::move(prompt), std::move(response)});
  }
  return out;
}

std::vector<TokenSeq> qa_prompts(std::size_t count, std::uint64_t seed) {
  std::vector<TokenSeq> out;
  const Vocabulary vocab;
  for (const auto& qa : synthetic_qa(count, mix_seed(seed, 9))) {
    out.push_back(vocab.tokenize(qa.prompt));
  }
  return out;
}

TokenSeq training_sequence(const QaText& sample, const SequenceMix& mix, ChaChaRng& rng) {
  const Vocabulary vocab;
  const TokenSeq response = vocab.tokenize(sample.response);
  double u = rng.uniform();
  TokenSeq seq;
  std::size_t cut = 0;
  if (response.size() > 2 && u < mix.elision_rate + mix.silent_cut_rate + mix.fragment_rate) {
    cut = 1 + rng.below(response.size() - 2);
  } else {
    u = 1.0;
  }
  if (u >= mix.elision_rate + mix.silent_cut_rate + mix.fragment_rate || u < mix.elision_rate + mix.silent_cut_rate) {
    seq = vocab.tokenize(sample.prompt);
  }
  if (u < mix.elision_rate) {
    const TokenSeq marker = vocab.tokenize(kElisionMarker);
    seq.insert(seq.end(), marker.begin(), marker.end());
  }
  seq.insert(seq.end(), response.begin() + static_cast<std::ptrdiff_t>(cut), response.end());
  seq.push_back(Vocabulary::kEos);
  return seq;
}

double sequence_loss_grad(const Transformer& model, TokenSpan sequence, std::span<double> grads) {
  if (sequence.size() < 2) {
    throw Error(Errc::domain_error, "a training sequence needs at least two tokens");
  }
  if (grads.size() != model.params().size()) {
    throw Error(Errc::shape_error, "gradient buffer does not match the parameter count");
  }
  const std::size_t e = model.embedding_dim();
  const std::size_t rows = sequence.size() - 1;
  const Matrix inputs = model.embed_tokens(sequence.first(rows));
  KvCache cache = model.new_cache();
  const SegmentTape tape = forward_segment(model, inputs, cache);

  const double inv = 1.0 / static_cast<double>(rows);
  Matrix d_hidden(rows, e);
  std::vector<double> logits(model.vocab_size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    model.head_logits(tape.rows[r].hidden_out, logits);
    auto probs = softmax(logits);
    const TokenId target = sequence[r + 1];
    loss -= std::log(probs[target]);
    for (double& p : probs) {
      p *= inv;
    }
    probs[target] -= inv;
    head_backward(model, tape.rows[r].hidden_out, probs, d_hidden.row(r), grads);
  }

  BackwardRequest request;
  request.d_hidden = &d_hidden;
  request.param_grads = grads;
  const SegmentGrads g = backward_segment(model, cache, tape, request);
  const std::size_t table = model.layout().token_embedding;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto d = g.d_input.row(r);
    double* dst = grads.data() + table + sequence[r] * e;
    for (std::size_t c = 0; c < e; ++c) {
      dst[c] += d[c];
    }
  }
  return loss * inv;
}

Transformer pretrain(const PretrainConfig& config, const PretrainProgress& progress) {
  config.model.validate();
  if (config.batch == 0 || config.corpus_size == 0) {
    throw Error(Errc::config_error, "pretraining needs a non-empty corpus and batch");
  }
  Transformer model = Transformer::initialize(config.model, config.seed);
  const auto corpus = synthetic_qa(config.corpus_size, config.seed);
  ChaChaRng rng(mix_seed(config.seed, 10), 10);
  AdamW optimizer(model.params().size(), config.optimizer);
  std::vector<double> grads(model.params().size());

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::fill(grads.begin(), grads.end(), 0.0);
    double loss = 0.0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      const QaText& sample = corpus[rng.below(corpus.size())];
      TokenSeq seq = training_sequence(sample, config.mix, rng);
      if (seq.size() > config.model.max_context) {
        seq.resize(config.model.max_context);
      }
      loss += sequence_loss_grad(model, seq, grads);
    }
    const double inv = 1.0 / static_cast<double>(config.batch);
    for (double& g : grads) {
      g *= inv;
    }
    loss *= inv;
    if (!std::isfinite(loss)) {
      throw Error(Errc::training_diverged, "pretraining loss is not finite at step " + std::to_string(step));
    }
    optimizer.step(model.mutable_params(), grads);
    if (progress) {
      progress(step, loss);
    }
  }
  return model;
}

}  // namespace asw
