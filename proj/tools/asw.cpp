#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "asw/codec.hpp"
#include "asw/config.hpp"
#include "asw/distill.hpp"
#include "asw/error.hpp"
#include "asw/metrics.hpp"
#include "asw/pretrain.hpp"
#include "asw/robust.hpp"

namespace fs = std::filesystem;
using namespace asw;

namespace {

enum class Level { quiet, error, warn, info, debug };

Level log_level() {
  const char* env = std::getenv("ASW_LOG");
  if (env == nullptr) return Level::warn;
  const std::string v = env;
  if (v == "quiet") return Level::quiet;
  if (v == "error") return Level::error;
  if (v == "info") return Level::info;
  if (v == "debug") return Level::debug;
  return Level::warn;
}

void log(Level level, const std::string& msg) {
  static const Level threshold = log_level();
  if (level <= threshold && threshold != Level::quiet) {
    static const char* names[] = {"", "error", "warn", "info", "debug"};
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::io_error, "cannot read " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !out.write(data.data(), static_cast<std::streamsize>(data.size()))) {
    throw Error(Errc::io_error, "cannot write " + path.string());
  }
}

nlohmann::json trace_json(const StepTrace& s) {
  return {{"t", s.t},
          {"window_hash", hex64(s.window_hash)},
          {"dist_hash", hex64(s.dist_hash)},
          {"support_size", s.support_size},
          {"token", s.token},
          {"in_support", s.in_support},
          {"cum_low", s.cum_low},
          {"freq", s.freq},
          {"bits_committed", s.bits_committed}};
}

class TraceFile {
 public:
  explicit TraceFile(const std::string& path) {
    if (!path.empty()) {
      out_.open(path);
      if (!out_) {
        throw Error(Errc::io_error, "cannot write trace " + path);
      }
    }
  }
  TraceSink sink() {
    if (!out_.is_open()) return {};
    return [this](const StepTrace& s) { out_ << trace_json(s).dump() << '\n'; };
  }

 private:
  std::ofstream out_;
};

struct Loaded {
  SessionConfig config;
  std::unique_ptr<Transformer> model;
  WindowPolicy policy;
};

Loaded load_session(const std::string& config_path) {
  Loaded l{SessionConfig::load(config_path), nullptr, {}};
  l.model = l.config.load_model();
  l.policy = l.config.make_policy();
  std::cout << "config_hash " << hex64(l.config.hash()) << '\n';
  log(Level::info, "model params hash " + hex64(l.model->params_hash()));
  return l;
}

StegoSession make_session(const Loaded& l, const TokenSeq& prompt) {
  return StegoSession(*l.model, prompt, l.policy, l.config.sampler, l.config.precision,
                      l.config.prng_seed, l.config.max_len);
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw Error(Errc::config_error, "bad list element '" + item + "'");
    }
  }
  return out;
}

std::string label(const WindowPolicy& p) {
  switch (p.kind) {
    case WindowKind::full: return "full";
    case WindowKind::basic: return "basic";
    case WindowKind::asw: return "asw";
  }
  return "?";
}

std::string bridge_label(const WindowPolicy& p) {
  if (!p.bridge) return "none";
  if (p.has_soft_bridge()) return "soft";
  return p.bridge_length() == 0 ? "empty" : "hard";
}

// ---------------------------------------------------------------- commands

struct EmbedArgs {
  std::string config, message, prompt, out, trace;
};

int cmd_embed(const EmbedArgs& a) {
  const Loaded l = load_session(a.config);
  const std::string message = read_file(a.message);
  const Vocabulary vocab;
  const StegoSession session = make_session(l, vocab.tokenize(read_file(a.prompt)));
  TraceFile trace(a.trace);
  const Bits bits = bytes_to_bits({reinterpret_cast<const std::uint8_t*>(message.data()), message.size()});
  const EmbedResult r = session.embed(bits, trace.sink());
  write_file(a.out, r.text);
  std::cout << "tokens " << r.tokens.size() << '\n'
            << "ended_with_eos " << (r.ended_with_eos ? "true" : "false") << '\n'
            << "payload_bits " << r.payload_bits << '\n'
            << "bits_committed " << r.bits_committed << '\n'
            << "capacity " << capacity(r) << '\n';
  return 0;
}

struct ExtractArgs {
  std::string config, stego, prompt, out, trace;
};

int cmd_extract(const ExtractArgs& a) {
  const Loaded l = load_session(a.config);
  const Vocabulary vocab;
  const StegoSession session = make_session(l, vocab.tokenize(read_file(a.prompt)));
  TraceFile trace(a.trace);
  ExtractOptions options;
  options.trace = trace.sink();
  options.full_pass = !a.trace.empty();
  const ExtractResult r = session.extract_text(read_file(a.stego), options);
  if (r.message.size() % 8 != 0) {
    throw Error(Errc::framing_error, "recovered " + std::to_string(r.message.size()) +
                                         " bits, not a whole number of bytes");
  }
  const auto bytes = bits_to_bytes(r.message);
  write_file(a.out, {reinterpret_cast<const char*>(bytes.data()), bytes.size()});
  std::cout << "message_bytes " << bytes.size() << '\n' << "bits_committed " << r.committed_bits.size() << '\n';
  return 0;
}

struct AttackArgs {
  std::string config, stego, prompt, kind = "substitute", json_out, csv_out;
  std::size_t m = 1, trials = 100;
  std::uint64_t seed = 0;
};

int cmd_attack(const AttackArgs& a) {
  const Loaded l = load_session(a.config);
  const Vocabulary vocab;
  const StegoSession session = make_session(l, vocab.tokenize(read_file(a.prompt)));
  const TokenSeq stego = vocab.tokenize(read_file(a.stego));
  const AttackSpec spec{parse_attack_kind(a.kind), a.m, a.seed};
  const RobustnessReport report = simulate_attack(session, stego, spec, a.trials);
  const std::string json = report_json(report);
  std::cout << json << '\n';
  if (!a.json_out.empty()) {
    write_file(a.json_out, json + "\n");
  }
  if (!a.csv_out.empty()) {
    write_report_csv(a.csv_out, std::span<const RobustnessReport>(&report, 1));
  }
  return 0;
}

struct TrainArgs {
  std::string config, corpus, out, log_csv, loss = "forward";
  std::size_t generate = 0, response_len = 32, epochs = 10, l_bridge = 8, batch = 1;
  double val_fraction = 0.2, lr = 1e-3;
  std::uint64_t seed = 0;
};

int cmd_train_bridge(const TrainArgs& a) {
  const SessionConfig config = SessionConfig::load(a.config);
  const auto model = config.load_model();
  std::cout << "config_hash " << hex64(config.hash()) << '\n';
  if (a.generate > 0) {
    const auto prompts = qa_prompts(a.generate, a.seed);
    save_corpus(a.corpus, generate_corpus(*model, prompts, a.response_len, a.seed));
    log(Level::info, "wrote " + std::to_string(a.generate) + " samples to " + a.corpus);
  }
  const auto corpus = load_corpus(a.corpus);
  const auto n_val = static_cast<std::size_t>(static_cast<double>(corpus.size()) * a.val_fraction);
  if (n_val == 0 || n_val >= corpus.size()) {
    throw Error(Errc::config_error, "validation split leaves an empty train or validation set");
  }
  const std::span<const DistillSample> all(corpus);
  DistillConfig dc;
  if (a.loss == "forward") {
    dc.loss = LossKind::forward_kl;
  } else if (a.loss == "reverse") {
    dc.loss = LossKind::reverse_kl;
  } else {
    throw Error(Errc::config_error, "--loss must be forward or reverse");
  }
  dc.optimizer.lr = a.lr;
  dc.epochs = a.epochs;
  dc.batch_size = a.batch;
  dc.w = config.w;
  dc.l_bridge = a.l_bridge;
  dc.activation = config.activation;
  dc.seed = a.seed;
  const auto params_before = model->params_hash();
  const TrainResult r = train_bridge(*model, all.first(all.size() - n_val), all.last(n_val), dc,
                                     [](const EpochLog& e) {
                                       log(Level::info, "epoch " + std::to_string(e.epoch) + " train " +
                                                            std::to_string(e.train_loss) + " val " +
                                                            std::to_string(e.val_loss));
                                     });
  if (model->params_hash() != params_before) {
    throw Error(Errc::numerical_error, "model parameters changed during bridge training");
  }
  save_soft_bridge(a.out, r.theta);
  if (!a.log_csv.empty()) {
    write_training_log(a.log_csv, r.log);
  }
  std::cout << "initial_val_loss " << r.initial_val_loss << '\n'
            << "best_val_loss " << r.best_val_loss << '\n'
            << "best_epoch " << r.best_epoch << '\n';
  return 0;
}

struct EvalArgs {
  std::string config, suite = "kl", out_dir = ".", ws = "4,8,16", ms = "1,2,3";
  std::size_t prompts = 100, max_len = 64, trials = 200, message_bits = 64;
  std::uint64_t seed = 0;
};

std::vector<WindowPolicy> kl_policies(const Loaded& l, std::size_t w) {
  const BridgeActivation act = l.config.activation;
  std::vector<WindowPolicy> out{WindowPolicy::full_context(), WindowPolicy::basic(w),
                                WindowPolicy::anchored(w, HardBridge{}, act)};
  const std::string hard = l.config.hard_bridge.value_or(std::string(kElisionMarker));
  out.push_back(WindowPolicy::anchored(w, HardBridge{Vocabulary{}.tokenize(hard)}, act));
  if (l.policy.has_soft_bridge()) {
    out.push_back(WindowPolicy::anchored(w, *l.policy.bridge, act));
  }
  return out;
}

int eval_kl(const Loaded& l, const EvalArgs& a) {
  const auto ws = parse_list(a.ws);
  const auto prompts = qa_prompts(a.prompts, a.seed);
  std::ofstream csv(fs::path(a.out_dir) / "kl.csv");
  csv << "policy,bridge,w,mean_kl_nats,steps,pinsker_violations\n";
  for (const std::size_t w : ws) {
    const auto policies = kl_policies(l, w);
    std::vector<double> sum(policies.size(), 0.0);
    std::vector<std::size_t> steps(policies.size(), 0), violations(policies.size(), 0);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto traces = kl_runs(*l.model, prompts[i], policies, a.max_len, mix_seed(a.seed, i));
      for (std::size_t k = 0; k < traces.size(); ++k) {
        sum[k] += traces[k].mean();
        steps[k] += traces[k].kl.size();
        for (std::size_t t = 0; t < traces[k].kl.size(); ++t) {
          if (traces[k].tvd[t] > pinsker_bound(std::span<const double>(&traces[k].kl[t], 1))) {
            ++violations[k];
          }
        }
      }
    }
    for (std::size_t k = 0; k < policies.size(); ++k) {
      csv << label(policies[k]) << ',' << bridge_label(policies[k]) << ',' << w << ','
          << sum[k] / static_cast<double>(prompts.size()) << ',' << steps[k] << ',' << violations[k] << '\n';
    }
  }
  std::cout << "wrote " << (fs::path(a.out_dir) / "kl.csv").string() << '\n';
  return 0;
}

int eval_quality(const Loaded& l, const EvalArgs& a) {
  const auto prompts = qa_prompts(a.prompts, a.seed);
  const Vocabulary vocab;
  std::vector<WindowPolicy> policies{WindowPolicy::full_context(), WindowPolicy::basic(l.config.w)};
  if (l.policy.kind == WindowKind::asw) {
    policies.push_back(l.policy);
  }
  std::ofstream csv(fs::path(a.out_dir) / "quality.csv");
  csv << "policy,bridge,w,ppl_normal,ppl_stego,delta_ppl,bleu2,rouge_l,capacity\n";
  for (const auto& policy : policies) {
    std::vector<double> ppl_ref, ppl_stego;
    double bleu = 0.0, rouge = 0.0, cap = 0.0;
    std::size_t runs = 0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      // Normal generation: multinomial sampling under the full context.
      ChaChaRng rng(mix_seed(a.seed, 100 + i), 11);
      TokenSeq normal;
      auto cursor = l.model->start();
      cursor->push_tokens(prompts[i]);
      while (normal.size() < a.max_len) {
        ProbDist d = dist_from_logits(cursor->logits(), l.config.sampler);
        std::erase_if(d.support, [](TokenId id) { return id == Vocabulary::kBos || id == Vocabulary::kPad; });
        const TokenId next = sample_multinomial(d, rng);
        normal.push_back(next);
        if (next == Vocabulary::kEos) break;
        cursor->push_token(next);
      }
      Bits message(a.message_bits);
      for (auto& b : message) b = rng.next_bit() ? 1 : 0;
      const StegoSession session(*l.model, prompts[i], policy, l.config.sampler, l.config.precision,
                                 mix_seed(l.config.prng_seed, i), a.max_len);
      EmbedResult stego;
      try {
        stego = session.embed(message);
      } catch (const CapacityError&) {
        log(Level::warn, "prompt " + std::to_string(i) + ": message did not fit, skipped");
        continue;
      }
      ++runs;
      ppl_ref.push_back(perplexity(*l.model, prompts[i], normal));
      ppl_stego.push_back(perplexity(*l.model, prompts[i], stego.tokens));
      const auto ref_words = split_words(vocab.detokenize(normal));
      const auto cand_words = split_words(stego.text);
      bleu += bleu2(ref_words, cand_words);
      rouge += rouge_l(ref_words, cand_words);
      cap += capacity(stego);
    }
    if (runs == 0) {
      continue;
    }
    const double n = static_cast<double>(runs);
    double mr = 0.0, ms = 0.0;
    for (const double v : ppl_ref) mr += v;
    for (const double v : ppl_stego) ms += v;
    csv << label(policy) << ',' << bridge_label(policy) << ',' << (policy.kind == WindowKind::full ? 0 : policy.w)
        << ',' << mr / n << ',' << ms / n << ',' << delta_ppl(ppl_ref, ppl_stego) << ',' << bleu / n << ','
        << rouge / n << ',' << cap / n << '\n';
  }
  std::cout << "wrote " << (fs::path(a.out_dir) / "quality.csv").string() << '\n';
  return 0;
}

int eval_robustness(const Loaded& l, const EvalArgs& a) {
  const auto ws = parse_list(a.ws);
  const auto ms = parse_list(a.ms);
  const auto prompts = qa_prompts(1, a.seed);
  std::vector<RobustnessReport> reports;
  for (const std::size_t w : ws) {
    std::vector<WindowPolicy> policies{WindowPolicy::basic(w)};
    if (l.policy.kind == WindowKind::asw) {
      policies.push_back(WindowPolicy::anchored(w, *l.policy.bridge, l.policy.activation));
    }
    for (const auto& policy : policies) {
      const StegoSession session(*l.model, prompts.front(), policy, l.config.sampler, l.config.precision,
                                 l.config.prng_seed, a.max_len);
      Bits message(a.message_bits, 1);
      const EmbedResult stego = session.embed(message);
      for (const std::size_t m : ms) {
        reports.push_back(simulate_attack(session, stego.tokens, {AttackKind::substitute, m, a.seed}, a.trials));
        log(Level::info, report_json(reports.back()));
      }
    }
  }
  write_report_csv(fs::path(a.out_dir) / "robustness.csv", reports);
  std::cout << "wrote " << (fs::path(a.out_dir) / "robustness.csv").string() << '\n';
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const Loaded l = load_session(a.config);
  fs::create_directories(a.out_dir);
  if (a.suite == "kl") return eval_kl(l, a);
  if (a.suite == "quality") return eval_quality(l, a);
  if (a.suite == "robustness") return eval_robustness(l, a);
  throw Error(Errc::config_error, "--suite must be kl, quality or robustness");
}

struct GenModelArgs {
  std::string out;
  PretrainConfig pc;
};

int cmd_gen_model(const GenModelArgs& a) {
  const Transformer model = pretrain(a.pc, [&](std::size_t step, double loss) {
    if ((step + 1) % 100 == 0) {
      log(Level::info, "step " + std::to_string(step + 1) + " loss " + std::to_string(loss));
    }
  });
  model.save(a.out);
  std::cout << "params_hash " << hex64(model.params_hash()) << '\n';
  return 0;
}

int exit_code(const Error& e) {
  switch (e.code()) {
    case Errc::config_error: return 2;
    case Errc::capacity_exhausted: return 3;
    case Errc::extraction_desync: return 4;
    case Errc::framing_error: return 5;
    case Errc::training_diverged: return 6;
    default: return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchored sliding window steganography toolkit"};
  app.require_subcommand(1);

  EmbedArgs embed;
  auto* c_embed = app.add_subcommand("embed", "Hide a message file in generated text");
  c_embed->add_option("--config", embed.config)->required();
  c_embed->add_option("--message", embed.message)->required();
  c_embed->add_option("--prompt", embed.prompt)->required();
  c_embed->add_option("--out", embed.out)->required();
  c_embed->add_option("--trace", embed.trace, "Write per-step JSON lines");

  ExtractArgs extract;
  auto* c_extract = app.add_subcommand("extract", "Recover the message from a stegotext");
  c_extract->add_option("--config", extract.config)->required();
  c_extract->add_option("--stego", extract.stego)->required();
  c_extract->add_option("--prompt", extract.prompt)->required();
  c_extract->add_option("--out", extract.out)->required();
  c_extract->add_option("--trace", extract.trace, "Write per-step JSON lines");

  AttackArgs attack;
  auto* c_attack = app.add_subcommand("attack", "Simulate token attacks on a stegotext");
  c_attack->add_option("--config", attack.config)->required();
  c_attack->add_option("--stego", attack.stego)->required();
  c_attack->add_option("--prompt", attack.prompt)->required();
  c_attack->add_option("--kind", attack.kind)->check(CLI::IsMember({"substitute", "delete", "insert"}));
  c_attack->add_option("--m", attack.m);
  c_attack->add_option("--trials", attack.trials);
  c_attack->add_option("--seed", attack.seed);
  c_attack->add_option("--json", attack.json_out);
  c_attack->add_option("--csv", attack.csv_out);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train-bridge", "Distill a soft bridge context");
  c_train->add_option("--config", train.config)->required();
  c_train->add_option("--corpus", train.corpus)->required();
  c_train->add_option("--out", train.out)->required();
  c_train->add_option("--log", train.log_csv);
  c_train->add_option("--loss", train.loss)->check(CLI::IsMember({"forward", "reverse"}));
  c_train->add_option("--generate", train.generate, "Write a self-generated corpus of N samples first");
  c_train->add_option("--response-len", train.response_len);
  c_train->add_option("--val-fraction", train.val_fraction);
  c_train->add_option("--epochs", train.epochs);
  c_train->add_option("--lr", train.lr);
  c_train->add_option("--l-bridge", train.l_bridge);
  c_train->add_option("--batch", train.batch);
  c_train->add_option("--seed", train.seed);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Run a measurement suite");
  c_eval->add_option("--config", eval.config)->required();
  c_eval->add_option("--suite", eval.suite)->check(CLI::IsMember({"kl", "quality", "robustness"}));
  c_eval->add_option("--out-dir", eval.out_dir);
  c_eval->add_option("--prompts", eval.prompts);
  c_eval->add_option("--max-len", eval.max_len);
  c_eval->add_option("--w", eval.ws, "Comma-separated window lengths");
  c_eval->add_option("--m", eval.ms, "Comma-separated attack sizes");
  c_eval->add_option("--trials", eval.trials);
  c_eval->add_option("--message-bits", eval.message_bits);
  c_eval->add_option("--seed", eval.seed);

  GenModelArgs gen;
  auto* c_gen = app.add_subcommand("gen-model", "Build and pretrain the reference model");
  c_gen->add_option("--out", gen.out)->required();
  c_gen->add_option("--seed", gen.pc.seed);
  c_gen->add_option("--steps", gen.pc.steps);
  c_gen->add_option("--batch", gen.pc.batch);
  c_gen->add_option("--corpus-size", gen.pc.corpus_size);
  c_gen->add_option("--layers", gen.pc.model.layers);
  c_gen->add_option("--dim", gen.pc.model.dim);
  c_gen->add_option("--heads", gen.pc.model.heads);
  c_gen->add_option("--ffn", gen.pc.model.ffn);
  c_gen->add_option("--max-context", gen.pc.model.max_context);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c_embed) return cmd_embed(embed);
    if (*c_extract) return cmd_extract(extract);
    if (*c_attack) return cmd_attack(attack);
    if (*c_train) return cmd_train_bridge(train);
    if (*c_eval) return cmd_eval(eval);
    if (*c_gen) return cmd_gen_model(gen);
  } catch (const DesyncError& e) {
    std::cerr << "error: " << e.what() << '\n' << "failing_step " << e.step() << '\n';
    return 4;
  } catch (const CapacityError& e) {
    std::cerr << "error: " << e.what() << '\n' << "bits_embedded " << e.bits_embedded() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
