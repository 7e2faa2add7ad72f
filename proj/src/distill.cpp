#include "asw/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "asw/backprop.hpp"
#include "asw/error.hpp"
#include "asw/rng.hpp"
#include "asw/sampling.hpp"

namespace asw {

void DistillConfig::validate() const {
  if (!(optimizer.lr > 0.0) || !std::isfinite(optimizer.lr)) {
    throw Error(Errc::config_error, "learning rate must be positive");
  }
  if (epochs < 1) {
    throw Error(Errc::config_error, "epochs must be at least 1");
  }
  if (batch_size < 1) {
    throw Error(Errc::config_error, "batch size must be at least 1");
  }
  if (w < 1) {
    throw Error(Errc::config_error, "window length w must be at least 1");
  }
}

namespace {

void check_lengths(std::span<const LogitVector> teacher, std::span<const LogitVector> student) {
  if (teacher.size() != student.size()) {
    throw Error(Errc::shape_error, "teacher has " + std::to_string(teacher.size()) +
                                       " steps, student " + std::to_string(student.size()));
  }
  if (teacher.empty()) {
    throw Error(Errc::shape_error, "loss over zero steps");
  }
}

// KL(softmax(a) || softmax(b)) in nats.
double kl_logits(const LogitVector& a, const LogitVector& b) {
  if (a.size() != b.size()) {
    throw Error(Errc::shape_error, "logit vectors of different length");
  }
  const auto la = log_softmax(a);
  const auto lb = log_softmax(b);
  double kl = 0.0;
  for (std::size_t i = 0; i < la.size(); ++i) {
    kl += std::exp(la[i]) * (la[i] - lb[i]);
  }
  return std::max(kl, 0.0);
}

// Step loss and its gradient with respect to the student logits (already
// divided by the number of steps).
double step_loss(LossKind kind, const LogitVector& teacher, const LogitVector& student,
                 double inv_steps, std::vector<double>* d_student) {
  const auto lp = log_softmax(teacher);
  const auto lq = log_softmax(student);
  const std::size_t n = lp.size();
  double kl = 0.0;
  if (kind == LossKind::forward_kl) {
    for (std::size_t i = 0; i < n; ++i) {
      kl += std::exp(lp[i]) * (lp[i] - lq[i]);
    }
    if (d_student != nullptr) {
      d_student->resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        (*d_student)[i] = (std::exp(lq[i]) - std::exp(lp[i])) * inv_steps;
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      kl += std::exp(lq[i]) * (lq[i] - lp[i]);
    }
    if (d_student != nullptr) {
      d_student->resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        (*d_student)[i] = std::exp(lq[i]) * (lq[i] - lp[i] - kl) * inv_steps;
      }
    }
  }
  return kl;
}

void check_sample(const LanguageModel& model, const DistillSample& sample) {
  if (sample.response.empty()) {
    throw Error(Errc::domain_error, "distillation sample with an empty response");
  }
  for (const TokenId id : sample.prompt) {
    if (id >= model.vocab_size()) {
      throw Error(Errc::unknown_token, "prompt token outside vocabulary");
    }
  }
  for (const TokenId id : sample.response) {
    if (id >= model.vocab_size()) {
      throw Error(Errc::unknown_token, "response token outside vocabulary");
    }
  }
}

void check_theta(const LanguageModel& model, const Matrix& theta) {
  if (theta.rows() > 0 && theta.cols() != model.embedding_dim()) {
    throw Error(Errc::shape_error, "bridge width " + std::to_string(theta.cols()) + " != model dim " +
                                       std::to_string(model.embedding_dim()));
  }
}

// Forward (and optionally backward) pass of the student over one sample.
//
// The prompt and bridge rows are evaluated once. Each step re-runs only its
// tail rows on a copy of that prefix; the tail's backward pass yields the
// gradient with respect to the bridge rows' keys and values, which is summed
// over steps and pushed through the bridge segment in a single final pass.
double run_sample(const Transformer& model, const DistillSample& sample, const Matrix& theta,
                  const DistillConfig& config, std::span<const LogitVector> teacher, Matrix* grad) {
  check_sample(model, sample);
  check_theta(model, theta);
  std::vector<LogitVector> own_teacher;
  if (teacher.empty()) {
    own_teacher = teacher_logits(model, sample);
    teacher = own_teacher;
  }
  const std::size_t steps = sample.response.size();
  if (teacher.size() != steps) {
    throw Error(Errc::shape_error, "cached teacher logits do not match the sample");
  }
  const std::size_t e = model.embedding_dim();
  const std::size_t layers = model.config().layers;
  const std::size_t p_len = sample.prompt.size();
  const std::size_t l_bridge = theta.rows();
  const Matrix theta_rows = l_bridge > 0 ? theta : Matrix(0, e);

  KvCache plain = model.new_cache();
  for (const TokenId id : sample.prompt) {
    model.forward_row(model.params().subspan(model.layout().token_embedding + id * e, e), plain,
                      nullptr);
  }
  KvCache bridged = plain;
  const SegmentTape bridge_tape = forward_segment(model, theta_rows, bridged);

  Matrix d_bridge_hidden(l_bridge, e);
  std::vector<Matrix> ext_k(layers, Matrix(l_bridge, e));
  std::vector<Matrix> ext_v(layers, Matrix(l_bridge, e));
  bool any_grad = false;

  const double inv_steps = 1.0 / static_cast<double>(steps);
  std::vector<double> logits(model.vocab_size());
  std::vector<double> d_logits;
  std::vector<double> d_h(e);
  double total = 0.0;

  for (std::size_t t = 0; t < steps; ++t) {
    const bool use_bridge = config.activation == BridgeActivation::always || t > config.w;
    const std::size_t tail_begin = t > config.w ? t - config.w : 0;
    KvCache cache = use_bridge ? bridged : plain;
    if (cache.length == 0 && tail_begin == t) {
      throw Error(Errc::empty_context, "student window is empty at step 0");
    }
    const Matrix tail = model.embed_tokens(TokenSpan(sample.response).subspan(tail_begin, t - tail_begin));
    const SegmentTape tail_tape = forward_segment(model, tail, cache);
    model.head_logits(cache.last_hidden, logits);
    const bool differentiate = grad != nullptr && use_bridge && l_bridge > 0;
    total += step_loss(config.loss, teacher[t], logits, inv_steps, differentiate ? &d_logits : nullptr);
    if (!differentiate) {
      continue;
    }
    any_grad = true;
    std::fill(d_h.begin(), d_h.end(), 0.0);
    head_backward(model, cache.last_hidden, d_logits, d_h, {});
    if (tail.rows() == 0) {
      auto row = d_bridge_hidden.row(l_bridge - 1);
      for (std::size_t c = 0; c < e; ++c) {
        row[c] += d_h[c];
      }
      continue;
    }
    Matrix d_tail(tail.rows(), e);
    std::copy(d_h.begin(), d_h.end(), d_tail.row(tail.rows() - 1).begin());
    BackwardRequest request;
    request.d_hidden = &d_tail;
    request.want_prefix_grads = true;
    const SegmentGrads g = backward_segment(model, cache, tail_tape, request);
    for (std::size_t li = 0; li < layers; ++li) {
      for (std::size_t r = 0; r < l_bridge; ++r) {
        const auto sk = g.d_prefix_keys[li].row(p_len + r);
        const auto sv = g.d_prefix_values[li].row(p_len + r);
        auto dk = ext_k[li].row(r);
        auto dv = ext_v[li].row(r);
        for (std::size_t c = 0; c < e; ++c) {
          dk[c] += sk[c];
          dv[c] += sv[c];
        }
      }
    }
  }

  const double loss = total * inv_steps;
  if (grad != nullptr) {
    *grad = Matrix(l_bridge, e);
    if (any_grad) {
      BackwardRequest request;
      request.d_hidden = &d_bridge_hidden;
      request.ext_d_keys = &ext_k;
      request.ext_d_values = &ext_v;
      *grad = backward_segment(model, bridged, bridge_tape, request).d_input;
    }
  }
  return loss;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

double forward_kl_loss(std::span<const LogitVector> teacher, std::span<const LogitVector> student) {
  check_lengths(teacher, student);
  double total = 0.0;
  for (std::size_t t = 0; t < teacher.size(); ++t) {
    total += kl_logits(teacher[t], student[t]);
  }
  return total / static_cast<double>(teacher.size());
}

double reverse_kl_loss(std::span<const LogitVector> teacher, std::span<const LogitVector> student) {
  return forward_kl_loss(student, teacher);
}

double distill_loss(LossKind kind, std::span<const LogitVector> teacher,
                    std::span<const LogitVector> student) {
  return kind == LossKind::forward_kl ? forward_kl_loss(teacher, student)
                                      : reverse_kl_loss(teacher, student);
}

std::vector<LogitVector> teacher_logits(const LanguageModel& model, const DistillSample& sample) {
  check_sample(model, sample);
  std::vector<LogitVector> out;
  out.reserve(sample.response.size());
  auto cursor = model.start();
  cursor->push_tokens(sample.prompt);
  for (std::size_t t = 0; t < sample.response.size(); ++t) {
    if (t > 0) {
      cursor->push_token(sample.response[t - 1]);
    }
    out.push_back(cursor->logits());
  }
  return out;
}

TeacherStudent teacher_student_logits(const LanguageModel& model, const DistillSample& sample,
                                      const Matrix& theta, std::size_t w,
                                      BridgeActivation activation) {
  check_theta(model, theta);
  TeacherStudent out;
  out.teacher = teacher_logits(model, sample);
  WindowedInference student(model,
                            WindowPolicy::anchored(w, SoftBridge{theta.rows() > 0 ? theta : Matrix()},
                                                   activation),
                            sample.prompt);
  for (std::size_t t = 0; t < sample.response.size(); ++t) {
    out.student.push_back(student.logits(TokenSpan(sample.response).first(t)));
  }
  return out;
}

LossAndGrad grad_bridge(const Transformer& model, const DistillSample& sample, const Matrix& theta,
                        const DistillConfig& config, std::span<const LogitVector> teacher) {
  LossAndGrad out;
  out.loss = run_sample(model, sample, theta, config, teacher, &out.grad);
  if (!std::isfinite(out.loss) || !all_finite(out.grad.data())) {
    throw Error(Errc::numerical_error, "non-finite loss or bridge gradient");
  }
  return out;
}

double sample_loss(const Transformer& model, const DistillSample& sample, const Matrix& theta,
                   const DistillConfig& config, std::span<const LogitVector> teacher) {
  return run_sample(model, sample, theta, config, teacher, nullptr);
}

Matrix init_bridge(const Transformer& model, std::size_t l_bridge, std::uint64_t seed) {
  const std::size_t e = model.embedding_dim();
  const std::size_t v = model.vocab_size();
  const auto table = model.params().subspan(model.layout().token_embedding, v * e);
  std::vector<double> mean(e, 0.0), var(e, 0.0);
  for (std::size_t r = 0; r < v; ++r) {
    for (std::size_t c = 0; c < e; ++c) {
      mean[c] += table[r * e + c];
    }
  }
  for (double& m : mean) {
    m /= static_cast<double>(v);
  }
  for (std::size_t r = 0; r < v; ++r) {
    for (std::size_t c = 0; c < e; ++c) {
      const double d = table[r * e + c] - mean[c];
      var[c] += d * d;
    }
  }
  ChaChaRng rng(mix_seed(seed, 3), 3);
  Matrix theta(l_bridge, e);
  for (std::size_t r = 0; r < l_bridge; ++r) {
    for (std::size_t c = 0; c < e; ++c) {
      theta(r, c) = mean[c] + std::sqrt(var[c] / static_cast<double>(v)) * rng.normal();
    }
  }
  return theta;
}

double mean_loss(const Transformer& model, std::span<const DistillSample> samples, const Matrix& theta,
                 const DistillConfig& config) {
  if (samples.empty()) {
    throw Error(Errc::domain_error, "mean loss over an empty sample set");
  }
  double total = 0.0;
  for (const auto& s : samples) {
    total += sample_loss(model, s, theta, config);
  }
  return total / static_cast<double>(samples.size());
}

TrainResult train_bridge(const Transformer& model, std::span<const DistillSample> train,
                         std::span<const DistillSample> validation, const DistillConfig& config,
                         const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty() || validation.empty()) {
    throw Error(Errc::domain_error, "training needs non-empty train and validation sets");
  }

  // The teacher is frozen, so its logits are computed once up front.
  std::vector<std::vector<LogitVector>> train_teacher, val_teacher;
  for (const auto& s : train) {
    train_teacher.push_back(teacher_logits(model, s));
  }
  for (const auto& s : validation) {
    val_teacher.push_back(teacher_logits(model, s));
  }
  auto validate_loss = [&](const Matrix& theta) {
    double total = 0.0;
    for (std::size_t i = 0; i < validation.size(); ++i) {
      total += sample_loss(model, validation[i], theta, config, val_teacher[i]);
    }
    return total / static_cast<double>(validation.size());
  };
  auto diverged = [](const std::string& what) {
    return Error(Errc::training_diverged, what);
  };

  TrainResult result;
  Matrix theta = init_bridge(model, config.l_bridge, config.seed);
  result.initial_theta = theta;
  result.initial_val_loss = validate_loss(theta);
  if (!std::isfinite(result.initial_val_loss)) {
    throw diverged("initial validation loss is not finite");
  }
  result.theta = theta;
  result.best_val_loss = result.initial_val_loss;

  AdamW optimizer(theta.data().size(), config.optimizer);
  ChaChaRng shuffle_rng(mix_seed(config.seed, 4), 4);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Matrix batch_grad(theta.rows(), theta.cols());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::fill(batch_grad.data().begin(), batch_grad.data().end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        Matrix g;
        const double loss =
            run_sample(model, train[order[k]], theta, config, train_teacher[order[k]], &g);
        if (!std::isfinite(loss) || !all_finite(g.data())) {
          throw diverged("non-finite loss or gradient in epoch " + std::to_string(epoch));
        }
        epoch_total += loss;
        for (std::size_t i = 0; i < g.data().size(); ++i) {
          batch_grad.data()[i] += g.data()[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (double& v : batch_grad.data()) {
        v *= inv;
      }
      optimizer.step(theta.data(), batch_grad.data());
      if (!all_finite(theta.data())) {
        throw diverged("bridge parameters became non-finite in epoch " + std::to_string(epoch));
      }
    }
    EpochLog entry{epoch, epoch_total / static_cast<double>(train.size()), validate_loss(theta)};
    if (!std::isfinite(entry.val_loss)) {
      throw diverged("validation loss is not finite in epoch " + std::to_string(epoch));
    }
    result.log.push_back(entry);
    if (entry.val_loss < result.best_val_loss) {
      result.best_val_loss = entry.val_loss;
      result.best_epoch = epoch;
      result.theta = theta;
    }
    if (on_epoch) {
      on_epoch(entry);
    }
  }
  return result;
}

namespace {

std::string to_text(TokenSpan tokens) {
  std::string out;
  for (const TokenId id : tokens) {
    if (id > 255) {
      throw Error(Errc::malformed_sequence, "corpus text contains a reserved id");
    }
    out.push_back(static_cast<char>(id));
  }
  return out;
}

}  // namespace

std::vector<DistillSample> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::io_error, "cannot open corpus " + path.string());
  }
  std::vector<DistillSample> out;
  std::string line;
  std::size_t line_no = 0;
  const Vocabulary vocab;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(line);
      DistillSample s;
      s.prompt = vocab.tokenize(j.at("prompt").get<std::string>());
      s.response = vocab.tokenize(j.at("response").get<std::string>());
      if (s.response.empty()) {
        throw Error(Errc::config_error, "empty response");
      }
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(Errc::config_error, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

void save_corpus(const std::filesystem::path& path, std::span<const DistillSample> samples) {
  std::ofstream out(path);
  if (!out) {
    throw Error(Errc::io_error, "cannot write " + path.string());
  }
  for (const auto& s : samples) {
    out << nlohmann::json{{"prompt", to_text(s.prompt)}, {"response", to_text(s.response)}}.dump()
        << '\n';
  }
}

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log) {
  std::ofstream out(path);
  if (!out) {
    throw Error(Errc::io_error, "cannot write " + path.string());
  }
  out.precision(17);
  out << "epoch,train_loss,val_loss\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
  }
}

std::vector<DistillSample> generate_corpus(const LanguageModel& model,
                                           std::span<const TokenSeq> prompts,
                                           std::size_t response_len, std::uint64_t seed) {
  std::vector<DistillSample> out;
  ChaChaRng rng(mix_seed(seed, 5), 5);
  const SamplerConfig sampler;
  for (const auto& prompt : prompts) {
    DistillSample s{prompt, {}};
    auto cursor = model.start();
    cursor->push_tokens(prompt);
    while (s.response.size() < response_len) {
      ProbDist d = dist_from_logits(cursor->logits(), sampler);
      // Keep the corpus printable as JSON: ASCII bytes only.
      std::erase_if(d.support, [](TokenId id) { return id > 127; });
      double mass = 0.0;
      for (const TokenId id : d.support) {
        mass += d.probs[id];
      }
      for (const TokenId id : d.support) {
        d.probs[id] /= mass;
      }
      const TokenId next = sample_multinomial(d, rng);
      s.response.push_back(next);
      cursor->push_token(next);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace asw
