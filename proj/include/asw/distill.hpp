#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "asw/matrix.hpp"
#include "asw/model.hpp"
#include "asw/optim.hpp"
#include "asw/vocab.hpp"
#include "asw/window.hpp"

namespace asw {

enum class LossKind { forward_kl, reverse_kl };

struct DistillConfig {
  LossKind loss = LossKind::forward_kl;
  AdamWConfig optimizer{};
  std::size_t epochs = 10;
  std::size_t batch_size = 1;
  std::size_t w = 8;
  std::size_t l_bridge = 8;
  BridgeActivation activation = BridgeActivation::always;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DistillSample {
  TokenSeq prompt;
  TokenSeq response;
};

// Mean over steps of KL(softmax(teacher_t) || softmax(student_t)), in nats.
double forward_kl_loss(std::span<const LogitVector> teacher, std::span<const LogitVector> student);
// Mean over steps of KL(softmax(student_t) || softmax(teacher_t)), in nats.
double reverse_kl_loss(std::span<const LogitVector> teacher, std::span<const LogitVector> student);
double distill_loss(LossKind kind, std::span<const LogitVector> teacher,
                    std::span<const LogitVector> student);

struct TeacherStudent {
  std::vector<LogitVector> teacher;
  std::vector<LogitVector> student;
};

// Teacher: full context prompt || response[0:t]. Student: the anchored window
// with `theta` as soft bridge at the same step. Goes through the generic
// model interface only.
TeacherStudent teacher_student_logits(const LanguageModel& model, const DistillSample& sample,
                                      const Matrix& theta, std::size_t w,
                                      BridgeActivation activation = BridgeActivation::always);

// Teacher logits for every response step of a sample.
std::vector<LogitVector> teacher_logits(const LanguageModel& model, const DistillSample& sample);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;  // l_bridge x dim
};

// Exact reverse-mode gradient of the sample loss with respect to theta. When
// `teacher` is empty the teacher logits are computed on the fly.
LossAndGrad grad_bridge(const Transformer& model, const DistillSample& sample, const Matrix& theta,
                        const DistillConfig& config, std::span<const LogitVector> teacher = {});

// Loss only, evaluated through the same row kernel as grad_bridge.
double sample_loss(const Transformer& model, const DistillSample& sample, const Matrix& theta,
                   const DistillConfig& config, std::span<const LogitVector> teacher = {});

// Rows drawn independently per dimension from a normal fitted to the
// model's token-embedding table (mean and standard deviation).
Matrix init_bridge(const Transformer& model, std::size_t l_bridge, std::uint64_t seed);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Matrix theta;  // best-validation checkpoint
  Matrix initial_theta;
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;  // 0 means the initial bridge was never beaten
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains theta with the model frozen; throws TrainingDiverged when a loss or
// parameter becomes non-finite.
TrainResult train_bridge(const Transformer& model, std::span<const DistillSample> train,
                         std::span<const DistillSample> validation, const DistillConfig& config,
                         const EpochCallback& on_epoch = {});

// Mean over samples of the per-sample loss.
double mean_loss(const Transformer& model, std::span<const DistillSample> samples, const Matrix& theta,
                 const DistillConfig& config);

// JSON lines {"prompt": ..., "response": ...}; strings are byte texts.
std::vector<DistillSample> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, std::span<const DistillSample> samples);
void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log);

// Self-generated corpus: responses of `response_len` byte tokens sampled
// from the model's full-context distribution (reserved ids excluded).
std::vector<DistillSample> generate_corpus(const LanguageModel& model,
                                           std::span<const TokenSeq> prompts,
                                           std::size_t response_len, std::uint64_t seed);

}  // namespace asw
