#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "asw/matrix.hpp"
#include "asw/vocab.hpp"

namespace asw {

using LogitVector = std::vector<double>;

// Incremental view of one context: rows are appended left to right and the
// logits for the next token are available after every append. Position
// indices are assigned by the cursor (0, 1, 2, ...), so a cursor always
// describes a window, never an absolute place in a longer text.
class Cursor {
 public:
  virtual ~Cursor() = default;

  virtual void push_token(TokenId id) = 0;
  virtual void push_embedding(std::span<const double> row) = 0;
  virtual std::size_t length() const noexcept = 0;
  // Throws EmptyContext when nothing has been pushed.
  virtual LogitVector logits() const = 0;
  virtual std::unique_ptr<Cursor> clone() const = 0;

  void push_tokens(TokenSpan ids) {
    for (const TokenId id : ids) {
      push_token(id);
    }
  }
  void push_embeddings(const Matrix& rows) {
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      push_embedding(rows.row(r));
    }
  }
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::uint32_t vocab_size() const noexcept = 0;
  // 0 when the model has no embedding-level interface.
  virtual std::size_t embedding_dim() const noexcept = 0;
  virtual std::size_t max_context() const noexcept = 0;
  virtual std::unique_ptr<Cursor> start() const = 0;
  virtual Matrix embed_tokens(TokenSpan tokens) const = 0;

  LogitVector next_logits(TokenSpan context) const;
  LogitVector next_logits_emb(const Matrix& embeddings) const;
};

struct ModelConfig {
  std::uint32_t layers = 2;
  std::uint32_t dim = 64;
  std::uint32_t heads = 4;
  std::uint32_t ffn = 256;
  std::uint32_t vocab = Vocabulary::kSize;
  std::uint32_t max_context = 512;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Offsets of every parameter block inside the flat parameter vector. The
// order below is also the on-disk order of checkpoint weight blocks.
struct ParamLayout {
  struct Layer {
    std::size_t ln1_gain, ln1_bias;
    std::size_t wq, wk, wv, wo;  // dim x dim each
    std::size_t ln2_gain, ln2_bias;
    std::size_t w1, b1;  // dim x ffn, ffn
    std::size_t w2, b2;  // ffn x dim, dim
  };

  explicit ParamLayout(const ModelConfig& config);

  std::size_t token_embedding = 0;  // vocab x dim
  std::vector<Layer> layers;
  std::size_t lnf_gain = 0, lnf_bias = 0;
  std::size_t w_out = 0;  // dim x vocab
  std::size_t b_out = 0;  // vocab
  std::size_t total = 0;
};

// Per-layer attention keys/values of every row pushed so far.
struct KvCache {
  std::vector<std::vector<double>> keys;    // per layer, length x dim
  std::vector<std::vector<double>> values;  // per layer, length x dim
  std::size_t length = 0;
  std::vector<double> last_hidden;  // residual stream of the newest row
};

// Activations of one row kept for reverse-mode differentiation.
struct RowTape {
  struct Layer {
    std::vector<double> xhat1, h1, q, probs, att, xhat2, h2, pre_act, act;
    double rstd1 = 0.0, rstd2 = 0.0;
  };
  std::size_t position = 0;
  std::vector<Layer> layers;
  std::vector<double> hidden_out;
};

// Decoder-only pre-norm transformer over the byte vocabulary. All arithmetic
// is float64 and every row is evaluated by the same code path, so a row's
// output is bit-identical whether it is computed alone, incrementally, or as
// part of a training segment.
class Transformer final : public LanguageModel {
 public:
  Transformer(ModelConfig config, std::vector<double> params);

  static Transformer initialize(const ModelConfig& config, std::uint64_t seed);
  static Transformer load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::uint32_t vocab_size() const noexcept override { return config_.vocab; }
  std::size_t embedding_dim() const noexcept override { return config_.dim; }
  std::size_t max_context() const noexcept override { return config_.max_context; }
  std::unique_ptr<Cursor> start() const override;
  Matrix embed_tokens(TokenSpan tokens) const override;

  const ModelConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> mutable_params() noexcept { return params_; }
  std::uint64_t params_hash() const noexcept;

  KvCache new_cache() const;
  // Appends one input row (token embedding or soft row) to `cache`; records
  // activations into `tape` when it is non-null.
  void forward_row(std::span<const double> input, KvCache& cache, RowTape* tape) const;
  void head_logits(std::span<const double> hidden, std::span<double> logits) const;
  std::span<const double> positional(std::size_t position) const noexcept {
    return {positional_.data() + position * config_.dim, config_.dim};
  }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  std::vector<double> params_;
  std::vector<double> positional_;  // max_context x dim sinusoidal table
};

// Model that ignores its context and always emits equal logits over a fixed
// token subset (all other tokens get a large negative logit).
class UniformSubsetModel final : public LanguageModel {
 public:
  UniformSubsetModel(std::uint32_t vocab_size, std::vector<TokenId> allowed,
                     std::size_t max_context = 1u << 20);

  std::uint32_t vocab_size() const noexcept override { return vocab_size_; }
  std::size_t embedding_dim() const noexcept override { return 0; }
  std::size_t max_context() const noexcept override { return max_context_; }
  std::unique_ptr<Cursor> start() const override;
  Matrix embed_tokens(TokenSpan tokens) const override;

  const LogitVector& fixed_logits() const noexcept { return logits_; }

 private:
  std::uint32_t vocab_size_;
  std::size_t max_context_;
  LogitVector logits_;
};

// FNV-1a over raw bytes; used for parameter, window and config fingerprints.
std::uint64_t fnv1a(std::span<const std::byte> bytes,
                    std::uint64_t seed = 0xcbf29ce484222325ull) noexcept;

template <typename T>
std::uint64_t fnv1a_of(std::span<const T> values,
                       std::uint64_t seed = 0xcbf29ce484222325ull) noexcept {
  return fnv1a(std::as_bytes(values), seed);
}

}  // namespace asw
