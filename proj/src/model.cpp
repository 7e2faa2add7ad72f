#include "asw/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <string>

#include "asw/binary_io.hpp"
#include "asw/error.hpp"
#include "asw/kernels.hpp"
#include "asw/rng.hpp"

namespace asw {

LogitVector LanguageModel::next_logits(TokenSpan context) const {
  if (context.empty()) {
    throw Error(Errc::empty_context, "next_logits needs at least one token");
  }
  if (context.size() > max_context()) {
    throw Error(Errc::context_overflow, "context of " + std::to_string(context.size()) +
                                            " tokens exceeds " + std::to_string(max_context()));
  }
  auto cursor = start();
  cursor->push_tokens(context);
  return cursor->logits();
}

LogitVector LanguageModel::next_logits_emb(const Matrix& embeddings) const {
  if (embeddings.rows() == 0) {
    throw Error(Errc::empty_context, "next_logits_emb needs at least one row");
  }
  if (embedding_dim() == 0 || embeddings.cols() != embedding_dim()) {
    throw Error(Errc::shape_error, "embedding width " + std::to_string(embeddings.cols()) +
                                       " does not match model dim " +
                                       std::to_string(embedding_dim()));
  }
  if (embeddings.rows() > max_context()) {
    throw Error(Errc::context_overflow, "embedding window exceeds model context");
  }
  auto cursor = start();
  cursor->push_embeddings(embeddings);
  return cursor->logits();
}

void ModelConfig::validate() const {
  if (layers == 0 || dim == 0 || heads == 0 || ffn == 0 || max_context == 0) {
    throw Error(Errc::config_error, "model dimensions must be positive");
  }
  if (dim % heads != 0) {
    throw Error(Errc::config_error, "dim must be divisible by heads");
  }
  if (dim % 2 != 0) {
    throw Error(Errc::config_error, "dim must be even for sinusoidal positions");
  }
  if (vocab < 4) {
    throw Error(Errc::config_error, "vocabulary needs at least 4 ids");
  }
}

ParamLayout::ParamLayout(const ModelConfig& config) {
  const std::size_t e = config.dim;
  const std::size_t f = config.ffn;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t here = at;
    at += n;
    return here;
  };
  token_embedding = take(config.vocab * e);
  layers.resize(config.layers);
  for (auto& layer : layers) {
    layer.ln1_gain = take(e);
    layer.ln1_bias = take(e);
    layer.wq = take(e * e);
    layer.wk = take(e * e);
    layer.wv = take(e * e);
    layer.wo = take(e * e);
    layer.ln2_gain = take(e);
    layer.ln2_bias = take(e);
    layer.w1 = take(e * f);
    layer.b1 = take(f);
    layer.w2 = take(f * e);
    layer.b2 = take(e);
  }
  lnf_gain = take(e);
  lnf_bias = take(e);
  w_out = take(e * config.vocab);
  b_out = take(config.vocab);
  total = at;
}

Transformer::Transformer(ModelConfig config, std::vector<double> params)
    : config_(config), layout_((config.validate(), config)), params_(std::move(params)) {
  if (params_.size() != layout_.total) {
    throw Error(Errc::shape_error, "expected " + std::to_string(layout_.total) +
                                       " parameters, got " + std::to_string(params_.size()));
  }
  for (const double p : params_) {
    if (!std::isfinite(p)) {
      throw Error(Errc::numerical_error, "non-finite model parameter");
    }
  }
  const std::size_t e = config_.dim;
  positional_.assign(config_.max_context * e, 0.0);
  for (std::size_t pos = 0; pos < config_.max_context; ++pos) {
    for (std::size_t i = 0; i < e / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(e));
      const double angle = static_cast<double>(pos) * freq;
      positional_[pos * e + 2 * i] = std::sin(angle);
      positional_[pos * e + 2 * i + 1] = std::cos(angle);
    }
  }
}

Transformer Transformer::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const ParamLayout layout(config);
  std::vector<double> params(layout.total, 0.0);
  ChaChaRng rng(seed, 0x6d6f64656cull);
  const double e = config.dim;
  const double depth_scale = 1.0 / std::sqrt(2.0 * config.layers);
  auto fill = [&](std::size_t offset, std::size_t count, double stddev) {
    for (std::size_t i = 0; i < count; ++i) {
      params[offset + i] = stddev * rng.normal();
    }
  };
  auto ones = [&](std::size_t offset, std::size_t count) {
    std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(offset), count, 1.0);
  };
  fill(layout.token_embedding, config.vocab * config.dim, 0.5);
  for (const auto& layer : layout.layers) {
    ones(layer.ln1_gain, config.dim);
    fill(layer.wq, config.dim * config.dim, 1.0 / std::sqrt(e));
    fill(layer.wk, config.dim * config.dim, 1.0 / std::sqrt(e));
    fill(layer.wv, config.dim * config.dim, 1.0 / std::sqrt(e));
    fill(layer.wo, config.dim * config.dim, depth_scale / std::sqrt(e));
    ones(layer.ln2_gain, config.dim);
    fill(layer.w1, config.dim * config.ffn, 1.0 / std::sqrt(e));
    fill(layer.w2, config.ffn * config.dim, depth_scale / std::sqrt(static_cast<double>(config.ffn)));
  }
  ones(layout.lnf_gain, config.dim);
  fill(layout.w_out, config.dim * config.vocab, 1.0 / std::sqrt(e));
  return Transformer(config, std::move(params));
}

namespace {

constexpr std::array<char, 4> kModelMagic{'A', 'S', 'W', 'L'};
constexpr std::uint32_t kModelVersion = 1;

}  // namespace

void Transformer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(Errc::io_error, "cannot write " + path.string());
  }
  out.write(kModelMagic.data(), 4);
  write_u32(out, kModelVersion);
  write_u32(out, config_.layers);
  write_u32(out, config_.dim);
  write_u32(out, config_.heads);
  write_u32(out, config_.ffn);
  write_u32(out, config_.vocab);
  write_f64_block(out, params_);
  if (!out) {
    throw Error(Errc::io_error, "failed writing " + path.string());
  }
}

Transformer Transformer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::io_error, "cannot open model " + path.string());
  }
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kModelMagic) {
    throw Error(Errc::io_error, path.string() + " is not an ASWL checkpoint");
  }
  if (const auto version = read_u32(in); version != kModelVersion) {
    throw Error(Errc::io_error, "unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig config;
  config.layers = read_u32(in);
  config.dim = read_u32(in);
  config.heads = read_u32(in);
  config.ffn = read_u32(in);
  config.vocab = read_u32(in);
  config.validate();
  const ParamLayout layout(config);
  auto params = read_f64_block(in, layout.total);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(Errc::io_error, "trailing bytes after weights in " + path.string());
  }
  return Transformer(config, std::move(params));
}

std::uint64_t Transformer::params_hash() const noexcept {
  return fnv1a_of(std::span<const double>(params_));
}

KvCache Transformer::new_cache() const {
  KvCache cache;
  cache.keys.resize(config_.layers);
  cache.values.resize(config_.layers);
  return cache;
}

Matrix Transformer::embed_tokens(TokenSpan tokens) const {
  const std::size_t e = config_.dim;
  Matrix out(tokens.size(), e);
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    const TokenId id = tokens[r];
    if (id >= config_.vocab) {
      throw Error(Errc::unknown_token, "token id " + std::to_string(id) + " outside vocabulary");
    }
    const double* src = params_.data() + layout_.token_embedding + id * e;
    std::copy(src, src + e, out.row(r).begin());
  }
  return out;
}

void Transformer::forward_row(std::span<const double> input, KvCache& cache, RowTape* tape) const {
  const std::size_t e = config_.dim;
  const std::size_t heads = config_.heads;
  const std::size_t hd = e / heads;
  const std::size_t f = config_.ffn;
  const std::size_t pos = cache.length;
  if (input.size() != e) {
    throw Error(Errc::shape_error, "input row width " + std::to_string(input.size()) +
                                       " != model dim " + std::to_string(e));
  }
  if (pos >= config_.max_context) {
    throw Error(Errc::context_overflow, "window exceeds " + std::to_string(config_.max_context) +
                                            " positions");
  }
  const double* p = params_.data();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> x(e);
  const auto pe = positional(pos);
  for (std::size_t c = 0; c < e; ++c) {
    x[c] = input[c] + pe[c];
  }

  if (tape != nullptr) {
    tape->position = pos;
    tape->layers.resize(config_.layers);
  }
  RowTape::Layer scratch;
  std::vector<double> o(e), ffn_out(e);

  for (std::size_t l = 0; l < config_.layers; ++l) {
    const auto& lay = layout_.layers[l];
    RowTape::Layer& t = tape != nullptr ? tape->layers[l] : scratch;
    t.xhat1.resize(e);
    t.h1.resize(e);
    t.q.resize(e);
    t.att.assign(e, 0.0);
    t.xhat2.resize(e);
    t.h2.resize(e);
    t.pre_act.resize(f);
    t.act.resize(f);
    t.probs.resize(heads * (pos + 1));

    t.rstd1 = kernels::layer_norm(x, {p + lay.ln1_gain, e}, {p + lay.ln1_bias, e}, t.xhat1, t.h1);

    auto& keys = cache.keys[l];
    auto& values = cache.values[l];
    keys.resize((pos + 1) * e);
    values.resize((pos + 1) * e);
    kernels::vec_mat(t.h1, p + lay.wq, e, e, nullptr, t.q);
    kernels::vec_mat(t.h1, p + lay.wk, e, e, nullptr, {keys.data() + pos * e, e});
    kernels::vec_mat(t.h1, p + lay.wv, e, e, nullptr, {values.data() + pos * e, e});

    for (std::size_t h = 0; h < heads; ++h) {
      double* probs = t.probs.data() + h * (pos + 1);
      const std::size_t c0 = h * hd;
      double max_score = -INFINITY;
      for (std::size_t j = 0; j <= pos; ++j) {
        const double* kj = keys.data() + j * e + c0;
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) {
          s += t.q[c0 + c] * kj[c];
        }
        probs[j] = s * scale;
        max_score = std::max(max_score, probs[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j <= pos; ++j) {
        probs[j] = std::exp(probs[j] - max_score);
        total += probs[j];
      }
      for (std::size_t j = 0; j <= pos; ++j) {
        probs[j] /= total;
      }
      for (std::size_t j = 0; j <= pos; ++j) {
        const double* vj = values.data() + j * e + c0;
        const double pj = probs[j];
        for (std::size_t c = 0; c < hd; ++c) {
          t.att[c0 + c] += pj * vj[c];
        }
      }
    }

    kernels::vec_mat(t.att, p + lay.wo, e, e, nullptr, o);
    for (std::size_t c = 0; c < e; ++c) {
      x[c] += o[c];
    }

    t.rstd2 = kernels::layer_norm(x, {p + lay.ln2_gain, e}, {p + lay.ln2_bias, e}, t.xhat2, t.h2);
    kernels::vec_mat(t.h2, p + lay.w1, e, f, p + lay.b1, t.pre_act);
    for (std::size_t i = 0; i < f; ++i) {
      t.act[i] = kernels::gelu(t.pre_act[i]);
    }
    kernels::vec_mat(t.act, p + lay.w2, f, e, p + lay.b2, ffn_out);
    for (std::size_t c = 0; c < e; ++c) {
      x[c] += ffn_out[c];
    }
  }

  cache.length = pos + 1;
  if (tape != nullptr) {
    tape->hidden_out = x;
  }
  cache.last_hidden = std::move(x);
}

void Transformer::head_logits(std::span<const double> hidden, std::span<double> logits) const {
  const std::size_t e = config_.dim;
  const double* p = params_.data();
  std::vector<double> xhat(e), h(e);
  kernels::layer_norm(hidden, {p + layout_.lnf_gain, e}, {p + layout_.lnf_bias, e}, xhat, h);
  kernels::vec_mat(h, p + layout_.w_out, e, config_.vocab, p + layout_.b_out, logits);
}

namespace {

class TransformerCursor final : public Cursor {
 public:
  explicit TransformerCursor(const Transformer& model) : model_(&model), cache_(model.new_cache()) {}

  void push_token(TokenId id) override {
    if (id >= model_->vocab_size()) {
      throw Error(Errc::unknown_token, "token id " + std::to_string(id) + " outside vocabulary");
    }
    const std::size_t e = model_->embedding_dim();
    const auto params = model_->params();
    model_->forward_row(params.subspan(model_->layout().token_embedding + id * e, e), cache_,
                        nullptr);
  }

  void push_embedding(std::span<const double> row) override {
    model_->forward_row(row, cache_, nullptr);
  }

  std::size_t length() const noexcept override { return cache_.length; }

  LogitVector logits() const override {
    if (cache_.length == 0) {
      throw Error(Errc::empty_context, "cursor has no rows");
    }
    LogitVector out(model_->vocab_size());
    model_->head_logits(cache_.last_hidden, out);
    return out;
  }

  std::unique_ptr<Cursor> clone() const override {
    return std::make_unique<TransformerCursor>(*this);
  }

 private:
  const Transformer* model_;
  KvCache cache_;
};

class UniformCursor final : public Cursor {
 public:
  UniformCursor(const UniformSubsetModel& model) : model_(&model) {}

  void push_token(TokenId id) override {
    if (id >= model_->vocab_size()) {
      throw Error(Errc::unknown_token, "token id " + std::to_string(id) + " outside vocabulary");
    }
    if (length_ >= model_->max_context()) {
      throw Error(Errc::context_overflow, "uniform model context exceeded");
    }
    ++length_;
  }
  void push_embedding(std::span<const double>) override {
    throw Error(Errc::shape_error, "uniform model has no embedding interface");
  }
  std::size_t length() const noexcept override { return length_; }
  LogitVector logits() const override {
    if (length_ == 0) {
      throw Error(Errc::empty_context, "cursor has no rows");
    }
    return model_->fixed_logits();
  }
  std::unique_ptr<Cursor> clone() const override { return std::make_unique<UniformCursor>(*this); }

 private:
  const UniformSubsetModel* model_;
  std::size_t length_ = 0;
};

}  // namespace

std::unique_ptr<Cursor> Transformer::start() const {
  return std::make_unique<TransformerCursor>(*this);
}

UniformSubsetModel::UniformSubsetModel(std::uint32_t vocab_size, std::vector<TokenId> allowed,
                                       std::size_t max_context)
    : vocab_size_(vocab_size), max_context_(max_context), logits_(vocab_size, -1.0e4) {
  if (allowed.empty()) {
    throw Error(Errc::domain_error, "uniform model needs at least one token");
  }
  for (const TokenId id : allowed) {
    if (id >= vocab_size) {
      throw Error(Errc::unknown_token, "allowed token outside vocabulary");
    }
    logits_[id] = 0.0;
  }
}

std::unique_ptr<Cursor> UniformSubsetModel::start() const {
  return std::make_unique<UniformCursor>(*this);
}

Matrix UniformSubsetModel::embed_tokens(TokenSpan) const {
  throw Error(Errc::shape_error, "uniform model has no embedding interface");
}

std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed) noexcept {
  std::uint64_t h = seed;
  for (const std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace asw
