#include "asw/window.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>

#include "asw/binary_io.hpp"
#include "asw/error.hpp"

namespace asw {

WindowPolicy WindowPolicy::full_context() { return WindowPolicy{}; }

WindowPolicy WindowPolicy::basic(std::size_t w) {
  WindowPolicy p;
  p.kind = WindowKind::basic;
  p.w = w;
  return p;
}

WindowPolicy WindowPolicy::anchored(std::size_t w, BridgeContext bridge,
                                    BridgeActivation activation) {
  WindowPolicy p;
  p.kind = WindowKind::asw;
  p.w = w;
  p.bridge = std::move(bridge);
  p.activation = activation;
  return p;
}

void WindowPolicy::validate() const {
  if (kind != WindowKind::full && w < 1) {
    throw Error(Errc::config_error, "window length w must be at least 1");
  }
  if (kind == WindowKind::asw && !bridge) {
    throw Error(Errc::config_error, "anchored window requires a bridge context");
  }
  if (kind != WindowKind::asw && bridge) {
    throw Error(Errc::config_error, "only the anchored window takes a bridge context");
  }
  if (bridge) {
    if (const auto* hard = std::get_if<HardBridge>(&*bridge)) {
      for (const TokenId id : hard->tokens) {
        if (id >= 256) {
          throw Error(Errc::config_error, "hard bridge contains a reserved or unknown id");
        }
      }
    } else {
      for (const double v : std::get<SoftBridge>(*bridge).theta.data()) {
        if (!std::isfinite(v)) {
          throw Error(Errc::numerical_error, "soft bridge contains non-finite values");
        }
      }
    }
  }
}

bool WindowPolicy::has_soft_bridge() const noexcept {
  return bridge && std::holds_alternative<SoftBridge>(*bridge);
}

std::size_t WindowPolicy::bridge_length() const noexcept {
  if (!bridge) {
    return 0;
  }
  if (const auto* hard = std::get_if<HardBridge>(&*bridge)) {
    return hard->tokens.size();
  }
  return std::get<SoftBridge>(*bridge).theta.rows();
}

std::uint64_t WindowPolicy::bridge_hash() const noexcept {
  if (!bridge) {
    return 0;
  }
  if (const auto* hard = std::get_if<HardBridge>(&*bridge)) {
    return fnv1a_of(TokenSpan(hard->tokens), 0x68617264ull);
  }
  return fnv1a_of(std::get<SoftBridge>(*bridge).theta.data(), 0x736f6674ull);
}

WindowLayout layout_window(const WindowPolicy& policy, std::size_t prompt_len, std::size_t t) {
  WindowLayout layout;
  const std::size_t total = prompt_len + t;
  switch (policy.kind) {
    case WindowKind::full:
      layout.head_end = total;
      break;
    case WindowKind::basic:
      layout.head_begin = total > policy.w ? total - policy.w : 0;
      layout.head_end = total;
      break;
    case WindowKind::asw:
      layout.head_end = prompt_len;
      layout.bridge = policy.activation == BridgeActivation::always || t > policy.w;
      layout.tail_begin = prompt_len + (t > policy.w ? t - policy.w : 0);
      layout.tail_end = total;
      break;
  }
  return layout;
}

namespace {

TokenId token_at(TokenSpan prompt, TokenSpan generated, std::size_t i) {
  return i < prompt.size() ? prompt[i] : generated[i - prompt.size()];
}

void append_range(TokenSeq& out, TokenSpan prompt, TokenSpan generated, std::size_t begin,
                  std::size_t end) {
  for (std::size_t i = begin; i < end; ++i) {
    out.push_back(token_at(prompt, generated, i));
  }
}

bool same_range(TokenSpan prompt, TokenSpan a_gen, std::size_t a_begin, std::size_t a_end,
                TokenSpan b_gen, std::size_t b_begin, std::size_t b_end) {
  if (a_end - a_begin != b_end - b_begin) {
    return false;
  }
  for (std::size_t k = 0; k < a_end - a_begin; ++k) {
    if (token_at(prompt, a_gen, a_begin + k) != token_at(prompt, b_gen, b_begin + k)) {
      return false;
    }
  }
  return true;
}

}  // namespace

TokenSeq build_token_window(TokenSpan prompt, TokenSpan generated, const WindowPolicy& policy) {
  if (policy.has_soft_bridge()) {
    throw Error(Errc::use_embedding_path, "soft bridge windows are built at the embedding level");
  }
  const WindowLayout layout = layout_window(policy, prompt.size(), generated.size());
  TokenSeq out;
  append_range(out, prompt, generated, layout.head_begin, layout.head_end);
  if (layout.bridge) {
    const auto& bridge = std::get<HardBridge>(*policy.bridge).tokens;
    out.insert(out.end(), bridge.begin(), bridge.end());
  }
  append_range(out, prompt, generated, layout.tail_begin, layout.tail_end);
  return out;
}

Matrix build_embedding_window(TokenSpan prompt, TokenSpan generated, const WindowPolicy& policy,
                              const LanguageModel& model) {
  if (!policy.has_soft_bridge()) {
    return model.embed_tokens(build_token_window(prompt, generated, policy));
  }
  const Matrix& theta = std::get<SoftBridge>(*policy.bridge).theta;
  if (theta.rows() > 0 && theta.cols() != model.embedding_dim()) {
    throw Error(Errc::shape_error, "soft bridge width " + std::to_string(theta.cols()) +
                                       " != model dim " + std::to_string(model.embedding_dim()));
  }
  const WindowLayout layout = layout_window(policy, prompt.size(), generated.size());
  TokenSeq head, tail;
  append_range(head, prompt, generated, layout.head_begin, layout.head_end);
  append_range(tail, prompt, generated, layout.tail_begin, layout.tail_end);
  Matrix out = model.embed_tokens(head);
  if (out.cols() == 0) {
    out = Matrix(0, model.embedding_dim());
  }
  if (layout.bridge) {
    out.append_rows(theta);
  }
  out.append_rows(model.embed_tokens(tail));
  return out;
}

std::vector<std::size_t> window_dependency_set(const WindowPolicy& policy, std::size_t t,
                                               std::size_t /*prompt_len*/, std::size_t gen_len) {
  if (t > gen_len) {
    throw Error(Errc::domain_error, "step index beyond generated length");
  }
  std::size_t first = 0;
  if (policy.kind != WindowKind::full) {
    first = t > policy.w ? t - policy.w : 0;
  }
  std::vector<std::size_t> out;
  for (std::size_t j = first; j < t; ++j) {
    out.push_back(j);
  }
  return out;
}

std::uint64_t window_hash(TokenSpan prompt, TokenSpan generated, const WindowPolicy& policy) {
  const WindowLayout layout = layout_window(policy, prompt.size(), generated.size());
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(policy.kind));
  for (std::size_t i = layout.head_begin; i < layout.head_end; ++i) {
    words.push_back(token_at(prompt, generated, i));
  }
  words.push_back(0xffffffffu);
  if (layout.bridge) {
    const std::uint64_t bh = policy.bridge_hash();
    words.push_back(static_cast<std::uint32_t>(bh));
    words.push_back(static_cast<std::uint32_t>(bh >> 32));
  }
  words.push_back(0xfffffffeu);
  for (std::size_t i = layout.tail_begin; i < layout.tail_end; ++i) {
    words.push_back(token_at(prompt, generated, i));
  }
  return fnv1a_of(std::span<const std::uint32_t>(words));
}

bool same_window(TokenSpan prompt, const WindowPolicy& policy, TokenSpan a_gen, std::size_t a_t,
                 TokenSpan b_gen, std::size_t b_t) {
  const WindowLayout a = layout_window(policy, prompt.size(), a_t);
  const WindowLayout b = layout_window(policy, prompt.size(), b_t);
  return a.bridge == b.bridge &&
         same_range(prompt, a_gen, a.head_begin, a.head_end, b_gen, b.head_begin, b.head_end) &&
         same_range(prompt, a_gen, a.tail_begin, a.tail_end, b_gen, b.tail_begin, b.tail_end);
}

WindowedInference::WindowedInference(const LanguageModel& model, WindowPolicy policy,
                                     TokenSeq prompt)
    : model_(&model), policy_(std::move(policy)), prompt_(std::move(prompt)) {
  policy_.validate();
  if (policy_.has_soft_bridge()) {
    const Matrix& theta = std::get<SoftBridge>(*policy_.bridge).theta;
    if (theta.rows() > 0 && theta.cols() != model.embedding_dim()) {
      throw Error(Errc::shape_error, "soft bridge width does not match model dim");
    }
  }
  if (policy_.kind == WindowKind::asw) {
    prefix_bridge_ = make_prefix(true);
    if (policy_.activation == BridgeActivation::after_overflow) {
      prefix_plain_ = make_prefix(false);
    }
  } else if (policy_.kind == WindowKind::full) {
    prefix_plain_ = make_prefix(false);
  }
}

std::unique_ptr<Cursor> WindowedInference::make_prefix(bool with_bridge) const {
  auto cursor = model_->start();
  cursor->push_tokens(prompt_);
  if (with_bridge) {
    if (const auto* hard = std::get_if<HardBridge>(&*policy_.bridge)) {
      cursor->push_tokens(hard->tokens);
    } else {
      cursor->push_embeddings(std::get<SoftBridge>(*policy_.bridge).theta);
    }
  }
  return cursor;
}

LogitVector WindowedInference::logits(TokenSpan generated) {
  const WindowLayout layout = layout_window(policy_, prompt_.size(), generated.size());
  switch (policy_.kind) {
    case WindowKind::full: {
      const bool extends = full_cursor_ && full_pushed_.size() <= generated.size() &&
                           std::equal(full_pushed_.begin(), full_pushed_.end(), generated.begin());
      if (!extends) {
        full_cursor_ = prefix_plain_->clone();
        full_pushed_.clear();
      }
      for (std::size_t i = full_pushed_.size(); i < generated.size(); ++i) {
        full_cursor_->push_token(generated[i]);
        full_pushed_.push_back(generated[i]);
      }
      return full_cursor_->logits();
    }
    case WindowKind::basic: {
      auto cursor = model_->start();
      for (std::size_t i = layout.head_begin; i < layout.head_end; ++i) {
        cursor->push_token(token_at(prompt_, generated, i));
      }
      return cursor->logits();
    }
    case WindowKind::asw: {
      auto cursor = (layout.bridge ? prefix_bridge_ : prefix_plain_)->clone();
      for (std::size_t i = layout.tail_begin; i < layout.tail_end; ++i) {
        cursor->push_token(token_at(prompt_, generated, i));
      }
      return cursor->logits();
    }
  }
  throw Error(Errc::config_error, "unknown window kind");
}

namespace {
constexpr std::array<char, 4> kBridgeMagic{'A', 'S', 'W', 'B'};
}

void save_soft_bridge(const std::filesystem::path& path, const Matrix& theta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(Errc::io_error, "cannot write " + path.string());
  }
  out.write(kBridgeMagic.data(), 4);
  write_u32(out, static_cast<std::uint32_t>(theta.rows()));
  write_u32(out, static_cast<std::uint32_t>(theta.cols()));
  write_f64_block(out, theta.data());
  if (!out) {
    throw Error(Errc::io_error, "failed writing " + path.string());
  }
}

Matrix load_soft_bridge(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::io_error, "cannot open bridge " + path.string());
  }
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kBridgeMagic) {
    throw Error(Errc::io_error, path.string() + " is not an ASWB bridge file");
  }
  const std::uint32_t rows = read_u32(in);
  const std::uint32_t cols = read_u32(in);
  const auto values = read_f64_block(in, static_cast<std::size_t>(rows) * cols);
  Matrix theta(rows, cols);
  std::copy(values.begin(), values.end(), theta.data().begin());
  return theta;
}

}  // namespace asw
