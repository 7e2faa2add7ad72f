#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "asw/matrix.hpp"
#include "asw/model.hpp"
#include "asw/vocab.hpp"

namespace asw {

enum class WindowKind { full, basic, asw };
enum class BridgeActivation { always, after_overflow };

struct HardBridge {
  TokenSeq tokens;
};

// Trainable rows (l_bridge x dim) spliced in at the embedding level.
struct SoftBridge {
  Matrix theta;
};

using BridgeContext = std::variant<HardBridge, SoftBridge>;

struct WindowPolicy {
  WindowKind kind = WindowKind::full;
  std::size_t w = 10;  // number of latest generated tokens kept
  std::optional<BridgeContext> bridge;
  BridgeActivation activation = BridgeActivation::always;

  static WindowPolicy full_context();
  static WindowPolicy basic(std::size_t w);
  static WindowPolicy anchored(std::size_t w, BridgeContext bridge,
                               BridgeActivation activation = BridgeActivation::always);

  void validate() const;
  bool has_soft_bridge() const noexcept;
  std::size_t bridge_length() const noexcept;
  // Fingerprint of the bridge content (0 when there is no bridge).
  std::uint64_t bridge_hash() const noexcept;
};

// Index ranges into the concatenation prompt || generated that make up the
// window for step t, plus whether the bridge sits between head and tail.
struct WindowLayout {
  std::size_t head_begin = 0, head_end = 0;
  bool bridge = false;
  std::size_t tail_begin = 0, tail_end = 0;
};

WindowLayout layout_window(const WindowPolicy& policy, std::size_t prompt_len, std::size_t t);

TokenSeq build_token_window(TokenSpan prompt, TokenSpan generated, const WindowPolicy& policy);

Matrix build_embedding_window(TokenSpan prompt, TokenSpan generated, const WindowPolicy& policy,
                              const LanguageModel& model);

// Indices of generated tokens read by the step-t inference.
std::vector<std::size_t> window_dependency_set(const WindowPolicy& policy, std::size_t t,
                                               std::size_t prompt_len, std::size_t gen_len);

// Stable fingerprint of the step-t window content.
std::uint64_t window_hash(TokenSpan prompt, TokenSpan generated, const WindowPolicy& policy);

// True when steps (a_gen at a_t) and (b_gen at b_t) present identical
// windows to the model. Both share `prompt` and `policy`.
bool same_window(TokenSpan prompt, const WindowPolicy& policy, TokenSpan a_gen, std::size_t a_t,
                 TokenSpan b_gen, std::size_t b_t);

// Computes next-token logits for any step of a generation under a policy.
// The constant prompt (and bridge) prefix is evaluated once and cloned;
// under the full-context policy the cursor is extended incrementally.
class WindowedInference {
 public:
  WindowedInference(const LanguageModel& model, WindowPolicy policy, TokenSeq prompt);

  // Logits for step t = generated.size().
  LogitVector logits(TokenSpan generated);

  const WindowPolicy& policy() const noexcept { return policy_; }
  const TokenSeq& prompt() const noexcept { return prompt_; }
  const LanguageModel& model() const noexcept { return *model_; }

 private:
  std::unique_ptr<Cursor> make_prefix(bool with_bridge) const;

  const LanguageModel* model_;
  WindowPolicy policy_;
  TokenSeq prompt_;
  std::unique_ptr<Cursor> prefix_plain_;
  std::unique_ptr<Cursor> prefix_bridge_;
  std::unique_ptr<Cursor> full_cursor_;
  TokenSeq full_pushed_;
};

void save_soft_bridge(const std::filesystem::path& path, const Matrix& theta);
Matrix load_soft_bridge(const std::filesystem::path& path);

}  // namespace asw
