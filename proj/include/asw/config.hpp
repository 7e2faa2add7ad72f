#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "asw/codec.hpp"
#include "asw/model.hpp"
#include "asw/sampling.hpp"
#include "asw/window.hpp"

namespace asw {

// Shared Alice/Bob session settings. Relative paths are resolved against the
// directory of the config file.
struct SessionConfig {
  std::filesystem::path model_path;
  WindowKind kind = WindowKind::full;
  std::size_t w = 10;
  std::optional<std::string> hard_bridge;
  std::optional<std::filesystem::path> soft_bridge_path;
  BridgeActivation activation = BridgeActivation::always;
  SamplerConfig sampler{};
  unsigned precision = kDefaultPrecision;
  std::uint64_t prng_seed = 0;
  std::size_t max_len = 512;

  // Throws ConfigError on unknown keys, wrong types or invalid values.
  static SessionConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static SessionConfig load(const std::filesystem::path& path);

  // Every field with defaults filled in; paths as given in the file.
  nlohmann::json to_json() const;
  // FNV-1a of the canonical (sorted-key, compact) JSON text.
  std::uint64_t hash() const;

  WindowPolicy make_policy() const;
  std::unique_ptr<Transformer> load_model() const;

 private:
  void make_policy_shape_check() const;

  std::filesystem::path base_dir_;
  std::string model_path_text_;
  std::string soft_path_text_;
};

std::string hex64(std::uint64_t v);

}  // namespace asw
