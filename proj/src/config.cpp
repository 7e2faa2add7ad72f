#include "asw/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "asw/error.hpp"

namespace asw {

namespace {

using nlohmann::json;

void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) {
    throw Error(Errc::config_error, where + " must be an object");
  }
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.contains(key)) {
      throw Error(Errc::config_error, "unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::config_error, where + "." + key + " is missing or has the wrong type");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

std::uint64_t get_u64(const json& j, const char* key, std::uint64_t fallback, const std::string& where) {
  if (!j.contains(key)) {
    return fallback;
  }
  const json& v = j.at(key);
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw Error(Errc::config_error, where + "." + key + " must be a non-negative integer");
  }
  return j.at(key).get<std::uint64_t>();
}

const char* kind_name(WindowKind kind) {
  switch (kind) {
    case WindowKind::full: return "full";
    case WindowKind::basic: return "basic";
    case WindowKind::asw: return "asw";
  }
  return "?";
}

}  // namespace

SessionConfig SessionConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  only_keys(j, {"model_path", "policy", "sampler", "Q", "prng_seed", "max_len"}, "config");
  SessionConfig c;
  c.base_dir_ = base_dir;
  c.model_path_text_ = get<std::string>(j, "model_path", "config");
  c.model_path = base_dir / c.model_path_text_;

  const json& policy = j.contains("policy") ? j.at("policy") : json::object();
  only_keys(policy, {"kind", "w", "bridge", "activation"}, "policy");
  const auto kind = get_or<std::string>(policy, "kind", "full", "policy");
  if (kind == "full") {
    c.kind = WindowKind::full;
  } else if (kind == "basic") {
    c.kind = WindowKind::basic;
  } else if (kind == "asw") {
    c.kind = WindowKind::asw;
  } else {
    throw Error(Errc::config_error, "policy.kind must be full, basic or asw");
  }
  c.w = get_u64(policy, "w", 10, "policy");
  if (policy.contains("bridge")) {
    const json& bridge = policy.at("bridge");
    only_keys(bridge, {"hard", "soft_path"}, "policy.bridge");
    if (bridge.contains("hard") == bridge.contains("soft_path")) {
      throw Error(Errc::config_error, "policy.bridge needs exactly one of 'hard' or 'soft_path'");
    }
    if (bridge.contains("hard")) {
      c.hard_bridge = get<std::string>(bridge, "hard", "policy.bridge");
    } else {
      c.soft_path_text_ = get<std::string>(bridge, "soft_path", "policy.bridge");
      c.soft_bridge_path = base_dir / c.soft_path_text_;
    }
  }
  const auto activation = get_or<std::string>(policy, "activation", "always", "policy");
  if (activation == "always") {
    c.activation = BridgeActivation::always;
  } else if (activation == "after_overflow") {
    c.activation = BridgeActivation::after_overflow;
  } else {
    throw Error(Errc::config_error, "policy.activation must be always or after_overflow");
  }

  const json& sampler = j.contains("sampler") ? j.at("sampler") : json::object();
  only_keys(sampler, {"temperature", "top_p", "seed"}, "sampler");
  c.sampler.temperature = get_or<double>(sampler, "temperature", 1.0, "sampler");
  c.sampler.top_p = get_or<double>(sampler, "top_p", 1.0, "sampler");
  c.sampler.seed = get_u64(sampler, "seed", 0, "sampler");

  c.precision = static_cast<unsigned>(get_u64(j, "Q", kDefaultPrecision, "config"));
  c.prng_seed = get_u64(j, "prng_seed", 0, "config");
  c.max_len = get_u64(j, "max_len", 512, "config");

  try {
    c.sampler.validate();
    c.make_policy_shape_check();
  } catch (const Error& e) {
    throw Error(Errc::config_error, e.what());
  }
  if (c.precision < 9 || c.precision > 40) {
    throw Error(Errc::config_error, "Q must lie in [9, 40]");
  }
  if (c.max_len == 0) {
    throw Error(Errc::config_error, "max_len must be positive");
  }
  return c;
}

SessionConfig SessionConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::config_error, "cannot open config " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::config_error, path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json SessionConfig::to_json() const {
  json policy{{"kind", kind_name(kind)},
              {"w", w},
              {"activation", activation == BridgeActivation::always ? "always" : "after_overflow"}};
  if (hard_bridge) {
    policy["bridge"] = {{"hard", *hard_bridge}};
  } else if (soft_bridge_path) {
    policy["bridge"] = {{"soft_path", soft_path_text_}};
  }
  return json{{"model_path", model_path_text_},
              {"policy", policy},
              {"sampler", {{"temperature", sampler.temperature}, {"top_p", sampler.top_p}, {"seed", sampler.seed}}},
              {"Q", precision},
              {"prng_seed", prng_seed},
              {"max_len", max_len}};
}

std::uint64_t SessionConfig::hash() const {
  const std::string text = to_json().dump();
  return fnv1a_of(std::span<const char>(text.data(), text.size()));
}

void SessionConfig::make_policy_shape_check() const {
  if (kind == WindowKind::asw && !hard_bridge && !soft_bridge_path) {
    throw Error(Errc::config_error, "the asw policy needs a bridge");
  }
  if (kind != WindowKind::asw && (hard_bridge || soft_bridge_path)) {
    throw Error(Errc::config_error, "only the asw policy takes a bridge");
  }
  if (kind != WindowKind::full && w < 1) {
    throw Error(Errc::config_error, "policy.w must be at least 1");
  }
  if (hard_bridge) {
    WindowPolicy::anchored(w, HardBridge{Vocabulary{}.tokenize(*hard_bridge)}, activation).validate();
  }
}

WindowPolicy SessionConfig::make_policy() const {
  switch (kind) {
    case WindowKind::full:
      return WindowPolicy::full_context();
    case WindowKind::basic:
      return WindowPolicy::basic(w);
    case WindowKind::asw:
      if (hard_bridge) {
        return WindowPolicy::anchored(w, HardBridge{Vocabulary{}.tokenize(*hard_bridge)}, activation);
      }
      return WindowPolicy::anchored(w, SoftBridge{load_soft_bridge(*soft_bridge_path)}, activation);
  }
  throw Error(Errc::config_error, "unknown policy kind");
}

std::unique_ptr<Transformer> SessionConfig::load_model() const {
  return std::make_unique<Transformer>(Transformer::load(model_path));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace asw
