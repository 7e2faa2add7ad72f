#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "asw/model.hpp"

namespace testutil {

inline asw::ModelConfig tiny_config() {
  asw::ModelConfig c;
  c.layers = 1;
  c.dim = 16;
  c.heads = 2;
  c.ffn = 32;
  c.max_context = 128;
  return c;
}

inline asw::Transformer tiny_model(std::uint64_t seed = 11) {
  return asw::Transformer::initialize(tiny_config(), seed);
}

// Logits 0, 'A' and <eos> for context [<bos>] under the default architecture
// initialized with seed 1.
inline constexpr std::array<double, 3> kGoldenBos{-0.26273656743251866, -1.5651731728825165,
                                                  -1.0420087543882597};

inline std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("asw_test_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
