#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace asw {

enum class Errc {
  malformed_sequence,
  empty_context,
  context_overflow,
  unknown_token,
  shape_error,
  use_embedding_path,
  precision_exhausted,
  extraction_desync,
  capacity_exhausted,
  framing_error,
  domain_error,
  numerical_error,
  training_diverged,
  too_large,
  config_error,
  io_error,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// The extractor saw a token outside the support of its reconstructed
// distribution at `step`.
class DesyncError : public Error {
 public:
  DesyncError(std::size_t step, const std::string& what)
      : Error(Errc::extraction_desync, what + " (step " + std::to_string(step) + ")"),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// <eos> or max_len was reached before the framed payload was committed.
class CapacityError : public Error {
 public:
  CapacityError(std::uint64_t bits_embedded, std::uint64_t bits_required)
      : Error(Errc::capacity_exhausted,
              "committed " + std::to_string(bits_embedded) + " of " +
                  std::to_string(bits_required) + " payload bits"),
        bits_embedded_(bits_embedded),
        bits_required_(bits_required) {}

  std::uint64_t bits_embedded() const noexcept { return bits_embedded_; }
  std::uint64_t bits_required() const noexcept { return bits_required_; }

 private:
  std::uint64_t bits_embedded_;
  std::uint64_t bits_required_;
};

}  // namespace asw
