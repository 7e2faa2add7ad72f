#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

// Little-endian primitives for the checkpoint formats.
namespace asw {

void write_u32(std::ostream& out, std::uint32_t value);
std::uint32_t read_u32(std::istream& in);
void write_f64_block(std::ostream& out, std::span<const double> values);
std::vector<double> read_f64_block(std::istream& in, std::size_t count);

}  // namespace asw
