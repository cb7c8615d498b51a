#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

#include "cdsim/error.hpp"

namespace cdsim::detail {

inline void write_le64(std::ostream& out, std::uint64_t v)
{
    char bytes[8];
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    }
    out.write(bytes, 8);
}

inline std::uint64_t read_le64(std::istream& in)
{
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) {
        throw InvalidArgument("binary block: truncated input");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    }
    return v;
}

inline void write_f64(std::ostream& out, double v) { write_le64(out, std::bit_cast<std::uint64_t>(v)); }

inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_le64(in)); }

} // namespace cdsim::detail
