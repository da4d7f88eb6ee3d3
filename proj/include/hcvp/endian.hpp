#pragma once

#include <bit>
#include <concepts>

namespace hcvp {

/// Converts between native and little-endian byte order (an involution).
template <std::unsigned_integral T>
constexpr T little_endian(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        T out = 0;
        for (unsigned i = 0; i < sizeof(T); ++i) {
            out = static_cast<T>((out << 8) | (v & 0xff));
            v = static_cast<T>(v >> 8);
        }
        return out;
    }
    return v;
}

} // namespace hcvp
