#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace agribench {

/// 64-bit FNV-1a, incremental.
class Fnv1a {
   public:
    Fnv1a& add(std::string_view bytes) {
        for (unsigned char c : bytes) {
            h_ ^= c;
            h_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    Fnv1a& add(std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h_ ^= (v >> (8 * b)) & 0xff;
            h_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    Fnv1a& add(double v) { return add(std::bit_cast<std::uint64_t>(v)); }

    std::uint64_t value() const { return h_; }
    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h_));
        return buf;
    }

   private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string fnv1a_hex(std::string_view bytes) { return Fnv1a().add(bytes).hex(); }

}  // namespace agribench
