#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace scalevar {

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320), as used by zlib.
class Crc32 {
public:
    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        std::uint32_t c = state_;
        for (std::size_t i = 0; i < len; ++i) {
            c = table()[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
        }
        state_ = c;
    }

    std::uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }

    static std::uint32_t of(const void* data, std::size_t len) {
        Crc32 crc;
        crc.update(data, len);
        return crc.value();
    }

private:
    static const std::array<std::uint32_t, 256>& table() {
        static const std::array<std::uint32_t, 256> t = [] {
            std::array<std::uint32_t, 256> tab{};
            for (std::uint32_t n = 0; n < 256; ++n) {
                std::uint32_t c = n;
                for (int k = 0; k < 8; ++k) {
                    c = (c & 1u) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
                }
                tab[n] = c;
            }
            return tab;
        }();
        return t;
    }

    std::uint32_t state_ = 0xFFFFFFFFu;
};

}  // namespace scalevar
