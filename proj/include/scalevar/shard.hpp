#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "scalevar/crc32.hpp"
#include "scalevar/errors.hpp"
#include "scalevar/pyramid.hpp"
#include "scalevar/rng.hpp"
#include "scalevar/schedule.hpp"

namespace scalevar {

// Binary sample container. Layout (little-endian):
//   header : magic "SVPY", u32 version=1, u32 K, K x (u32 h, u32 w),
//            u32 V, u32 C, u64 sample_count, u64 base_seed,
//            u32 crc32(header bytes so far)
//   sample : u32 class, u16 tokens per scale (row-major),
//            u32 crc32(sample bytes so far)

struct ShardMeta {
    ScaleSchedule schedule;
    std::uint32_t num_classes = 0;
    std::uint64_t base_seed = 0;

    bool operator==(const ShardMeta& other) const = default;
};

struct Shard {
    ShardMeta meta;
    std::vector<TokenPyramid> samples;
};

namespace detail {

inline constexpr char kShardMagic[4] = {'S', 'V', 'P', 'Y'};
inline constexpr std::uint32_t kShardVersion = 1;

struct ByteWriter {
    std::vector<unsigned char> bytes;

    void u16(std::uint16_t v) {
        bytes.push_back(static_cast<unsigned char>(v & 0xFF));
        bytes.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
    }
    void raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        bytes.insert(bytes.end(), c, c + n);
    }
};

struct ByteReader {
    const unsigned char* p;
    std::size_t len;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > len) throw format_error("shard: truncated data");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos]) |
                          static_cast<std::uint16_t>(p[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
};

}  // namespace detail

inline void write_shard(const std::string& path, const ShardMeta& meta,
                        const std::vector<TokenPyramid>& samples) {
    meta.schedule.validate();
    for (const auto& s : samples) {
        s.validate(meta.schedule);
        if (s.class_label >= meta.num_classes) {
            throw std::invalid_argument("write_shard: class label out of range");
        }
    }

    detail::ByteWriter out;
    out.raw(detail::kShardMagic, 4);
    out.u32(detail::kShardVersion);
    out.u32(meta.schedule.num_scales());
    for (const auto& [h, w] : meta.schedule.grids) {
        out.u32(h);
        out.u32(w);
    }
    out.u32(meta.schedule.vocab);
    out.u32(meta.num_classes);
    out.u64(samples.size());
    out.u64(meta.base_seed);
    out.u32(Crc32::of(out.bytes.data(), out.bytes.size()));

    for (const auto& s : samples) {
        const std::size_t start = out.bytes.size();
        out.u32(s.class_label);
        for (const auto& map : s.maps) {
            for (std::uint16_t tok : map) out.u16(tok);
        }
        out.u32(Crc32::of(out.bytes.data() + start, out.bytes.size() - start));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.bytes.data()),
            static_cast<std::streamsize>(out.bytes.size()));
    if (!f) throw io_error("write failed: " + path);
}

inline Shard read_shard(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for reading: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());

    detail::ByteReader in{bytes.data(), bytes.size()};
    in.need(4);
    if (std::memcmp(bytes.data(), detail::kShardMagic, 4) != 0) {
        throw format_error("shard: bad magic");
    }
    in.pos = 4;
    if (in.u32() != detail::kShardVersion) throw format_error("shard: unsupported version");

    Shard shard;
    const std::uint32_t num_scales = in.u32();
    if (num_scales > 64) throw format_error("shard: implausible scale count");
    for (std::uint32_t k = 0; k < num_scales; ++k) {
        const std::uint32_t h = in.u32();
        const std::uint32_t w = in.u32();
        shard.meta.schedule.grids.emplace_back(h, w);
    }
    shard.meta.schedule.vocab = in.u32();
    shard.meta.num_classes = in.u32();
    const std::uint64_t count = in.u64();
    shard.meta.base_seed = in.u64();
    const std::uint32_t header_crc = Crc32::of(bytes.data(), in.pos);
    if (in.u32() != header_crc) throw format_error("shard: header checksum mismatch");
    try {
        shard.meta.schedule.validate();
    } catch (const std::invalid_argument& e) {
        throw format_error(std::string("shard: invalid schedule: ") + e.what());
    }

    shard.samples.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t start = in.pos;
        TokenPyramid s;
        s.class_label = in.u32();
        s.maps.resize(num_scales);
        for (std::uint32_t k = 1; k <= num_scales; ++k) {
            auto& map = s.maps[k - 1];
            map.resize(shard.meta.schedule.tokens_at(k));
            for (auto& tok : map) tok = in.u16();
        }
        const std::uint32_t crc = Crc32::of(bytes.data() + start, in.pos - start);
        if (in.u32() != crc) {
            throw format_error("shard: sample " + std::to_string(i) + " checksum mismatch");
        }
        if (s.class_label >= shard.meta.num_classes) {
            throw format_error("shard: sample " + std::to_string(i) + " class out of range");
        }
        for (const auto& map : s.maps) {
            for (std::uint16_t tok : map) {
                if (tok >= shard.meta.schedule.vocab) {
                    throw format_error("shard: sample " + std::to_string(i) + " token out of range");
                }
            }
        }
        shard.samples.push_back(std::move(s));
    }
    if (in.pos != bytes.size()) throw format_error("shard: trailing bytes");
    return shard;
}

// Seeded shuffled batching. Each epoch draws its own permutation from
// (seed, epoch); the final partial batch is kept.
class BatchIterator {
public:
    BatchIterator(std::size_t num_samples, std::size_t batch_size, std::uint64_t seed)
        : n_(num_samples), batch_(batch_size), seed_(seed) {
        if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
    }

    std::vector<std::vector<std::uint32_t>> epoch_batches(std::uint64_t epoch) const {
        std::vector<std::uint32_t> perm(n_);
        for (std::size_t i = 0; i < n_; ++i) perm[i] = static_cast<std::uint32_t>(i);
        Rng rng = Rng(seed_).derive(epoch);
        for (std::size_t i = n_; i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
            std::swap(perm[i - 1], perm[j]);
        }
        std::vector<std::vector<std::uint32_t>> batches;
        for (std::size_t at = 0; at < n_; at += batch_) {
            const std::size_t end = std::min(at + batch_, n_);
            batches.emplace_back(perm.begin() + at, perm.begin() + end);
        }
        return batches;
    }

    std::size_t num_samples() const { return n_; }
    std::size_t batch_size() const { return batch_; }

private:
    std::size_t n_;
    std::size_t batch_;
    std::uint64_t seed_;
};

}  // namespace scalevar
