#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "scalevar/crc32.hpp"
#include "scalevar/errors.hpp"
#include "scalevar/model.hpp"
#include "scalevar/shard.hpp"

namespace scalevar {

// Checkpoint layout (little-endian):
//   magic "SVCK", u32 version=1,
//   u32 depth, u32 width, u32 heads, u32 num_classes,
//   u32 K, K x (u32 h, u32 w), u32 vocab,
//   f64 parameter blobs in canonical order,
//   u32 crc32 of everything before it.

namespace detail {

inline constexpr char kCkptMagic[4] = {'S', 'V', 'C', 'K'};
inline constexpr std::uint32_t kCkptVersion = 1;

inline void put_f64(ByteWriter& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    out.u64(bits);
}

inline double get_f64(ByteReader& in) {
    const std::uint64_t bits = in.u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, ModelParams& params) {
    detail::ByteWriter out;
    out.raw(detail::kCkptMagic, 4);
    out.u32(detail::kCkptVersion);
    const ModelConfig& cfg = params.config;
    out.u32(cfg.depth);
    out.u32(cfg.width);
    out.u32(cfg.heads);
    out.u32(cfg.num_classes);
    out.u32(cfg.schedule.num_scales());
    for (const auto& [h, w] : cfg.schedule.grids) {
        out.u32(h);
        out.u32(w);
    }
    out.u32(cfg.schedule.vocab);
    params.for_each_param([&](const std::string&, Tensor& t) {
        for (double v : t.values()) detail::put_f64(out, v);
    });
    out.u32(Crc32::of(out.bytes.data(), out.bytes.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.bytes.data()),
            static_cast<std::streamsize>(out.bytes.size()));
    if (!f) throw io_error("write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for reading: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());

    detail::ByteReader in{bytes.data(), bytes.size()};
    in.need(4);
    if (std::memcmp(bytes.data(), detail::kCkptMagic, 4) != 0) {
        throw format_error("checkpoint: bad magic");
    }
    in.pos = 4;
    if (in.u32() != detail::kCkptVersion) throw format_error("checkpoint: unsupported version");

    ModelConfig cfg;
    cfg.depth = in.u32();
    cfg.width = in.u32();
    cfg.heads = in.u32();
    cfg.num_classes = in.u32();
    const std::uint32_t num_scales = in.u32();
    if (num_scales > 64) throw format_error("checkpoint: implausible scale count");
    for (std::uint32_t k = 0; k < num_scales; ++k) {
        const std::uint32_t h = in.u32();
        const std::uint32_t w = in.u32();
        cfg.schedule.grids.emplace_back(h, w);
    }
    cfg.schedule.vocab = in.u32();
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw format_error(std::string("checkpoint: invalid config: ") + e.what());
    }

    // Shapes come from the config; blobs fill a freshly shaped model.
    ModelParams params = init_params(cfg, 0);
    params.for_each_param([&](const std::string&, Tensor& t) {
        for (double& v : t.values_mut()) v = detail::get_f64(in);
    });
    const std::uint32_t crc = Crc32::of(bytes.data(), in.pos);
    if (in.u32() != crc) throw format_error("checkpoint: checksum mismatch");
    if (in.pos != bytes.size()) throw format_error("checkpoint: trailing bytes");
    return params;
}

}  // namespace scalevar
