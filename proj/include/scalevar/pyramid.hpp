#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "scalevar/rng.hpp"
#include "scalevar/schedule.hpp"

namespace scalevar {

// One sample: a class label plus one token map per scale, row-major.
struct TokenPyramid {
    std::uint32_t class_label = 0;
    std::vector<std::vector<std::uint16_t>> maps;

    bool operator==(const TokenPyramid& other) const = default;

    void validate(const ScaleSchedule& schedule) const {
        if (maps.size() != schedule.num_scales()) {
            throw std::invalid_argument("pyramid scale count does not match schedule");
        }
        for (std::uint32_t k = 1; k <= schedule.num_scales(); ++k) {
            if (maps[k - 1].size() != schedule.tokens_at(k)) {
                throw std::invalid_argument("pyramid map size mismatch at scale " +
                                            std::to_string(k));
            }
            for (std::uint16_t tok : maps[k - 1]) {
                if (tok >= schedule.vocab) {
                    throw std::invalid_argument("pyramid token out of vocabulary range");
                }
            }
        }
    }
};

namespace field {

inline constexpr std::uint64_t kClassBasisTag = 0x636c6173ull;   // class-basis substream
inline constexpr std::uint64_t kDetailTag = 0x64657461ull;       // per-seed detail substream
inline constexpr int kLowFreqModes = 3;                          // cosine modes per axis

}  // namespace field

// Synthetic scalar field in [0,1]. The low-frequency content is a fixed
// random cosine basis per class (independent of `seed`), so coarse average
// pools carry class identity; the per-pixel detail comes from `seed` alone.
inline std::vector<double> generate_field(std::uint64_t seed, std::uint32_t class_label,
                                          std::uint32_t h, std::uint32_t w) {
    if (h == 0 || w == 0) throw std::invalid_argument("generate_field: empty grid");
    constexpr int kModes = field::kLowFreqModes;
    double coeff[kModes][kModes];
    Rng class_rng = Rng(field::kClassBasisTag).derive(class_label);
    double coeff_bound = 0.0;
    for (int p = 0; p < kModes; ++p) {
        for (int q = 0; q < kModes; ++q) {
            const double weight = 1.0 / (1.0 + p + q);
            coeff[p][q] = (2.0 * class_rng.next_double() - 1.0) * weight;
            coeff_bound += weight;
        }
    }

    Rng detail_rng = Rng(seed).derive(field::kDetailTag);
    std::vector<double> out(static_cast<std::size_t>(h) * w);
    const double pi = 3.14159265358979323846;
    for (std::uint32_t r = 0; r < h; ++r) {
        for (std::uint32_t c = 0; c < w; ++c) {
            double low = 0.0;
            for (int p = 0; p < kModes; ++p) {
                for (int q = 0; q < kModes; ++q) {
                    low += coeff[p][q] * std::cos(pi * p * (r + 0.5) / h) *
                           std::cos(pi * q * (c + 0.5) / w);
                }
            }
            const double noise = 2.0 * detail_rng.next_double() - 1.0;
            double v = 0.5 + 0.33 * (low / coeff_bound) + 0.14 * noise;
            if (v < 0.0) v = 0.0;
            if (v > 1.0) v = 1.0;
            out[static_cast<std::size_t>(r) * w + c] = v;
        }
    }
    return out;
}

// Average pool from (src_h, src_w) down to (dst_h, dst_w). Source pixel
// (r, c) contributes to destination cell (floor(r*dst_h/src_h),
// floor(c*dst_w/src_w)); cells average whatever lands in them, so the map is
// total for any grid pair.
inline std::vector<double> average_pool(const std::vector<double>& src, std::uint32_t src_h,
                                        std::uint32_t src_w, std::uint32_t dst_h,
                                        std::uint32_t dst_w) {
    if (src.size() != static_cast<std::size_t>(src_h) * src_w) {
        throw std::invalid_argument("average_pool: source size mismatch");
    }
    if (dst_h > src_h || dst_w > src_w) {
        throw std::invalid_argument("average_pool: destination must not exceed source");
    }
    std::vector<double> sum(static_cast<std::size_t>(dst_h) * dst_w, 0.0);
    std::vector<std::uint32_t> count(sum.size(), 0);
    for (std::uint32_t r = 0; r < src_h; ++r) {
        const std::uint32_t rr = static_cast<std::uint32_t>(
            (static_cast<std::uint64_t>(r) * dst_h) / src_h);
        for (std::uint32_t c = 0; c < src_w; ++c) {
            const std::uint32_t cc = static_cast<std::uint32_t>(
                (static_cast<std::uint64_t>(c) * dst_w) / src_w);
            sum[static_cast<std::size_t>(rr) * dst_w + cc] += src[static_cast<std::size_t>(r) * src_w + c];
            count[static_cast<std::size_t>(rr) * dst_w + cc] += 1;
        }
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= count[i];
    return sum;
}

// Equal-width half-open bins on [0,1]; the top edge clamps into bin V-1.
inline std::uint16_t quantize_unit(double x, std::uint32_t vocab) {
    const auto bin = static_cast<std::int64_t>(std::floor(x * vocab));
    if (bin < 0) return 0;
    if (bin >= static_cast<std::int64_t>(vocab)) return static_cast<std::uint16_t>(vocab - 1);
    return static_cast<std::uint16_t>(bin);
}

// Pool-then-quantize at every scale of the schedule.
inline TokenPyramid build_pyramid(const std::vector<double>& fld, std::uint32_t class_label,
                                  const ScaleSchedule& schedule) {
    schedule.validate();
    const auto [fh, fw] = schedule.finest_grid();
    if (fld.size() != static_cast<std::size_t>(fh) * fw) {
        throw std::invalid_argument("build_pyramid: field must be shaped as the finest grid");
    }
    TokenPyramid py;
    py.class_label = class_label;
    py.maps.resize(schedule.num_scales());
    for (std::uint32_t k = 1; k <= schedule.num_scales(); ++k) {
        const auto [h, w] = schedule.grids[k - 1];
        const std::vector<double> pooled = average_pool(fld, fh, fw, h, w);
        auto& map = py.maps[k - 1];
        map.resize(pooled.size());
        for (std::size_t i = 0; i < pooled.size(); ++i) {
            map[i] = quantize_unit(pooled[i], schedule.vocab);
        }
    }
    return py;
}

// Deterministic sample stream: sample `index` gets class index % num_classes
// and its own field seed substream of `base_seed`.
inline TokenPyramid make_sample(const ScaleSchedule& schedule, std::uint32_t num_classes,
                                std::uint64_t base_seed, std::uint64_t index) {
    if (num_classes == 0) throw std::invalid_argument("make_sample: need at least one class");
    const auto label = static_cast<std::uint32_t>(index % num_classes);
    const std::uint64_t field_seed = Rng::mix(base_seed, index);
    const auto [fh, fw] = schedule.finest_grid();
    return build_pyramid(generate_field(field_seed, label, fh, fw), label, schedule);
}

}  // namespace scalevar
