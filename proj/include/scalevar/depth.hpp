#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace scalevar {

// Equidistant layer subset of a depth-D stack: floor(i*(D-1)/(d-1)) for
// i = 0..d-1. Always contains layer 0 and layer D-1; strictly increasing,
// so exactly d indices for any d <= D. d = 1 returns {0} as an extension.
inline std::vector<std::uint32_t> select_layers(std::uint32_t full_depth, std::uint32_t subnet_depth) {
    if (subnet_depth == 0 || subnet_depth > full_depth) {
        throw std::invalid_argument("select_layers: need 1 <= d <= D, got d=" +
                                    std::to_string(subnet_depth) + " D=" +
                                    std::to_string(full_depth));
    }
    if (subnet_depth == 1) return {0};
    std::vector<std::uint32_t> out;
    out.reserve(subnet_depth);
    for (std::uint32_t i = 0; i < subnet_depth; ++i) {
        out.push_back(static_cast<std::uint32_t>(
            (static_cast<std::uint64_t>(i) * (full_depth - 1)) / (subnet_depth - 1)));
    }
    return out;
}

// Runtime depth configuration: a subnet of `d` layers plus the number of
// leading scales (the bridge zone) that always run at full depth.
struct DepthPolicy {
    std::uint32_t full_depth = 0;    // D
    std::uint32_t subnet_depth = 0;  // d
    std::uint32_t bridge_scales = 0; // N
    std::vector<std::uint32_t> selected;

    static DepthPolicy make(std::uint32_t full_depth, std::uint32_t subnet_depth,
                            std::uint32_t bridge_scales) {
        DepthPolicy p;
        p.full_depth = full_depth;
        p.subnet_depth = subnet_depth;
        p.bridge_scales = bridge_scales;
        p.selected = select_layers(full_depth, subnet_depth);
        return p;
    }

    bool operator==(const DepthPolicy& other) const = default;
};

inline std::vector<std::uint32_t> full_layer_set(std::uint32_t full_depth) {
    std::vector<std::uint32_t> out(full_depth);
    for (std::uint32_t i = 0; i < full_depth; ++i) out[i] = i;
    return out;
}

// Active layers at scale k (1-based): the full stack inside the bridge zone
// (k <= N), the selected subnet beyond it.
inline std::vector<std::uint32_t> active_layers(std::uint32_t k, const DepthPolicy& policy,
                                                std::uint32_t num_scales) {
    if (k < 1 || k > num_scales) {
        throw std::invalid_argument("active_layers: scale " + std::to_string(k) +
                                    " out of range [1, " + std::to_string(num_scales) + "]");
    }
    if (k <= policy.bridge_scales) return full_layer_set(policy.full_depth);
    return policy.selected;
}

// Cartesian product of candidate (d, N) settings, d ascending then N ascending.
inline std::vector<DepthPolicy> enumerate_configs(std::uint32_t full_depth,
                                                  std::vector<std::uint32_t> depths,
                                                  std::vector<std::uint32_t> bridge_counts) {
    std::sort(depths.begin(), depths.end());
    depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
    std::sort(bridge_counts.begin(), bridge_counts.end());
    bridge_counts.erase(std::unique(bridge_counts.begin(), bridge_counts.end()),
                        bridge_counts.end());
    std::vector<DepthPolicy> out;
    out.reserve(depths.size() * bridge_counts.size());
    for (std::uint32_t d : depths) {
        for (std::uint32_t n : bridge_counts) {
            out.push_back(DepthPolicy::make(full_depth, d, n));
        }
    }
    return out;
}

// Whether the smaller selection is contained in the larger one, pair by
// pair. Equidistant selections are NOT nested in general, so this is audited
// rather than assumed anywhere; `witness` is the smallest missing index.
struct NestingVerdict {
    std::uint32_t d_small = 0;
    std::uint32_t d_large = 0;
    bool nested = false;
    std::optional<std::uint32_t> witness;
};

inline std::vector<NestingVerdict> nesting_report(std::uint32_t full_depth,
                                                  std::vector<std::uint32_t> depths) {
    std::sort(depths.begin(), depths.end());
    depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
    std::vector<NestingVerdict> out;
    for (std::size_t a = 0; a < depths.size(); ++a) {
        for (std::size_t b = a + 1; b < depths.size(); ++b) {
            const auto small = select_layers(full_depth, depths[a]);
            const auto large = select_layers(full_depth, depths[b]);
            NestingVerdict v;
            v.d_small = depths[a];
            v.d_large = depths[b];
            v.nested = true;
            for (std::uint32_t idx : small) {
                if (!std::binary_search(large.begin(), large.end(), idx)) {
                    v.nested = false;
                    v.witness = idx;
                    break;
                }
            }
            out.push_back(v);
        }
    }
    return out;
}

}  // namespace scalevar
