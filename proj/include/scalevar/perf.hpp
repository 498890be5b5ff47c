#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "scalevar/depth.hpp"
#include "scalevar/schedule.hpp"

namespace scalevar {

// Closed-form cost accounting for a depth policy on a scale schedule.
// KV entries are counted in token-layer units: every (token, layer) pair a
// layer caches once. Skipped layers cache nothing in the flexible zone, so
//   entries = d * T_total + (D - d) * T_bridge.
inline std::uint64_t kv_entries(std::uint32_t full_depth, std::uint32_t subnet_depth,
                                std::uint32_t bridge_scales, const ScaleSchedule& schedule) {
    schedule.validate();
    if (subnet_depth == 0 || subnet_depth > full_depth) {
        throw std::invalid_argument("kv_entries: need 1 <= d <= D");
    }
    if (bridge_scales > schedule.num_scales()) {
        throw std::invalid_argument("kv_entries: bridge zone exceeds scale count");
    }
    const std::uint64_t total = schedule.total_tokens();
    const std::uint64_t bridge = schedule.tokens_through(bridge_scales);
    return static_cast<std::uint64_t>(subnet_depth) * total +
           static_cast<std::uint64_t>(full_depth - subnet_depth) * bridge;
}

struct PerfReport {
    std::uint32_t full_depth = 0;
    std::uint32_t subnet_depth = 0;
    std::uint32_t bridge_scales = 0;
    std::vector<std::uint64_t> tokens_per_scale;
    std::uint64_t total_tokens = 0;
    std::uint64_t bridge_tokens = 0;
    std::uint64_t kv_entries = 0;
    double kv_reduction_fraction = 0.0;      // vs. the full-depth cache
    std::vector<std::uint64_t> flops_per_scale;
    std::uint64_t flops_total = 0;
    double flexible_flops_share = 0.0;       // flexible-zone share of full-depth cost
    double layer_flops_reduction = 0.0;      // 1 - d/D
};

// Per-scale FLOPs: layers(k) * [ t_k * 24*width^2  (QKVO + MLP projections)
//                              + 4 * t_k * cum_tokens(k) * width (scores+mix) ].
// The flexible share is token-proportional: with uniform depth the per-token
// projection cost dominates and is constant, so the share reduces to
// flexible tokens over total tokens.
inline PerfReport perf_report(std::uint32_t full_depth, std::uint32_t subnet_depth,
                              std::uint32_t bridge_scales, const ScaleSchedule& schedule,
                              std::uint32_t width) {
    if (width == 0) throw std::invalid_argument("perf_report: width must be positive");
    PerfReport r;
    r.full_depth = full_depth;
    r.subnet_depth = subnet_depth;
    r.bridge_scales = bridge_scales;
    r.total_tokens = schedule.total_tokens();
    r.bridge_tokens = schedule.tokens_through(bridge_scales);
    r.kv_entries = kv_entries(full_depth, subnet_depth, bridge_scales, schedule);
    const std::uint64_t full_cache =
        kv_entries(full_depth, full_depth, bridge_scales, schedule);
    r.kv_reduction_fraction =
        1.0 - static_cast<double>(r.kv_entries) / static_cast<double>(full_cache);

    const std::uint64_t w = width;
    std::uint64_t cum = 0;
    for (std::uint32_t k = 1; k <= schedule.num_scales(); ++k) {
        const std::uint64_t t_k = schedule.tokens_at(k);
        cum += t_k;
        const std::uint64_t layers = (k <= bridge_scales) ? full_depth : subnet_depth;
        const std::uint64_t per_layer = t_k * 12 * w * w * 2 + 4 * t_k * cum * w;
        r.tokens_per_scale.push_back(t_k);
        r.flops_per_scale.push_back(layers * per_layer);
        r.flops_total += layers * per_layer;
    }
    r.flexible_flops_share =
        static_cast<double>(r.total_tokens - r.bridge_tokens) / static_cast<double>(r.total_tokens);
    r.layer_flops_reduction =
        1.0 - static_cast<double>(subnet_depth) / static_cast<double>(full_depth);
    return r;
}

inline std::vector<PerfReport> sweep(std::uint32_t full_depth,
                                     const std::vector<std::uint32_t>& depths,
                                     const std::vector<std::uint32_t>& bridge_counts,
                                     const ScaleSchedule& schedule, std::uint32_t width) {
    std::vector<PerfReport> rows;
    for (const DepthPolicy& p : enumerate_configs(full_depth, depths, bridge_counts)) {
        rows.push_back(perf_report(p.full_depth, p.subnet_depth, p.bridge_scales, schedule, width));
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<PerfReport>& rows) {
    std::string out = "d,N,kv_entries,kv_reduction_pct,flops_total,flexible_flops_share,"
                      "layer_flops_reduction_pct\n";
    char line[256];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%u,%u,%llu,%.1f,%llu,%.4f,%.1f\n",
                      r.subnet_depth, r.bridge_scales,
                      static_cast<unsigned long long>(r.kv_entries),
                      100.0 * r.kv_reduction_fraction,
                      static_cast<unsigned long long>(r.flops_total),
                      r.flexible_flops_share,
                      100.0 * r.layer_flops_reduction);
        out += line;
    }
    return out;
}

}  // namespace scalevar
