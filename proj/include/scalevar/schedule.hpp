#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace scalevar {

// The ladder of token-map resolutions processed coarse to fine, plus the
// vocabulary size. Scale indices are 1-based throughout the library.
struct ScaleSchedule {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> grids;  // (h_k, w_k)
    std::uint32_t vocab = 0;

    std::uint32_t num_scales() const { return static_cast<std::uint32_t>(grids.size()); }

    std::uint64_t tokens_at(std::uint32_t k) const {
        check_scale(k);
        return static_cast<std::uint64_t>(grids[k - 1].first) * grids[k - 1].second;
    }

    // Tokens of scales 1..k inclusive; k = 0 gives 0.
    std::uint64_t tokens_through(std::uint32_t k) const {
        if (k > num_scales()) throw std::invalid_argument("tokens_through: scale out of range");
        std::uint64_t total = 0;
        for (std::uint32_t i = 1; i <= k; ++i) total += tokens_at(i);
        return total;
    }

    std::uint64_t total_tokens() const { return tokens_through(num_scales()); }

    std::pair<std::uint32_t, std::uint32_t> finest_grid() const {
        validate();
        return grids.back();
    }

    void check_scale(std::uint32_t k) const {
        if (k < 1 || k > num_scales()) {
            throw std::invalid_argument("scale index " + std::to_string(k) +
                                        " out of range [1, " + std::to_string(num_scales()) + "]");
        }
    }

    void validate() const {
        if (grids.size() < 2) throw std::invalid_argument("schedule needs at least 2 scales");
        if (vocab < 2) throw std::invalid_argument("schedule needs vocabulary of at least 2");
        for (std::size_t i = 0; i < grids.size(); ++i) {
            if (grids[i].first == 0 || grids[i].second == 0) {
                throw std::invalid_argument("schedule grid sides must be positive");
            }
            if (i > 0) {
                const std::uint64_t prev =
                    static_cast<std::uint64_t>(grids[i - 1].first) * grids[i - 1].second;
                const std::uint64_t cur =
                    static_cast<std::uint64_t>(grids[i].first) * grids[i].second;
                if (cur <= prev) {
                    throw std::invalid_argument("schedule grids must grow strictly in area");
                }
            }
        }
    }

    bool operator==(const ScaleSchedule& other) const = default;

    // Small 5-scale ladder used by the toy dataset and training runs.
    static ScaleSchedule toy(std::uint32_t vocab = 64) {
        ScaleSchedule s;
        s.grids = {{1, 1}, {2, 2}, {3, 3}, {4, 4}, {6, 6}};
        s.vocab = vocab;
        return s;
    }

    // The 10-scale ladder used by VAR-style 256px next-scale models; this is
    // what the cost model sweeps by default.
    static ScaleSchedule var256(std::uint32_t vocab = 4096) {
        ScaleSchedule s;
        for (std::uint32_t side : {1u, 2u, 3u, 4u, 5u, 6u, 8u, 10u, 13u, 16u}) {
            s.grids.emplace_back(side, side);
        }
        s.vocab = vocab;
        return s;
    }

    static ScaleSchedule preset(const std::string& name, std::uint32_t vocab) {
        if (name == "toy") return toy(vocab);
        if (name == "var256") return var256(vocab);
        throw std::invalid_argument("unknown schedule preset: " + name);
    }
};

}  // namespace scalevar
