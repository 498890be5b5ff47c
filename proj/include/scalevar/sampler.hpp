#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "scalevar/errors.hpp"
#include "scalevar/model.hpp"
#include "scalevar/rng.hpp"

namespace scalevar {

struct SampleConfig {
    std::uint32_t top_k = 900;  // clamped to the vocabulary size in use
    double top_p = 0.96;
    double temperature = 1.0;
    std::uint64_t seed = 0;

    void validate(std::uint32_t vocab) const {
        if (top_k < 1) throw std::invalid_argument("sampler: top_k must be at least 1");
        if (!(top_p > 0.0) || top_p > 1.0) {
            throw std::invalid_argument("sampler: top_p must lie in (0, 1]");
        }
        if (!(temperature > 0.0)) {
            throw std::invalid_argument("sampler: temperature must be positive");
        }
        (void)vocab;
    }
};

// Temperature, then top-k, then the smallest prefix of the surviving
// probabilities (descending) whose mass reaches top_p, keeping at least one.
// Returns a full-vocabulary probability vector, zero outside the kept set.
inline std::vector<double> filter_logits(const std::vector<double>& logits,
                                         const SampleConfig& cfg) {
    const std::size_t vocab = logits.size();
    if (vocab == 0) throw std::invalid_argument("filter_logits: empty logits");
    cfg.validate(static_cast<std::uint32_t>(vocab));
    for (double v : logits) {
        if (!std::isfinite(v)) throw numeric_error("filter_logits: non-finite logit");
    }

    std::vector<std::uint32_t> order(vocab);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;  // deterministic tie-break
    });
    const std::size_t keep_k = std::min<std::size_t>(cfg.top_k, vocab);

    // Softmax over the kept set, in descending order.
    const double mx = logits[order[0]] / cfg.temperature;
    std::vector<double> kept(keep_k);
    double sum = 0.0;
    for (std::size_t i = 0; i < keep_k; ++i) {
        kept[i] = std::exp(logits[order[i]] / cfg.temperature - mx);
        sum += kept[i];
    }
    for (auto& p : kept) p /= sum;

    std::size_t keep_p = 1;
    double mass = kept[0];
    while (keep_p < keep_k && mass < cfg.top_p) {
        mass += kept[keep_p];
        ++keep_p;
    }

    std::vector<double> out(vocab, 0.0);
    for (std::size_t i = 0; i < keep_p; ++i) out[order[i]] = kept[i] / mass;
    return out;
}

// Inverse-CDF draw over an (already normalized) probability vector, walking
// indices in ascending order.
inline std::uint16_t draw_categorical(const std::vector<double>& probs, double u) {
    double cum = 0.0;
    std::size_t last_nonzero = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last_nonzero = i;
        cum += probs[i];
        if (u < cum) return static_cast<std::uint16_t>(i);
    }
    return static_cast<std::uint16_t>(last_nonzero);  // u landed in rounding slack
}

// One uniform per (seed, scale, position): cached and recomputed decoding
// paths consume identical randomness, making them exchangeable.
inline double position_uniform(std::uint64_t seed, std::uint32_t scale, std::uint64_t position) {
    Rng stream = Rng(seed).derive(scale, position);
    return stream.next_double();
}

// Decode one scale: embed, run the active layers against the cache, filter
// each position's logits and draw independently.
inline std::vector<std::uint16_t> sample_scale(const ModelParams& params, std::uint32_t k,
                                               const std::vector<std::uint16_t>* prev_map,
                                               std::uint32_t class_label,
                                               const DepthPolicy& policy, KVCache& cache,
                                               const SampleConfig& cfg) {
    const ScaleSchedule& sched = params.config.schedule;
    sched.check_scale(k);
    if (cache.scales_done() != k - 1) {
        throw state_error("sample_scale: cache holds " + std::to_string(cache.scales_done()) +
                          " scales, expected " + std::to_string(k - 1));
    }
    NoGradGuard no_grad;
    if (k == policy.bridge_scales + 1) cache.detach_all();
    Tensor emb = embed_step(params, k, prev_map, class_label);
    Tensor logits = forward_step(params, emb, active_layers(k, policy, sched.num_scales()), cache);

    const std::size_t t = logits.rows();
    const std::size_t vocab = logits.cols();
    std::vector<std::uint16_t> out(t);
    std::vector<double> row(vocab);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < vocab; ++j) row[j] = logits.at(i, j);
        const std::vector<double> probs = filter_logits(row, cfg);
        out[i] = draw_categorical(probs, position_uniform(cfg.seed, k, i));
    }
    return out;
}

// Full decoding loop over all scales.
inline TokenPyramid generate(const ModelParams& params, std::uint32_t class_label,
                             const DepthPolicy& policy, const SampleConfig& cfg,
                             KVCache* cache_out = nullptr) {
    const ScaleSchedule& sched = params.config.schedule;
    if (class_label >= params.config.num_classes) {
        throw std::invalid_argument("generate: class label out of range");
    }
    if (policy.full_depth != params.config.depth) {
        throw std::invalid_argument("generate: policy depth does not match model");
    }
    cfg.validate(sched.vocab);

    KVCache cache(params.config.depth);
    TokenPyramid py;
    py.class_label = class_label;
    py.maps.resize(sched.num_scales());
    for (std::uint32_t k = 1; k <= sched.num_scales(); ++k) {
        const std::vector<std::uint16_t>* prev = (k == 1) ? nullptr : &py.maps[k - 2];
        py.maps[k - 1] = sample_scale(params, k, prev, class_label, policy, cache, cfg);
    }
    if (cache_out != nullptr) *cache_out = std::move(cache);
    return py;
}

// Binary portable graymap of one token map, tokens mapped linearly onto
// 0..255 for quick visual inspection.
inline void write_pgm(const std::string& path, const std::vector<std::uint16_t>& map,
                      std::uint32_t h, std::uint32_t w, std::uint32_t vocab) {
    if (map.size() != static_cast<std::size_t>(h) * w) {
        throw std::invalid_argument("write_pgm: map size mismatch");
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    for (std::uint16_t tok : map) {
        const unsigned char byte = (vocab <= 1)
            ? 0
            : static_cast<unsigned char>((static_cast<std::uint32_t>(tok) * 255) / (vocab - 1));
        f.put(static_cast<char>(byte));
    }
    if (!f) throw io_error("write failed: " + path);
}

}  // namespace scalevar
