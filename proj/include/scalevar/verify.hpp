#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scalevar/model.hpp"
#include "scalevar/perf.hpp"
#include "scalevar/sampler.hpp"
#include "scalevar/trainer.hpp"

namespace scalevar {

struct VerifyCheck {
    std::string name;
    double measured = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

struct VerifyOptions {
    bool inject_mask_fault = false;  // corrupts the reference-route mask
    std::size_t fd_coords = 48;      // finite-difference coordinates to probe
};

namespace verify_detail {

inline ModelConfig small_config(std::uint32_t depth, std::uint32_t width, std::uint32_t heads) {
    ModelConfig cfg;
    cfg.depth = depth;
    cfg.width = width;
    cfg.heads = heads;
    cfg.num_classes = 8;
    cfg.schedule = ScaleSchedule::toy(64);
    return cfg;
}

// Max relative error of reverse-mode gradients against central differences
// on the full pyramid loss, probed on `coords` evenly strided coordinates.
// Uses the full-depth, no-bridge configuration: with no zone boundary the
// cached context is never detached, so the recorded gradient is the exact
// derivative of the evaluated loss and finite differences can see all of it.
inline double model_gradient_fd_error(std::uint32_t depth, std::uint32_t width,
                                      std::uint32_t heads, std::size_t coords) {
    ModelConfig cfg = small_config(depth, width, heads);
    ModelParams params = init_params(cfg, 314);
    DepthPolicy policy = DepthPolicy::make(depth, depth, 0);
    std::vector<TokenPyramid> samples;
    samples.push_back(make_sample(cfg.schedule, cfg.num_classes, 900, 0));
    samples.push_back(make_sample(cfg.schedule, cfg.num_classes, 900, 1));
    std::vector<const TokenPyramid*> batch{&samples[0], &samples[1]};

    auto loss_value = [&]() {
        NoGradGuard no_grad;
        return batch_loss(params, batch, policy, Branch::full, ZoneFilter::all).scalar();
    };

    zero_all_grads(params);
    backward(batch_loss(params, batch, policy, Branch::full, ZoneFilter::all));

    std::vector<std::pair<Tensor*, std::size_t>> sites;
    params.for_each_param([&](const std::string&, Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) sites.emplace_back(&t, i);
    });
    const std::size_t stride = std::max<std::size_t>(1, sites.size() / coords);

    const double h = 1e-5;
    double worst = 0.0;
    std::size_t probed = 0;
    for (std::size_t s = 0; s < sites.size() && probed < coords; s += stride, ++probed) {
        auto [t, i] = sites[s];
        const double analytic = t->has_grad() ? t->grad()[i] : 0.0;
        const double orig = t->values()[i];
        t->values_mut()[i] = orig + h;
        const double fp = loss_value();
        t->values_mut()[i] = orig - h;
        const double fm = loss_value();
        t->values_mut()[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
        worst = std::max(worst, rel);
    }
    zero_all_grads(params);
    return worst;
}

inline double cache_equivalence_error(bool inject_fault = false) {
    ModelConfig cfg = small_config(6, 16, 2);
    ModelParams params = init_params(cfg, 271);
    NoGradGuard no_grad;
    double worst = 0.0;
    for (auto [d, n] : {std::pair<std::uint32_t, std::uint32_t>{3, 2}, {2, 4}, {6, 0}}) {
        DepthPolicy policy = DepthPolicy::make(6, d, n);
        TokenPyramid sample = make_sample(cfg.schedule, cfg.num_classes, 70 + d, d);
        std::vector<Tensor> stepwise = forward_pyramid(params, sample, policy);
        Tensor full = forward_full_sequence(params, sample, policy, inject_fault);
        std::size_t row = 0;
        for (const Tensor& lk : stepwise) {
            for (std::size_t r = 0; r < lk.rows(); ++r, ++row) {
                for (std::size_t c = 0; c < lk.cols(); ++c) {
                    worst = std::max(worst, std::abs(lk.at(r, c) - full.at(row, c)));
                }
            }
        }
    }
    return worst;
}

inline double subnet_extraction_error() {
    ModelConfig cfg = small_config(6, 16, 2);
    ModelParams params = init_params(cfg, 161);
    NoGradGuard no_grad;
    double worst = 0.0;
    for (std::uint32_t d : {2u, 3u, 4u, 6u}) {
        const auto selected = select_layers(6, d);
        ModelParams sub = extract_subnet(params, selected);
        TokenPyramid sample = make_sample(cfg.schedule, cfg.num_classes, 500 + d, d);
        std::vector<Tensor> a = forward_pyramid(params, sample, DepthPolicy::make(6, d, 0));
        std::vector<Tensor> b = forward_pyramid(sub, sample, DepthPolicy::make(d, d, 0));
        for (std::size_t k = 0; k < a.size(); ++k) {
            for (std::size_t i = 0; i < a[k].size(); ++i) {
                worst = std::max(worst,
                                 std::abs(a[k].values()[i] - b[k].values()[i]));
            }
        }
    }
    return worst;
}

// Perturbs later-scale tokens and measures the largest change in earlier
// logits through the reference route (where a broken mask would show up).
inline double causality_error(bool inject_fault, std::size_t num_pyramids = 4) {
    ModelConfig cfg = small_config(6, 16, 2);
    ModelParams params = init_params(cfg, 932);
    DepthPolicy policy = DepthPolicy::make(6, 3, 2);
    const std::uint32_t K = cfg.schedule.num_scales();
    NoGradGuard no_grad;

    double worst = 0.0;
    for (std::size_t trial = 0; trial < num_pyramids; ++trial) {
        TokenPyramid sample = make_sample(cfg.schedule, cfg.num_classes, 4000 + trial, trial);
        Tensor base = forward_full_sequence(params, sample, policy, inject_fault);
        for (std::uint32_t k = 1; k < K; ++k) {
            TokenPyramid perturbed = sample;
            Rng rng(trial * 91 + k);
            for (std::uint32_t later = k + 1; later <= K; ++later) {
                for (auto& tok : perturbed.maps[later - 1]) {
                    tok = static_cast<std::uint16_t>((tok + 1 + rng.next_below(62)) %
                                                     cfg.schedule.vocab);
                }
            }
            Tensor got = forward_full_sequence(params, perturbed, policy, inject_fault);
            const std::size_t prefix_rows = cfg.schedule.tokens_through(k);
            for (std::size_t r = 0; r < prefix_rows; ++r) {
                for (std::size_t c = 0; c < base.cols(); ++c) {
                    worst = std::max(worst, std::abs(base.at(r, c) - got.at(r, c)));
                }
            }
        }
    }
    return worst;
}

// Instrumented cache appends vs. the closed form over the full (d, N) grid
// on the deep 10-scale ladder.
inline double perf_oracle_error() {
    ModelConfig cfg;
    cfg.depth = 30;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.num_classes = 4;
    cfg.schedule = ScaleSchedule::var256(64);
    ModelParams params = init_params(cfg, 5);
    NoGradGuard no_grad;

    double worst = 0.0;
    for (const DepthPolicy& policy :
         enumerate_configs(30, {2, 4, 8, 16, 30}, {6, 7, 8, 9, 10})) {
        TokenPyramid sample =
            make_sample(cfg.schedule, cfg.num_classes, policy.subnet_depth, policy.bridge_scales);
        KVCache cache(0);
        forward_pyramid(params, sample, policy, &cache);
        const std::uint64_t expect =
            kv_entries(30, policy.subnet_depth, policy.bridge_scales, cfg.schedule);
        worst = std::max(worst, std::abs(static_cast<double>(cache.appended_entries) -
                                         static_cast<double>(expect)));
    }
    return worst;
}

inline double kernel_gradient_fd_error() {
    Rng rng(1618);
    auto rand_values = [&](std::size_t n, double lo, double hi) {
        std::vector<double> v(n);
        for (auto& x : v) x = lo + (hi - lo) * rng.next_double();
        return v;
    };

    // Composite touching every kernel: gather -> layer_norm -> attention-like
    // mix -> quadratic MLP -> cross-entropy.
    Tensor table = Tensor::param(6, 8, rand_values(48, -1, 1));
    Tensor gain = Tensor::param(1, 8, rand_values(8, 0.5, 1.5));
    Tensor bias = Tensor::param(1, 8, rand_values(8, -0.2, 0.2));
    Tensor wq = Tensor::param(8, 8, rand_values(64, -0.5, 0.5));
    Tensor wk = Tensor::param(8, 8, rand_values(64, -0.5, 0.5));
    Tensor wv = Tensor::param(8, 8, rand_values(64, -0.5, 0.5));
    std::vector<Tensor*> params{&table, &gain, &bias, &wq, &wk, &wv};
    const std::vector<std::uint32_t> ids{0, 3, 3, 5};
    const std::vector<std::uint32_t> targets{1, 7, 0, 4, 2, 6, 5, 3};

    auto build = [&]() {
        Tensor x = gather_rows(table, ids);
        Tensor normed = layer_norm(x, gain, bias, 1e-5);
        Tensor q = matmul(normed, wq);
        Tensor k = matmul(normed, wk);
        Tensor v = matmul(normed, wv);
        Tensor att = softmax_rows(scale(matmul(q, transpose(k)), 0.35));
        Tensor mixed = matmul(att, v);
        Tensor gated = mul(mixed, mixed);
        Tensor merged = concat_rows(reshape(gated, 2, 16), reshape(add(x, mixed), 2, 16));
        return cross_entropy(reshape(merged, 8, 8), targets);
    };

    Tensor loss = build();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (Tensor* t : params) analytic.push_back(t->grad());

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t i = 0; i < params[pi]->size(); ++i) {
            const double orig = params[pi]->values()[i];
            params[pi]->values_mut()[i] = orig + h;
            const double fp = build().scalar();
            params[pi]->values_mut()[i] = orig - h;
            const double fm = build().scalar();
            params[pi]->values_mut()[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = analytic[pi][i];
            const double rel =
                std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace verify_detail

// The full property suite behind the `verify` command.
inline std::vector<VerifyCheck> run_verification(const VerifyOptions& opts = {}) {
    std::vector<VerifyCheck> checks;
    auto add = [&](const std::string& name, double measured, double threshold) {
        VerifyCheck c;
        c.name = name;
        c.measured = measured;
        c.threshold = threshold;
        c.pass = measured <= threshold;
        checks.push_back(c);
    };

    add("kernel-gradients-vs-fd", verify_detail::kernel_gradient_fd_error(), 1e-4);
    add("model-gradients-vs-fd",
        verify_detail::model_gradient_fd_error(4, 16, 2, opts.fd_coords), 1e-4);
    add("cache-equivalence", verify_detail::cache_equivalence_error(), 1e-9);
    add("subnet-extraction", verify_detail::subnet_extraction_error(), 0.0);
    add("block-causality", verify_detail::causality_error(opts.inject_mask_fault), 0.0);
    add("perf-model-oracle", verify_detail::perf_oracle_error(), 0.0);
    return checks;
}

}  // namespace scalevar
