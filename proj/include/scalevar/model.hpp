#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scalevar/depth.hpp"
#include "scalevar/pyramid.hpp"
#include "scalevar/rng.hpp"
#include "scalevar/schedule.hpp"
#include "scalevar/tensor.hpp"

namespace scalevar {

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
    std::uint32_t depth = 0;   // D transformer layers
    std::uint32_t width = 0;   // embedding channels
    std::uint32_t heads = 0;
    std::uint32_t num_classes = 0;
    ScaleSchedule schedule;

    std::uint32_t head_dim() const { return width / heads; }

    void validate() const {
        schedule.validate();
        if (depth < 2) throw std::invalid_argument("model: depth must be at least 2");
        if (heads == 0 || width == 0 || width % heads != 0) {
            throw std::invalid_argument("model: width must be a positive multiple of heads");
        }
        if (width < 2) throw std::invalid_argument("model: width must be at least 2");
        if (num_classes == 0) throw std::invalid_argument("model: need at least one class");
    }

    bool operator==(const ModelConfig& other) const = default;
};

struct LayerParams {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
};

// One weight set serving every depth configuration. Field order below is the
// canonical parameter order used by checkpoints and the optimizer.
struct ModelParams {
    ModelConfig config;
    Tensor token_emb;              // [V, width]
    Tensor class_emb;              // [C, width]
    std::vector<Tensor> pos_emb;   // per scale, [t_k, width]
    std::vector<LayerParams> layers;
    Tensor out_ln_gain, out_ln_bias;
    Tensor head;                   // [width, V]

    template <typename F>
    void for_each_param(F&& f) {
        f("token_emb", token_emb);
        f("class_emb", class_emb);
        for (std::size_t k = 0; k < pos_emb.size(); ++k) {
            f("pos_emb." + std::to_string(k + 1), pos_emb[k]);
        }
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer." + std::to_string(l) + ".";
            LayerParams& lp = layers[l];
            f(p + "ln1_gain", lp.ln1_gain);
            f(p + "ln1_bias", lp.ln1_bias);
            f(p + "wq", lp.wq);
            f(p + "bq", lp.bq);
            f(p + "wk", lp.wk);
            f(p + "bk", lp.bk);
            f(p + "wv", lp.wv);
            f(p + "bv", lp.bv);
            f(p + "wo", lp.wo);
            f(p + "bo", lp.bo);
            f(p + "ln2_gain", lp.ln2_gain);
            f(p + "ln2_bias", lp.ln2_bias);
            f(p + "w1", lp.w1);
            f(p + "b1", lp.b1);
            f(p + "w2", lp.w2);
            f(p + "b2", lp.b2);
        }
        f("out_ln_gain", out_ln_gain);
        f("out_ln_bias", out_ln_bias);
        f("head", head);
    }

    std::vector<Tensor*> param_list() {
        std::vector<Tensor*> out;
        for_each_param([&](const std::string&, Tensor& t) { out.push_back(&t); });
        return out;
    }

    std::uint64_t num_values() {
        std::uint64_t n = 0;
        for_each_param([&](const std::string&, Tensor& t) { n += t.size(); });
        return n;
    }
};

inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const std::uint32_t w = config.width;
    const double sd = 1.0 / std::sqrt(static_cast<double>(w));
    Rng rng = Rng(seed).derive(0x696e6974ull);

    auto gauss_mat = [&](std::size_t r, std::size_t c) {
        std::vector<double> v(r * c);
        for (auto& x : v) x = rng.next_gauss() * sd;
        return Tensor::param(r, c, std::move(v));
    };
    auto zeros_row = [&](std::size_t c) { return Tensor::param(1, c, std::vector<double>(c, 0.0)); };
    auto ones_row = [&](std::size_t c) { return Tensor::param(1, c, std::vector<double>(c, 1.0)); };

    ModelParams p;
    p.config = config;
    p.token_emb = gauss_mat(config.schedule.vocab, w);
    p.class_emb = gauss_mat(config.num_classes, w);
    for (std::uint32_t k = 1; k <= config.schedule.num_scales(); ++k) {
        p.pos_emb.push_back(gauss_mat(config.schedule.tokens_at(k), w));
    }
    for (std::uint32_t l = 0; l < config.depth; ++l) {
        LayerParams lp;
        lp.ln1_gain = ones_row(w);
        lp.ln1_bias = zeros_row(w);
        lp.wq = gauss_mat(w, w);
        lp.bq = zeros_row(w);
        lp.wk = gauss_mat(w, w);
        lp.bk = zeros_row(w);
        lp.wv = gauss_mat(w, w);
        lp.bv = zeros_row(w);
        lp.wo = gauss_mat(w, w);
        lp.bo = zeros_row(w);
        lp.ln2_gain = ones_row(w);
        lp.ln2_bias = zeros_row(w);
        lp.w1 = gauss_mat(w, 4 * static_cast<std::size_t>(w));
        lp.b1 = zeros_row(4 * static_cast<std::size_t>(w));
        lp.w2 = gauss_mat(4 * static_cast<std::size_t>(w), w);
        lp.b2 = zeros_row(w);
        p.layers.push_back(std::move(lp));
    }
    p.out_ln_gain = ones_row(w);
    p.out_ln_bias = zeros_row(w);
    p.head = gauss_mat(w, config.schedule.vocab);
    return p;
}

// Per-layer cached key/value sequences. A layer caches K/V only for the
// tokens of scales where it was active; `appended_entries` counts every
// (token, layer) append in the same units as the closed-form cost model.
struct KVCache {
    std::vector<Tensor> keys;
    std::vector<Tensor> values;
    std::vector<std::uint64_t> per_layer_tokens;
    std::vector<std::uint64_t> scale_tokens;  // tokens of each completed scale
    std::uint64_t appended_entries = 0;

    explicit KVCache(std::uint32_t depth)
        : keys(depth), values(depth), per_layer_tokens(depth, 0) {}

    std::uint32_t depth() const { return static_cast<std::uint32_t>(keys.size()); }
    std::uint32_t scales_done() const { return static_cast<std::uint32_t>(scale_tokens.size()); }

    std::uint64_t tokens_done() const {
        std::uint64_t n = 0;
        for (std::uint64_t t : scale_tokens) n += t;
        return n;
    }

    // Cuts gradient flow out of everything cached so far; used at the
    // bridge/flexible boundary so flexible-zone losses treat bridge-zone
    // context as constant.
    void detach_all() {
        for (auto& t : keys) {
            if (t.defined()) t = t.detach();
        }
        for (auto& t : values) {
            if (t.defined()) t = t.detach();
        }
    }
};

// Nearest-neighbour upsample index map: destination cell (r, c) reads source
// cell (floor(r*h_src/h_dst), floor(c*w_src/w_dst)), flattened row-major.
inline std::vector<std::uint32_t> upsample_indices(std::uint32_t h_src, std::uint32_t w_src,
                                                   std::uint32_t h_dst, std::uint32_t w_dst) {
    if (h_src == 0 || w_src == 0 || h_dst < h_src || w_dst < w_src) {
        throw std::invalid_argument("upsample_indices: destination must not shrink");
    }
    std::vector<std::uint32_t> out;
    out.reserve(static_cast<std::size_t>(h_dst) * w_dst);
    for (std::uint32_t r = 0; r < h_dst; ++r) {
        const std::uint32_t sr = static_cast<std::uint32_t>(
            (static_cast<std::uint64_t>(r) * h_src) / h_dst);
        for (std::uint32_t c = 0; c < w_dst; ++c) {
            const std::uint32_t sc = static_cast<std::uint32_t>(
                (static_cast<std::uint64_t>(c) * w_src) / w_dst);
            out.push_back(sr * w_src + sc);
        }
    }
    return out;
}

// Input embeddings for one scale step. Scale 1 is the class-conditioned
// start position; later scales token-embed the previous map, upsample it to
// the current grid and add the scale's positional embedding.
inline Tensor embed_step(const ModelParams& params, std::uint32_t k,
                         const std::vector<std::uint16_t>* prev_map, std::uint32_t class_label) {
    const ScaleSchedule& sched = params.config.schedule;
    sched.check_scale(k);
    if (k == 1) {
        if (prev_map != nullptr) {
            throw std::invalid_argument("embed_step: scale 1 takes no previous map");
        }
        Tensor start = gather_rows(params.class_emb, {class_label});
        return add(start, params.pos_emb[0]);
    }
    if (prev_map == nullptr) {
        throw std::invalid_argument("embed_step: scales beyond 1 need the previous map");
    }
    const auto [ph, pw] = sched.grids[k - 2];
    const auto [h, w] = sched.grids[k - 1];
    if (prev_map->size() != static_cast<std::size_t>(ph) * pw) {
        throw std::invalid_argument("embed_step: previous map shape mismatch at scale " +
                                    std::to_string(k));
    }
    const auto idx = upsample_indices(ph, pw, h, w);
    std::vector<std::uint32_t> token_ids(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) token_ids[i] = (*prev_map)[idx[i]];
    return add(gather_rows(params.token_emb, token_ids), params.pos_emb[k - 1]);
}

namespace detail {

// Per-head column-selection constants. The query selector folds in the
// 1/sqrt(head_dim) score scale so attention logits come out of a single
// matmul chain.
struct HeadMaps {
    std::vector<Tensor> select_q;   // [width, head_dim], entries 1/sqrt(hd)
    std::vector<Tensor> select_kv;  // [width, head_dim], entries 1
    std::vector<Tensor> expand;     // [head_dim, width], entries 1

    HeadMaps(std::uint32_t width, std::uint32_t heads) {
        const std::uint32_t hd = width / heads;
        const double qs = 1.0 / std::sqrt(static_cast<double>(hd));
        for (std::uint32_t h = 0; h < heads; ++h) {
            std::vector<double> sq(static_cast<std::size_t>(width) * hd, 0.0);
            std::vector<double> sk(static_cast<std::size_t>(width) * hd, 0.0);
            std::vector<double> ex(static_cast<std::size_t>(hd) * width, 0.0);
            for (std::uint32_t m = 0; m < hd; ++m) {
                sq[static_cast<std::size_t>(h * hd + m) * hd + m] = qs;
                sk[static_cast<std::size_t>(h * hd + m) * hd + m] = 1.0;
                ex[static_cast<std::size_t>(m) * width + h * hd + m] = 1.0;
            }
            select_q.push_back(Tensor::from(width, hd, std::move(sq)));
            select_kv.push_back(Tensor::from(width, hd, std::move(sk)));
            expand.push_back(Tensor::from(hd, width, std::move(ex)));
        }
    }
};

inline Tensor attention_mix(const Tensor& q, const Tensor& k_all, const Tensor& v_all,
                            const HeadMaps& maps, const Tensor* score_mask) {
    Tensor ctx;
    for (std::size_t h = 0; h < maps.select_q.size(); ++h) {
        Tensor qh = matmul(q, maps.select_q[h]);
        Tensor kh = matmul(k_all, maps.select_kv[h]);
        Tensor vh = matmul(v_all, maps.select_kv[h]);
        Tensor scores = matmul(qh, transpose(kh));
        if (score_mask != nullptr) scores = add(scores, *score_mask);
        Tensor mixed = matmul(softmax_rows(scores), vh);
        Tensor expanded = matmul(mixed, maps.expand[h]);
        ctx = ctx.defined() ? add(ctx, expanded) : expanded;
    }
    return ctx;
}

}  // namespace detail

// One scale step through the selected layers. Skipped layers leave the
// residual stream untouched and cache nothing.
inline Tensor forward_step(const ModelParams& params, const Tensor& embeddings,
                           const std::vector<std::uint32_t>& active, KVCache& cache) {
    const ModelConfig& cfg = params.config;
    if (cache.depth() != cfg.depth) throw state_error("forward_step: cache depth mismatch");
    std::vector<char> is_active(cfg.depth, 0);
    for (std::uint32_t l : active) {
        if (l >= cfg.depth) throw std::invalid_argument("forward_step: layer index out of range");
        is_active[l] = 1;
    }
    for (std::uint32_t l = 0; l < cfg.depth; ++l) {
        const std::size_t cached = cache.keys[l].defined() ? cache.keys[l].rows() : 0;
        if (cached != cache.per_layer_tokens[l]) {
            throw state_error("forward_step: cache bookkeeping inconsistent at layer " +
                              std::to_string(l));
        }
    }
    const std::size_t t = embeddings.rows();
    const detail::HeadMaps maps(cfg.width, cfg.heads);

    Tensor x = embeddings;
    for (std::uint32_t l = 0; l < cfg.depth; ++l) {
        if (!is_active[l]) continue;
        const LayerParams& lp = params.layers[l];

        Tensor a_in = layer_norm(x, lp.ln1_gain, lp.ln1_bias, kLayerNormEps);
        Tensor q = add_rowvec(matmul(a_in, lp.wq), lp.bq);
        Tensor k_new = add_rowvec(matmul(a_in, lp.wk), lp.bk);
        Tensor v_new = add_rowvec(matmul(a_in, lp.wv), lp.bv);

        Tensor k_all = cache.keys[l].defined() ? concat_rows(cache.keys[l], k_new) : k_new;
        Tensor v_all = cache.values[l].defined() ? concat_rows(cache.values[l], v_new) : v_new;
        cache.keys[l] = k_all;
        cache.values[l] = v_all;
        cache.per_layer_tokens[l] += t;
        cache.appended_entries += t;

        Tensor ctx = detail::attention_mix(q, k_all, v_all, maps, nullptr);
        x = add(x, add_rowvec(matmul(ctx, lp.wo), lp.bo));

        Tensor m_in = layer_norm(x, lp.ln2_gain, lp.ln2_bias, kLayerNormEps);
        Tensor hidden = add_rowvec(matmul(m_in, lp.w1), lp.b1);
        Tensor activated = mul(hidden, hidden);
        x = add(x, add_rowvec(matmul(activated, lp.w2), lp.b2));
    }
    cache.scale_tokens.push_back(t);
    return matmul(layer_norm(x, params.out_ln_gain, params.out_ln_bias, kLayerNormEps),
                  params.head);
}

// Teacher-forced pass over a whole pyramid: scale k conditions on the ground
// truth map of scale k-1. Returns one logits tensor per scale, aligned with
// the pyramid's own maps as targets. Cached context from the bridge zone is
// detached once the flexible zone begins.
inline std::vector<Tensor> forward_pyramid(const ModelParams& params, const TokenPyramid& pyramid,
                                           const DepthPolicy& policy,
                                           KVCache* cache_out = nullptr) {
    const ScaleSchedule& sched = params.config.schedule;
    pyramid.validate(sched);
    if (policy.full_depth != params.config.depth) {
        throw std::invalid_argument("forward_pyramid: policy depth does not match model");
    }
    const std::uint32_t K = sched.num_scales();
    if (policy.bridge_scales > K) {
        throw std::invalid_argument("forward_pyramid: bridge zone exceeds scale count");
    }
    KVCache cache(params.config.depth);
    std::vector<Tensor> logits;
    for (std::uint32_t k = 1; k <= K; ++k) {
        if (k == policy.bridge_scales + 1) cache.detach_all();
        const std::vector<std::uint16_t>* prev = (k == 1) ? nullptr : &pyramid.maps[k - 2];
        Tensor emb = embed_step(params, k, prev, pyramid.class_label);
        logits.push_back(forward_step(params, emb, active_layers(k, policy, K), cache));
    }
    if (cache_out != nullptr) *cache_out = std::move(cache);
    return logits;
}

// Copies the selected layers (plus all shared weights) into a standalone
// model of depth |selected|. Running it at full depth reproduces the
// supernet's forward with the same active set bit for bit.
inline ModelParams extract_subnet(const ModelParams& params,
                                  const std::vector<std::uint32_t>& selected) {
    if (selected.empty()) throw std::invalid_argument("extract_subnet: empty selection");
    for (std::size_t i = 0; i < selected.size(); ++i) {
        if (selected[i] >= params.config.depth) {
            throw std::invalid_argument("extract_subnet: layer index out of range");
        }
        if (i > 0 && selected[i] <= selected[i - 1]) {
            throw std::invalid_argument("extract_subnet: selection must be strictly increasing");
        }
    }
    auto copy_param = [](const Tensor& t) {
        return Tensor::param(t.rows(), t.cols(), t.values());
    };

    ModelParams out;
    out.config = params.config;
    out.config.depth = static_cast<std::uint32_t>(selected.size());
    out.token_emb = copy_param(params.token_emb);
    out.class_emb = copy_param(params.class_emb);
    for (const Tensor& t : params.pos_emb) out.pos_emb.push_back(copy_param(t));
    for (std::uint32_t l : selected) {
        const LayerParams& lp = params.layers[l];
        LayerParams cp;
        cp.ln1_gain = copy_param(lp.ln1_gain);
        cp.ln1_bias = copy_param(lp.ln1_bias);
        cp.wq = copy_param(lp.wq);
        cp.bq = copy_param(lp.bq);
        cp.wk = copy_param(lp.wk);
        cp.bk = copy_param(lp.bk);
        cp.wv = copy_param(lp.wv);
        cp.bv = copy_param(lp.bv);
        cp.wo = copy_param(lp.wo);
        cp.bo = copy_param(lp.bo);
        cp.ln2_gain = copy_param(lp.ln2_gain);
        cp.ln2_bias = copy_param(lp.ln2_bias);
        cp.w1 = copy_param(lp.w1);
        cp.b1 = copy_param(lp.b1);
        cp.w2 = copy_param(lp.w2);
        cp.b2 = copy_param(lp.b2);
        out.layers.push_back(std::move(cp));
    }
    out.out_ln_gain = copy_param(params.out_ln_gain);
    out.out_ln_bias = copy_param(params.out_ln_bias);
    out.head = copy_param(params.head);
    return out;
}

// Reference route for equivalence checks: the whole pyramid as one masked
// sequence. Layer l transforms only positions of scales where it is active
// (other positions pass through via a zeroed update), and a query may attend
// within its own scale plus earlier scales that layer l actually cached.
// `inject_mask_fault` deliberately opens one illegal attention edge; the
// verification command uses it to prove the causality check can fail.
inline Tensor forward_full_sequence(const ModelParams& params, const TokenPyramid& pyramid,
                                    const DepthPolicy& policy, bool inject_mask_fault = false) {
    const ScaleSchedule& sched = params.config.schedule;
    pyramid.validate(sched);
    if (policy.full_depth != params.config.depth) {
        throw std::invalid_argument("forward_full_sequence: policy depth does not match model");
    }
    const std::uint32_t K = sched.num_scales();
    const std::uint32_t D = params.config.depth;
    const std::size_t total = sched.total_tokens();

    std::vector<std::uint32_t> scale_of;
    scale_of.reserve(total);
    Tensor x;
    for (std::uint32_t k = 1; k <= K; ++k) {
        const std::vector<std::uint16_t>* prev = (k == 1) ? nullptr : &pyramid.maps[k - 2];
        Tensor emb = embed_step(params, k, prev, pyramid.class_label);
        x = x.defined() ? concat_rows(x, emb) : emb;
        for (std::uint64_t i = 0; i < sched.tokens_at(k); ++i) scale_of.push_back(k);
    }

    std::vector<std::vector<char>> active_at(D, std::vector<char>(K + 1, 0));
    for (std::uint32_t k = 1; k <= K; ++k) {
        for (std::uint32_t l : active_layers(k, policy, K)) active_at[l][k] = 1;
    }

    const detail::HeadMaps maps(params.config.width, params.config.heads);
    constexpr double kMasked = -1e30;

    for (std::uint32_t l = 0; l < D; ++l) {
        const LayerParams& lp = params.layers[l];

        std::vector<double> mask(total * total, kMasked);
        for (std::size_t i = 0; i < total; ++i) {
            for (std::size_t j = 0; j < total; ++j) {
                const bool same_scale = scale_of[j] == scale_of[i];
                const bool earlier_cached = scale_of[j] < scale_of[i] && active_at[l][scale_of[j]];
                if (same_scale || earlier_cached) mask[i * total + j] = 0.0;
            }
        }
        if (inject_mask_fault && l == 0 && total >= 2) {
            mask[total - 1] = 0.0;  // first position may peek at the last
        }
        Tensor score_mask = Tensor::from(total, total, std::move(mask));

        std::vector<double> act(total * params.config.width, 0.0);
        for (std::size_t i = 0; i < total; ++i) {
            if (active_at[l][scale_of[i]]) {
                for (std::uint32_t j = 0; j < params.config.width; ++j) {
                    act[i * params.config.width + j] = 1.0;
                }
            }
        }
        Tensor activity = Tensor::from(total, params.config.width, std::move(act));

        Tensor a_in = layer_norm(x, lp.ln1_gain, lp.ln1_bias, kLayerNormEps);
        Tensor q = add_rowvec(matmul(a_in, lp.wq), lp.bq);
        Tensor k_all = add_rowvec(matmul(a_in, lp.wk), lp.bk);
        Tensor v_all = add_rowvec(matmul(a_in, lp.wv), lp.bv);
        Tensor ctx = detail::attention_mix(q, k_all, v_all, maps, &score_mask);
        Tensor attn = add_rowvec(matmul(ctx, lp.wo), lp.bo);
        x = add(x, mul(attn, activity));

        Tensor m_in = layer_norm(x, lp.ln2_gain, lp.ln2_bias, kLayerNormEps);
        Tensor hidden = add_rowvec(matmul(m_in, lp.w1), lp.b1);
        Tensor mlp = add_rowvec(matmul(mul(hidden, hidden), lp.w2), lp.b2);
        x = add(x, mul(mlp, activity));
    }
    return matmul(layer_norm(x, params.out_ln_gain, params.out_ln_bias, kLayerNormEps),
                  params.head);
}

}  // namespace scalevar
