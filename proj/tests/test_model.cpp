#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "scalevar/checkpoint.hpp"
#include "scalevar/model.hpp"
#include "scalevar/perf.hpp"

using namespace scalevar;

namespace {

ModelConfig toy_config(std::uint32_t depth = 4, std::uint32_t width = 16,
                       std::uint32_t heads = 2) {
    ModelConfig cfg;
    cfg.depth = depth;
    cfg.width = width;
    cfg.heads = heads;
    cfg.num_classes = 8;
    cfg.schedule = ScaleSchedule::toy(64);
    return cfg;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// Straight-line single-block transformer oracle: plain loops, no graph.
std::vector<double> plain_block_logits(const ModelParams& p, const std::vector<double>& emb,
                                       std::size_t t, std::size_t layer) {
    const std::uint32_t w = p.config.width;
    const std::uint32_t heads = p.config.heads;
    const std::uint32_t hd = w / heads;
    const LayerParams& lp = p.layers[layer];

    auto ln = [&](const std::vector<double>& x, const Tensor& gain, const Tensor& bias) {
        std::vector<double> y(x.size());
        for (std::size_t r = 0; r < t; ++r) {
            double mean = 0.0;
            for (std::uint32_t j = 0; j < w; ++j) mean += x[r * w + j];
            mean /= w;
            double var = 0.0;
            for (std::uint32_t j = 0; j < w; ++j) {
                var += (x[r * w + j] - mean) * (x[r * w + j] - mean);
            }
            var /= w;
            const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            for (std::uint32_t j = 0; j < w; ++j) {
                y[r * w + j] = (x[r * w + j] - mean) * inv * gain.values()[j] + bias.values()[j];
            }
        }
        return y;
    };
    auto linear = [&](const std::vector<double>& x, const Tensor& wm, const Tensor& b,
                      std::size_t in, std::size_t out) {
        std::vector<double> y(t * out);
        for (std::size_t r = 0; r < t; ++r) {
            for (std::size_t j = 0; j < out; ++j) y[r * out + j] = b.values()[j];
            for (std::size_t kk = 0; kk < in; ++kk) {
                const double xv = x[r * in + kk];
                for (std::size_t j = 0; j < out; ++j) y[r * out + j] += xv * wm.values()[kk * out + j];
            }
        }
        return y;
    };

    std::vector<double> x = emb;
    std::vector<double> a_in = ln(x, lp.ln1_gain, lp.ln1_bias);
    std::vector<double> q = linear(a_in, lp.wq, lp.bq, w, w);
    std::vector<double> k = linear(a_in, lp.wk, lp.bk, w, w);
    std::vector<double> v = linear(a_in, lp.wv, lp.bv, w, w);

    std::vector<double> ctx(t * w, 0.0);
    const double qs = 1.0 / std::sqrt(static_cast<double>(hd));
    for (std::uint32_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < t; ++i) {
            std::vector<double> scores(t);
            for (std::size_t j = 0; j < t; ++j) {
                double s = 0.0;
                for (std::uint32_t m = 0; m < hd; ++m) {
                    s += (q[i * w + h * hd + m] * qs) * k[j * w + h * hd + m];
                }
                scores[j] = s;
            }
            double mx = scores[0];
            for (double s : scores) mx = std::max(mx, s);
            double sum = 0.0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                sum += s;
            }
            for (auto& s : scores) s /= sum;
            for (std::uint32_t m = 0; m < hd; ++m) {
                double acc = 0.0;
                for (std::size_t j = 0; j < t; ++j) acc += scores[j] * v[j * w + h * hd + m];
                ctx[i * w + h * hd + m] = acc;
            }
        }
    }
    std::vector<double> attn = linear(ctx, lp.wo, lp.bo, w, w);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn[i];

    std::vector<double> m_in = ln(x, lp.ln2_gain, lp.ln2_bias);
    std::vector<double> hidden = linear(m_in, lp.w1, lp.b1, w, 4 * w);
    for (auto& hval : hidden) hval = hval * hval;
    std::vector<double> mlp = linear(hidden, lp.w2, lp.b2, 4 * w, w);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += mlp[i];

    std::vector<double> normed = ln(x, p.out_ln_gain, p.out_ln_bias);
    std::vector<double> logits(t * p.config.schedule.vocab, 0.0);
    const std::size_t vocab = p.config.schedule.vocab;
    for (std::size_t r = 0; r < t; ++r) {
        for (std::size_t kk = 0; kk < w; ++kk) {
            const double xv = normed[r * w + kk];
            for (std::size_t j = 0; j < vocab; ++j) {
                logits[r * vocab + j] += xv * p.head.values()[kk * vocab + j];
            }
        }
    }
    return logits;
}

std::vector<double> collect_values(ModelParams& p) {
    std::vector<double> all;
    p.for_each_param([&](const std::string&, Tensor& t) {
        all.insert(all.end(), t.values().begin(), t.values().end());
    });
    return all;
}

}  // namespace

TEST_CASE("init_params is deterministic per seed") {
    ModelConfig cfg = toy_config();
    ModelParams a = init_params(cfg, 7);
    ModelParams b = init_params(cfg, 7);
    CHECK(collect_values(a) == collect_values(b));

    ModelParams c = init_params(cfg, 8);
    CHECK(a.token_emb.values() != c.token_emb.values());
}

TEST_CASE("init_params sets norm gains to one") {
    ModelParams p = init_params(toy_config(), 3);
    for (const auto& lp : p.layers) {
        for (double g : lp.ln1_gain.values()) CHECK(g == 1.0);
        for (double g : lp.ln2_gain.values()) CHECK(g == 1.0);
    }
    for (double g : p.out_ln_gain.values()) CHECK(g == 1.0);
}

TEST_CASE("upsample index map for 2x2 to 3x3") {
    CHECK(upsample_indices(2, 2, 3, 3) ==
          std::vector<std::uint32_t>{0, 0, 1, 0, 0, 1, 2, 2, 3});
}

TEST_CASE("embed_step scale 1 is class embedding plus position") {
    ModelParams p = init_params(toy_config(), 11);
    Tensor e = embed_step(p, 1, nullptr, 5);
    REQUIRE(e.rows() == 1);
    REQUIRE(e.cols() == 16);
    for (std::size_t j = 0; j < 16; ++j) {
        CHECK(e.at(0, j) == p.class_emb.at(5, j) + p.pos_emb[0].at(0, j));
    }
}

TEST_CASE("embed_step upsample from 1x1 broadcasts one token") {
    ModelParams p = init_params(toy_config(), 11);
    std::vector<std::uint16_t> prev{42};
    Tensor e = embed_step(p, 2, &prev, 0);
    REQUIRE(e.rows() == 4);
    // Positions differ only by the positional term.
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 16; ++j) {
            CHECK(e.at(i, j) - p.pos_emb[1].at(i, j) ==
                  Catch::Approx(p.token_emb.at(42, j)).margin(1e-15));
        }
    }
}

TEST_CASE("embed_step contract violations") {
    ModelParams p = init_params(toy_config(), 11);
    std::vector<std::uint16_t> prev{1};
    CHECK_THROWS_AS(embed_step(p, 1, &prev, 0), std::invalid_argument);
    CHECK_THROWS_AS(embed_step(p, 2, nullptr, 0), std::invalid_argument);
    std::vector<std::uint16_t> wrong{1, 2, 3};
    CHECK_THROWS_AS(embed_step(p, 2, &wrong, 0), std::invalid_argument);
    CHECK_THROWS_AS(embed_step(p, 1, nullptr, 99), std::out_of_range);
}

TEST_CASE("forward_step with empty active set is the pure skip path") {
    ModelParams p = init_params(toy_config(), 21);
    Tensor emb = embed_step(p, 1, nullptr, 2);
    KVCache cache(p.config.depth);
    Tensor logits = forward_step(p, emb, {}, cache);

    Tensor expect = matmul(layer_norm(emb, p.out_ln_gain, p.out_ln_bias, kLayerNormEps), p.head);
    CHECK(logits.values() == expect.values());
    CHECK(cache.appended_entries == 0);
}

TEST_CASE("forward_step single active layer matches a plain transformer block") {
    ModelParams p = init_params(toy_config(4, 16, 2), 33);
    std::vector<std::uint16_t> prev{7};
    Tensor emb = embed_step(p, 2, &prev, 1);
    KVCache cache(p.config.depth);
    Tensor logits = forward_step(p, emb, {2}, cache);

    std::vector<double> oracle = plain_block_logits(p, emb.values(), emb.rows(), 2);
    CHECK(max_abs_diff(logits.values(), oracle) < 1e-10);
}

TEST_CASE("cache bookkeeping matches the closed-form entry count") {
    ModelParams p = init_params(toy_config(6, 16, 2), 5);
    DepthPolicy policy = DepthPolicy::make(6, 3, 2);
    TokenPyramid sample = make_sample(p.config.schedule, p.config.num_classes, 404, 0);

    KVCache cache(0);
    forward_pyramid(p, sample, policy, &cache);

    CHECK(cache.appended_entries == kv_entries(6, 3, 2, p.config.schedule));
    const std::uint64_t bridge_tokens = p.config.schedule.tokens_through(2);
    const std::uint64_t total_tokens = p.config.schedule.total_tokens();
    for (std::uint32_t l = 0; l < 6; ++l) {
        const bool in_subnet = std::binary_search(policy.selected.begin(), policy.selected.end(), l);
        CHECK(cache.per_layer_tokens[l] == (in_subnet ? total_tokens : bridge_tokens));
    }
    CHECK(cache.scales_done() == 5);
    CHECK(cache.tokens_done() == total_tokens);
}

TEST_CASE("forward_step rejects inconsistent cache") {
    ModelParams p = init_params(toy_config(), 5);
    Tensor emb = embed_step(p, 1, nullptr, 0);
    KVCache wrong_depth(2);
    CHECK_THROWS_AS(forward_step(p, emb, {0}, wrong_depth), state_error);

    KVCache cache(p.config.depth);
    forward_step(p, emb, {0, 1}, cache);
    cache.per_layer_tokens[0] += 1;  // corrupt the bookkeeping
    std::vector<std::uint16_t> prev{0};
    Tensor emb2 = embed_step(p, 2, &prev, 0);
    CHECK_THROWS_AS(forward_step(p, emb2, {0, 1}, cache), state_error);
}

TEST_CASE("stepwise cached pass equals the masked full-sequence pass") {
    ModelParams p = init_params(toy_config(6, 16, 2), 77);
    TokenPyramid sample = make_sample(p.config.schedule, p.config.num_classes, 11, 3);

    for (auto [d, n] : {std::pair<std::uint32_t, std::uint32_t>{3, 2},
                        {6, 0},
                        {2, 5},
                        {4, 3}}) {
        DepthPolicy policy = DepthPolicy::make(6, d, n);
        std::vector<Tensor> stepwise = forward_pyramid(p, sample, policy);
        Tensor full = forward_full_sequence(p, sample, policy);

        std::size_t row = 0;
        double worst = 0.0;
        for (std::uint32_t k = 1; k <= 5; ++k) {
            const Tensor& lk = stepwise[k - 1];
            for (std::size_t r = 0; r < lk.rows(); ++r, ++row) {
                for (std::size_t c = 0; c < lk.cols(); ++c) {
                    worst = std::max(worst, std::abs(lk.at(r, c) - full.at(row, c)));
                }
            }
        }
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("block causality: later scales cannot influence earlier logits") {
    ModelParams p = init_params(toy_config(6, 16, 2), 13);
    DepthPolicy policy = DepthPolicy::make(6, 3, 2);
    TokenPyramid sample = make_sample(p.config.schedule, p.config.num_classes, 5150, 1);

    std::vector<Tensor> base = forward_pyramid(p, sample, policy);
    for (std::uint32_t k = 1; k <= 4; ++k) {
        TokenPyramid perturbed = sample;
        for (std::uint32_t later = k + 1; later <= 5; ++later) {
            for (auto& tok : perturbed.maps[later - 1]) tok = (tok + 17) % 64;
        }
        std::vector<Tensor> got = forward_pyramid(p, perturbed, policy);
        for (std::uint32_t j = 1; j <= k; ++j) {
            REQUIRE(got[j - 1].values() == base[j - 1].values());
        }
    }
}

TEST_CASE("mask fault hook breaks causality in the reference route") {
    ModelParams p = init_params(toy_config(4, 16, 2), 13);
    DepthPolicy policy = DepthPolicy::make(4, 2, 1);
    TokenPyramid sample = make_sample(p.config.schedule, p.config.num_classes, 6, 2);
    TokenPyramid perturbed = sample;
    // Scale-4 tokens feed the scale-5 embeddings, including the last position
    // that the fault edge exposes to the first query.
    perturbed.maps[3][15] = (perturbed.maps[3][15] + 1) % 64;

    Tensor a = forward_full_sequence(p, sample, policy, true);
    Tensor b = forward_full_sequence(p, perturbed, policy, true);
    // First-row logits see the illegal edge, so the perturbation leaks.
    double diff = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) diff = std::max(diff, std::abs(a.at(0, c) - b.at(0, c)));
    CHECK(diff > 0.0);
}

TEST_CASE("bridge zone covering all scales makes depth irrelevant") {
    ModelParams p = init_params(toy_config(6, 16, 2), 99);
    TokenPyramid sample = make_sample(p.config.schedule, p.config.num_classes, 21, 4);

    std::vector<Tensor> full_depth = forward_pyramid(p, sample, DepthPolicy::make(6, 6, 0));
    for (std::uint32_t d : {2u, 3u, 4u}) {
        std::vector<Tensor> bridged = forward_pyramid(p, sample, DepthPolicy::make(6, d, 5));
        for (std::uint32_t k = 0; k < 5; ++k) {
            REQUIRE(bridged[k].values() == full_depth[k].values());
        }
    }
}

TEST_CASE("extract_subnet full selection reproduces the model") {
    ModelParams p = init_params(toy_config(4, 16, 2), 3);
    ModelParams whole = extract_subnet(p, full_layer_set(4));
    TokenPyramid sample = make_sample(p.config.schedule, p.config.num_classes, 8, 0);
    DepthPolicy policy = DepthPolicy::make(4, 4, 0);

    std::vector<Tensor> a = forward_pyramid(p, sample, policy);
    std::vector<Tensor> b = forward_pyramid(whole, sample, policy);
    for (std::size_t k = 0; k < a.size(); ++k) REQUIRE(a[k].values() == b[k].values());
}

TEST_CASE("extract_subnet equivalence for a two-layer selection") {
    ModelParams p = init_params(toy_config(6, 16, 2), 31);
    std::vector<std::uint32_t> selected{0, 5};
    ModelParams sub = extract_subnet(p, selected);

    Tensor emb = embed_step(p, 1, nullptr, 3);
    KVCache cache_a(6), cache_b(2);
    Tensor a = forward_step(p, emb, selected, cache_a);
    Tensor b = forward_step(sub, emb, {0, 1}, cache_b);
    REQUIRE(a.values() == b.values());
}

TEST_CASE("extract_subnet equivalence for a 16-of-30 pyramid forward") {
    ModelConfig cfg = toy_config(30, 8, 2);
    ModelParams p = init_params(cfg, 1234);
    auto selected = select_layers(30, 16);
    ModelParams sub = extract_subnet(p, selected);
    TokenPyramid sample = make_sample(cfg.schedule, cfg.num_classes, 3, 6);

    // Subnet active at every scale on both sides.
    std::vector<Tensor> a = forward_pyramid(p, sample, DepthPolicy::make(30, 16, 0));
    std::vector<Tensor> b = forward_pyramid(sub, sample, DepthPolicy::make(16, 16, 0));
    for (std::size_t k = 0; k < a.size(); ++k) REQUIRE(a[k].values() == b[k].values());
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    auto dir = std::filesystem::temp_directory_path() / "scalevar_test_model";
    std::filesystem::create_directories(dir);
    auto path = (dir / "model.svck").string();

    ModelParams p = init_params(toy_config(4, 16, 2), 2024);
    save_checkpoint(path, p);
    ModelParams q = load_checkpoint(path);

    CHECK(p.config == q.config);
    CHECK(collect_values(p) == collect_values(q));
}

TEST_CASE("checkpoint corruption detected") {
    auto dir = std::filesystem::temp_directory_path() / "scalevar_test_model";
    std::filesystem::create_directories(dir);
    auto path = (dir / "model2.svck").string();
    ModelParams p = init_params(toy_config(4, 16, 2), 1);
    save_checkpoint(path, p);

    std::vector<char> bytes = [&] {
        std::ifstream f(path, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
    }();
    bytes[bytes.size() / 3] ^= 0x1;
    auto bad = (dir / "model2_bad.svck").string();
    std::ofstream(bad, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(bad), format_error);
}
