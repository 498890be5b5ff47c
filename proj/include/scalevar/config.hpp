#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "scalevar/adam.hpp"
#include "scalevar/depth.hpp"
#include "scalevar/errors.hpp"
#include "scalevar/model.hpp"
#include "scalevar/trainer.hpp"

namespace scalevar {

// Flat `key = value` run configuration with `#` comments. Unknown keys are
// rejected. SCALEVAR_SEED provides a fallback for every *seed key that the
// file (or an override) does not set explicitly.
struct RunConfig {
    // schedule.*
    std::string schedule_preset = "toy";
    std::uint32_t vocab = 64;
    std::uint32_t classes = 8;

    // model.*
    std::uint32_t depth = 6;
    std::uint32_t width = 32;
    std::uint32_t heads = 4;
    std::uint64_t model_seed = 1;

    // policy.*
    std::uint32_t subnet_depth = 3;
    std::uint32_t bridge_scales = 2;
    std::vector<std::uint32_t> supported_depths = {2, 3, 6};

    // train.*
    std::uint32_t e1 = 2;
    std::uint32_t e2 = 6;
    std::uint32_t total_epochs = 8;
    double p_initial = 0.2;
    std::string mode = "progressive";  // progressive | fixed
    double fixed_p = 0.2;
    std::string ramp = "per-step";     // per-step | per-epoch
    std::uint32_t batch_size = 16;
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.05;
    std::uint64_t train_seed = 1;

    // sample.*
    std::uint32_t top_k = 900;
    double top_p = 0.96;
    double temperature = 1.0;
    std::uint64_t sample_seed = 0;
    std::uint32_t sample_count = 8;
    bool emit_pgm = true;

    // io.*
    std::string out_dir = "out";
    std::string train_shard = "out/train.svpy";
    std::string val_shard = "out/val.svpy";
    std::string checkpoint = "out/ckpt-final.svck";
    std::string metrics = "out/metrics.jsonl";
    std::uint64_t train_samples = 4096;
    std::uint64_t val_samples = 512;
    std::uint64_t data_seed = 1234;

    ScaleSchedule schedule() const { return ScaleSchedule::preset(schedule_preset, vocab); }

    ModelConfig model_config() const {
        ModelConfig cfg;
        cfg.depth = depth;
        cfg.width = width;
        cfg.heads = heads;
        cfg.num_classes = classes;
        cfg.schedule = schedule();
        cfg.validate();
        return cfg;
    }

    DepthPolicy policy() const { return DepthPolicy::make(depth, subnet_depth, bridge_scales); }

    TrainPhasePlan plan() const {
        TrainPhasePlan plan;
        plan.e1 = e1;
        plan.e2 = e2;
        plan.total = total_epochs;
        plan.p_initial = p_initial;
        plan.validate();
        return plan;
    }

    TrainRunConfig train_run_config() const {
        TrainRunConfig cfg;
        cfg.adam.lr = lr;
        cfg.adam.beta1 = beta1;
        cfg.adam.beta2 = beta2;
        cfg.adam.eps = adam_eps;
        cfg.adam.weight_decay = weight_decay;
        cfg.batch_size = batch_size;
        cfg.seed = train_seed;
        cfg.per_step_ramp = ramp == "per-step";
        cfg.mode = mode == "fixed" ? RatioMode::fixed : RatioMode::progressive;
        cfg.fixed_p = fixed_p;
        return cfg;
    }

    void validate() const {
        model_config();
        plan();
        if (mode != "progressive" && mode != "fixed") {
            throw config_error("train.mode must be 'progressive' or 'fixed'");
        }
        if (ramp != "per-step" && ramp != "per-epoch") {
            throw config_error("train.ramp must be 'per-step' or 'per-epoch'");
        }
        if (batch_size == 0) throw config_error("train.batch_size must be at least 1");
        if (subnet_depth == 0 || subnet_depth > depth) {
            throw config_error("policy.d must lie in [1, model.D]");
        }
        if (bridge_scales > schedule().num_scales()) {
            throw config_error("policy.N exceeds the scale count");
        }
        if (train_samples == 0 || val_samples == 0) {
            throw config_error("io.train_samples and io.val_samples must be positive");
        }
    }

    static RunConfig load(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides = {});

private:
    void apply(const std::string& key, const std::string& value);
    friend struct RunConfigParser;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const std::uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (...) {
        throw config_error("config: " + key + " expects an unsigned integer, got '" + v + "'");
    }
}

inline std::uint32_t parse_u32(const std::string& key, const std::string& v) {
    const std::uint64_t out = parse_u64(key, v);
    if (out > 0xFFFFFFFFull) throw config_error("config: " + key + " is too large");
    return static_cast<std::uint32_t>(out);
}

inline double parse_f64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (...) {
        throw config_error("config: " + key + " expects a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("config: " + key + " expects true/false, got '" + v + "'");
}

inline std::vector<std::uint32_t> parse_u32_list(const std::string& key, const std::string& v) {
    std::vector<std::uint32_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_u32(key, item));
    }
    if (out.empty()) throw config_error("config: " + key + " expects a comma-separated list");
    return out;
}

}  // namespace detail

inline void RunConfig::apply(const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "schedule.preset") schedule_preset = value;
    else if (key == "schedule.V") vocab = parse_u32(key, value);
    else if (key == "schedule.C") classes = parse_u32(key, value);
    else if (key == "model.D") depth = parse_u32(key, value);
    else if (key == "model.width") width = parse_u32(key, value);
    else if (key == "model.heads") heads = parse_u32(key, value);
    else if (key == "model.seed") model_seed = parse_u64(key, value);
    else if (key == "policy.d") subnet_depth = parse_u32(key, value);
    else if (key == "policy.N") bridge_scales = parse_u32(key, value);
    else if (key == "policy.depths") supported_depths = parse_u32_list(key, value);
    else if (key == "train.E1") e1 = parse_u32(key, value);
    else if (key == "train.E2") e2 = parse_u32(key, value);
    else if (key == "train.E") total_epochs = parse_u32(key, value);
    else if (key == "train.p_initial") p_initial = parse_f64(key, value);
    else if (key == "train.mode") mode = value;
    else if (key == "train.fixed_p") fixed_p = parse_f64(key, value);
    else if (key == "train.ramp") ramp = value;
    else if (key == "train.batch_size") batch_size = parse_u32(key, value);
    else if (key == "train.lr") lr = parse_f64(key, value);
    else if (key == "train.beta1") beta1 = parse_f64(key, value);
    else if (key == "train.beta2") beta2 = parse_f64(key, value);
    else if (key == "train.eps") adam_eps = parse_f64(key, value);
    else if (key == "train.weight_decay") weight_decay = parse_f64(key, value);
    else if (key == "train.seed") train_seed = parse_u64(key, value);
    else if (key == "sample.top_k") top_k = parse_u32(key, value);
    else if (key == "sample.top_p") top_p = parse_f64(key, value);
    else if (key == "sample.temperature") temperature = parse_f64(key, value);
    else if (key == "sample.seed") sample_seed = parse_u64(key, value);
    else if (key == "sample.count") sample_count = parse_u32(key, value);
    else if (key == "sample.pgm") emit_pgm = parse_bool(key, value);
    else if (key == "io.out_dir") out_dir = value;
    else if (key == "io.train_shard") train_shard = value;
    else if (key == "io.val_shard") val_shard = value;
    else if (key == "io.checkpoint") checkpoint = value;
    else if (key == "io.metrics") metrics = value;
    else if (key == "io.train_samples") train_samples = parse_u64(key, value);
    else if (key == "io.val_samples") val_samples = parse_u64(key, value);
    else if (key == "io.data_seed") data_seed = parse_u64(key, value);
    else throw config_error("config: unknown key '" + key + "'");
}

inline RunConfig RunConfig::load(
    const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    std::set<std::string> seen;

    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw config_error("config: cannot open '" + path + "'");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw config_error("config: " + path + ":" + std::to_string(lineno) +
                                   ": expected 'key = value'");
            }
            const std::string key = detail::trim(line.substr(0, eq));
            const std::string value = detail::trim(line.substr(eq + 1));
            cfg.apply(key, value);
            seen.insert(key);
        }
    }
    for (const auto& [key, value] : overrides) {
        cfg.apply(key, value);
        seen.insert(key);
    }

    if (const char* env = std::getenv("SCALEVAR_SEED")) {
        const std::uint64_t seed = detail::parse_u64("SCALEVAR_SEED", env);
        if (!seen.count("model.seed")) cfg.model_seed = seed;
        if (!seen.count("train.seed")) cfg.train_seed = seed;
        if (!seen.count("sample.seed")) cfg.sample_seed = seed;
        if (!seen.count("io.data_seed")) cfg.data_seed = seed;
    }
    cfg.validate();
    return cfg;
}

}  // namespace scalevar
