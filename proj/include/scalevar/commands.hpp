#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "scalevar/checkpoint.hpp"
#include "scalevar/config.hpp"
#include "scalevar/perf.hpp"
#include "scalevar/sampler.hpp"
#include "scalevar/shard.hpp"
#include "scalevar/trainer.hpp"
#include "scalevar/verify.hpp"

namespace scalevar {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitIoError = 3;
inline constexpr int kExitNumericError = 4;

namespace detail {

template <typename F>
int run_guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const config_error& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::out_of_range& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const io_error& e) {
        err << "io error: " << e.what() << "\n";
        return kExitIoError;
    } catch (const format_error& e) {
        err << "io error: " << e.what() << "\n";
        return kExitIoError;
    } catch (const numeric_error& e) {
        err << "numeric error: " << e.what() << "\n";
        return kExitNumericError;
    }
}

inline void ensure_parent_dir(const std::string& file_path) {
    const std::filesystem::path parent = std::filesystem::path(file_path).parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
    if (ec) throw io_error("cannot create directory '" + parent.string() + "': " + ec.message());
}

inline void require_file(const std::string& path, const std::string& what) {
    if (!std::filesystem::exists(path)) {
        throw config_error(what + " not found: '" + path + "'");
    }
}

inline Shard build_shard(const ScaleSchedule& sched, std::uint32_t classes,
                         std::uint64_t base_seed, std::uint64_t count) {
    Shard shard;
    shard.meta.schedule = sched;
    shard.meta.num_classes = classes;
    shard.meta.base_seed = base_seed;
    shard.samples.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        shard.samples.push_back(make_sample(sched, classes, base_seed, i));
    }
    return shard;
}

}  // namespace detail

// Writes the train and validation shards described by the config.
inline int cmd_gen_data(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return detail::run_guarded(err, [&]() {
        const ScaleSchedule sched = cfg.schedule();
        detail::ensure_parent_dir(cfg.train_shard);
        detail::ensure_parent_dir(cfg.val_shard);

        const std::uint64_t train_seed = Rng::mix(cfg.data_seed, 0x7472616eull);
        const std::uint64_t val_seed = Rng::mix(cfg.data_seed, 0x76616cull);
        Shard train = detail::build_shard(sched, cfg.classes, train_seed, cfg.train_samples);
        Shard val = detail::build_shard(sched, cfg.classes, val_seed, cfg.val_samples);
        write_shard(cfg.train_shard, train.meta, train.samples);
        write_shard(cfg.val_shard, val.meta, val.samples);

        out << "train shard: " << train.samples.size() << " samples -> " << cfg.train_shard
            << "\n";
        out << "val shard: " << val.samples.size() << " samples -> " << cfg.val_shard << "\n";
        return kExitOk;
    });
}

// Runs the progressive (or fixed-ratio) training loop; emits per-epoch
// metrics records and phase-boundary checkpoints.
inline int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return detail::run_guarded(err, [&]() {
        detail::require_file(cfg.train_shard, "train shard");
        detail::require_file(cfg.val_shard, "validation shard");
        Shard train = read_shard(cfg.train_shard);
        Shard val = read_shard(cfg.val_shard);

        ModelParams params = init_params(cfg.model_config(), cfg.model_seed);
        TrainRunConfig run_cfg = cfg.train_run_config();
        run_cfg.checkpoint_dir = cfg.out_dir;
        detail::ensure_parent_dir((std::filesystem::path(cfg.out_dir) / "x").string());
        detail::ensure_parent_dir(cfg.metrics);
        std::ofstream metrics(cfg.metrics, std::ios::trunc);
        if (!metrics) throw io_error("cannot open for writing: " + cfg.metrics);
        run_cfg.metrics = &metrics;

        const TrainHistory history =
            run_training(params, cfg.plan(), cfg.policy(), train, val, run_cfg);

        for (const auto& rec : history.epochs) {
            err << "epoch " << rec.epoch << " phase " << rec.phase << " p " << rec.p
                << " loss_full " << rec.loss_full << " loss_subnet " << rec.loss_subnet << "\n";
        }
        out << "trained " << history.epochs.size() << " epochs; metrics -> " << cfg.metrics
            << "; checkpoints -> " << cfg.out_dir << "\n";
        return kExitOk;
    });
}

struct GenerateOptions {
    std::optional<std::string> checkpoint;
    std::optional<std::uint32_t> subnet_depth;
    std::optional<std::uint32_t> bridge_scales;
    std::optional<std::uint32_t> count;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint32_t> class_label;
};

// Decodes pyramids from a checkpoint; depth is chosen per invocation, one
// load serves any supported --d.
inline int cmd_generate(const RunConfig& cfg, const GenerateOptions& opts, std::ostream& out,
                        std::ostream& err) {
    return detail::run_guarded(err, [&]() {
        const std::string ckpt_path = opts.checkpoint.value_or(cfg.checkpoint);
        detail::require_file(ckpt_path, "checkpoint");
        ModelParams params = load_checkpoint(ckpt_path);

        if (params.config.schedule != cfg.schedule()) {
            throw config_error("checkpoint schedule does not match the config schedule");
        }
        if (params.config.num_classes != cfg.classes) {
            throw config_error("checkpoint class count does not match the config");
        }

        const std::uint32_t full_depth = params.config.depth;
        const std::uint32_t d = opts.subnet_depth.value_or(cfg.subnet_depth);
        std::vector<std::uint32_t> supported = cfg.supported_depths;
        supported.push_back(full_depth);
        std::sort(supported.begin(), supported.end());
        supported.erase(std::unique(supported.begin(), supported.end()), supported.end());
        if (std::find(supported.begin(), supported.end(), d) == supported.end()) {
            std::string valid;
            for (std::uint32_t v : supported) valid += (valid.empty() ? "" : ",") + std::to_string(v);
            throw config_error("unsupported depth --d " + std::to_string(d) +
                               "; valid depths: " + valid);
        }
        const std::uint32_t n = opts.bridge_scales.value_or(cfg.bridge_scales);
        const DepthPolicy policy = DepthPolicy::make(full_depth, d, n);

        const std::uint32_t count = opts.count.value_or(cfg.sample_count);
        const std::uint64_t seed = opts.seed.value_or(cfg.sample_seed);

        SampleConfig sample_cfg;
        sample_cfg.top_k = std::min(cfg.top_k, params.config.schedule.vocab);
        sample_cfg.top_p = cfg.top_p;
        sample_cfg.temperature = cfg.temperature;

        Shard result;
        result.meta.schedule = params.config.schedule;
        result.meta.num_classes = params.config.num_classes;
        result.meta.base_seed = seed;
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t label =
                opts.class_label.value_or(i % params.config.num_classes);
            sample_cfg.seed = Rng::mix(seed, i);
            result.samples.push_back(generate(params, label, policy, sample_cfg));
        }

        const std::filesystem::path dir(cfg.out_dir);
        detail::ensure_parent_dir((dir / "x").string());
        const std::string shard_path = (dir / "generated.svpy").string();
        write_shard(shard_path, result.meta, result.samples);
        if (cfg.emit_pgm) {
            const auto [h, w] = params.config.schedule.finest_grid();
            for (std::uint32_t i = 0; i < count; ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "gen_%04u.pgm", i);
                write_pgm((dir / name).string(), result.samples[i].maps.back(), h, w,
                          params.config.schedule.vocab);
            }
        }
        out << "generated " << count << " pyramids (d=" << d << ", N=" << n << ") -> "
            << shard_path << "\n";
        return kExitOk;
    });
}

struct AnalyzeOptions {
    std::uint32_t full_depth = 30;
    std::vector<std::uint32_t> depths = {2, 4, 8, 16, 30};
    std::vector<std::uint32_t> bridge_counts = {6, 7, 8, 9, 10};
    std::string schedule_preset = "var256";
    std::uint32_t width = 1920;
    std::string csv_path;  // empty: CSV to stdout
};

// Emits the configuration-space cost sweep and the selection nesting audit.
inline int cmd_analyze(const AnalyzeOptions& opts, std::ostream& out, std::ostream& err) {
    return detail::run_guarded(err, [&]() {
        const ScaleSchedule sched = ScaleSchedule::preset(opts.schedule_preset, 4096);
        const auto rows = sweep(opts.full_depth, opts.depths, opts.bridge_counts, sched, opts.width);
        const std::string csv = sweep_csv(rows);
        if (opts.csv_path.empty()) {
            out << csv;
        } else {
            detail::ensure_parent_dir(opts.csv_path);
            std::ofstream f(opts.csv_path, std::ios::trunc);
            if (!f) throw io_error("cannot open for writing: " + opts.csv_path);
            f << csv;
            out << "sweep -> " << opts.csv_path << "\n";
        }

        out << "\nnesting audit (D=" << opts.full_depth << ")\n";
        for (const auto& v : nesting_report(opts.full_depth, opts.depths)) {
            out << "I_" << v.d_small << " within I_" << v.d_large << ": ";
            if (v.nested) {
                out << "nested\n";
            } else {
                out << "NOT nested (witness layer " << *v.witness << ")\n";
            }
        }
        return kExitOk;
    });
}

// Runs the property suite; any failure exits 1.
inline int cmd_verify(const VerifyOptions& opts, std::ostream& out, std::ostream& err) {
    return detail::run_guarded(err, [&]() {
        bool all_pass = true;
        for (const VerifyCheck& c : run_verification(opts)) {
            char line[160];
            std::snprintf(line, sizeof(line), "[%s] %-24s measured=%.3e threshold=%.0e\n",
                          c.pass ? "PASS" : "FAIL", c.name.c_str(), c.measured, c.threshold);
            out << line;
            all_pass = all_pass && c.pass;
        }
        out << (all_pass ? "verification passed\n" : "verification FAILED\n");
        return all_pass ? kExitOk : kExitVerifyFailed;
    });
}

}  // namespace scalevar
