// Command-line front end: data generation, training, decoding, cost
// analysis and self-verification over one flat config format.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scalevar/commands.hpp"

namespace {

std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& sets) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const std::string& s : sets) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw scalevar::config_error("--set expects key=value, got '" + s + "'");
        }
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"supernet next-scale generation engine"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;

    auto add_config_opts = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "flat key=value config file");
        cmd->add_option("--set", sets, "override a config key (key=value, repeatable)");
    };

    CLI::App* gen_data = app.add_subcommand("gen-data", "write train/val token-pyramid shards");
    add_config_opts(gen_data);

    CLI::App* train = app.add_subcommand("train", "run progressive supernet training");
    add_config_opts(train);

    CLI::App* generate = app.add_subcommand("generate", "decode pyramids from a checkpoint");
    add_config_opts(generate);
    std::string ckpt;
    std::uint32_t opt_d = 0, opt_n = 0, opt_count = 0, opt_class = 0;
    std::uint64_t opt_seed = 0;
    CLI::Option* o_ckpt = generate->add_option("--checkpoint", ckpt, "checkpoint file");
    CLI::Option* o_d = generate->add_option("--d", opt_d, "subnet depth for this run");
    CLI::Option* o_n = generate->add_option("--N", opt_n, "bridge-zone scale count");
    CLI::Option* o_count = generate->add_option("--count", opt_count, "number of pyramids");
    CLI::Option* o_seed = generate->add_option("--seed", opt_seed, "sampling seed");
    CLI::Option* o_class = generate->add_option("--class", opt_class, "fixed class label");

    CLI::App* analyze = app.add_subcommand("analyze", "cost sweep and nesting audit");
    scalevar::AnalyzeOptions an;
    analyze->add_option("--D", an.full_depth, "full depth");
    analyze->add_option("--depths", an.depths, "subnet depths")->delimiter(',');
    analyze->add_option("--Ns", an.bridge_counts, "bridge-zone sizes")->delimiter(',');
    analyze->add_option("--schedule", an.schedule_preset, "schedule preset (toy|var256)");
    analyze->add_option("--width", an.width, "model width for FLOPs");
    analyze->add_option("--csv", an.csv_path, "write the sweep CSV here instead of stdout");

    CLI::App* verify = app.add_subcommand("verify", "run the property suite");
    scalevar::VerifyOptions vo;
    verify->add_flag("--inject-mask-fault", vo.inject_mask_fault,
                     "corrupt the reference mask (expected to fail; test hook)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return scalevar::kExitConfigError;
    }

    try {
        const auto overrides = parse_overrides(sets);
        if (gen_data->parsed() || train->parsed() || generate->parsed()) {
            scalevar::RunConfig cfg = scalevar::RunConfig::load(config_path, overrides);
            if (gen_data->parsed()) return scalevar::cmd_gen_data(cfg, std::cout, std::cerr);
            if (train->parsed()) return scalevar::cmd_train(cfg, std::cout, std::cerr);
            scalevar::GenerateOptions go;
            if (o_ckpt->count()) go.checkpoint = ckpt;
            if (o_d->count()) go.subnet_depth = opt_d;
            if (o_n->count()) go.bridge_scales = opt_n;
            if (o_count->count()) go.count = opt_count;
            if (o_seed->count()) go.seed = opt_seed;
            if (o_class->count()) go.class_label = opt_class;
            return scalevar::cmd_generate(cfg, go, std::cout, std::cerr);
        }
        if (analyze->parsed()) return scalevar::cmd_analyze(an, std::cout, std::cerr);
        return scalevar::cmd_verify(vo, std::cout, std::cerr);
    } catch (const scalevar::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return scalevar::kExitConfigError;
    } catch (const scalevar::io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return scalevar::kExitIoError;
    }
}
