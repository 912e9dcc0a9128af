// dpaat - command-line front end.
//
//   dpaat <command> --config <path> [--set section.key=value]... --out <dir>
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <dpaat/pipeline.hpp>

int main(int argc, char** argv) {
    CLI::App app{"Adversarial training laboratory: STD, AT, SAT, AMAT and DPAAT"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    for (const char* name : dpaat::kCommands) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config file")->check(CLI::ExistingFile);
        sub->add_option("--set", overrides, "override, e.g. --set train.method=AT")->take_all();
        sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 1;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    dpaat::ExperimentConfig cfg;
    try {
        cfg = config_path.empty() ? dpaat::parse_config_text("", "<defaults>", overrides)
                                  : dpaat::parse_config(config_path, overrides);
    } catch (const dpaat::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (cfg.out_dir.empty()) {
        std::cerr << "usage error: no output directory (pass --out or set output.dir)\n";
        return 1;
    }

    try {
        dpaat::run_command(command, cfg, cfg.out_dir, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << command << " failed: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
