// Batch front door: parse a JSON config, dispatch the requested command, and
// write reports and plot data into the output directory.
//
// Exit codes: 0 success, 1 config error, 2 model contract violation,
// 3 equilibrium solve did not converge (reports are still written),
// 4 internal error.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mfgweak/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Mean field game solver (weak formulation)"};

    std::string config_path;
    std::string output_dir;
    std::int64_t seed = -1;
    int threads = 0;
    bool selftest = false;

    app.add_option("--config", config_path, "Path to the JSON run configuration");
    app.add_option("--output", output_dir, "Output directory (overrides the config)");
    app.add_option("--seed", seed, "Seed override (nonnegative integer)");
    app.add_option("--threads", threads, "Worker thread count (0 = hardware)");
    app.add_flag("--selftest", selftest, "Run the built-in smoke checks and exit");

    CLI11_PARSE(app, argc, argv);

    if (selftest) {
        if (threads > 0) mfgweak::set_thread_count(threads);
        return mfgweak::runner::run_selftest(std::cout);
    }
    if (config_path.empty()) {
        std::cerr << "error: --config is required (or use --selftest)\n";
        return mfgweak::runner::kConfigError;
    }
    return mfgweak::runner::run_file(config_path, std::cout, output_dir, seed, threads);
}
