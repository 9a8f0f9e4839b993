#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "oscal/cli.hpp"
#include "oscal/errors.hpp"
#include "oscal/io.hpp"

using nlohmann::json;

int main(int argc, char** argv) {
    CLI::App app{"oscal: on-site surrogate calibration toolkit"};
    app.require_subcommand(1);

    std::string config_path, store = "store";
    std::int64_t seed = -1;
    int threads = -1;
    std::vector<std::string> overrides;

    const std::vector<std::string> commands = {
        "toy-e2e",       "design",  "simulate", "fit",
        "calibrate-opt", "calibrate-mcmc", "predict", "loo"};
    std::string chosen;
    for (const auto& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed, "override config seed");
        sub->add_option("--threads", threads, "override worker count");
        sub->add_option("--store", store, "run store root directory");
        sub->add_option("--set", overrides,
                        "key=value config overrides (JSON values)");
        sub->callback([&chosen, name]() { chosen = name; });
    }

    CLI11_PARSE(app, argc, argv);

    json config = json::object();
    try {
        if (!config_path.empty())
            config = json::parse(oscal::io::read_text_file(config_path));
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return oscal::cli::kExitConfig;
    }
    if (!config.is_object()) {
        std::cerr << "config error: top-level config must be a JSON object\n";
        return oscal::cli::kExitConfig;
    }
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::cerr << "config error: --set expects key=value, got " << kv
                      << "\n";
            return oscal::cli::kExitConfig;
        }
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        json parsed = json::parse(val, nullptr, false);
        if (parsed.is_discarded()) parsed = val;  // bare strings allowed
        config[key] = parsed;
    }
    if (seed >= 0) config["seed"] = static_cast<std::uint64_t>(seed);
    if (threads >= 0) config["threads"] = threads;

    return oscal::cli::run_command(chosen, config, store);
}
