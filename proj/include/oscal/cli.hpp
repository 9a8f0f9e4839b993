#ifndef OSCAL_CLI_HPP
#define OSCAL_CLI_HPP

#include <string>

#include "json.hpp"

namespace oscal::cli {

// Exit codes shared by every command.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitUpstream = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitSimulator = 5;

// FNV-1a over the canonical dump of the effective config.
std::string config_hash(const nlohmann::json& config);

// Store layout: <store>/<command>-<hash8>/ holding config.json,
// manifest.json, and the command's artifacts. A lock file guards the run
// directory; identical reruns are detected through the recorded hash.
struct RunDir {
    std::string path;
    bool rerun = false;  // a completed run with this config hash already exists
};

RunDir prepare_run_dir(const std::string& store, const std::string& command,
                       const nlohmann::json& effective_config);

// Command entry points. Each takes the effective (post-override) config and
// the store root, writes artifacts into its run directory, and returns the
// run directory path.
std::string cmd_toy_e2e(const nlohmann::json& config, const std::string& store);
std::string cmd_design(const nlohmann::json& config, const std::string& store);
std::string cmd_simulate(const nlohmann::json& config, const std::string& store);
std::string cmd_fit(const nlohmann::json& config, const std::string& store);
std::string cmd_calibrate_opt(const nlohmann::json& config,
                              const std::string& store);
std::string cmd_calibrate_mcmc(const nlohmann::json& config,
                               const std::string& store);
std::string cmd_predict(const nlohmann::json& config, const std::string& store);
std::string cmd_loo(const nlohmann::json& config, const std::string& store);

// Maps toolkit exceptions to the exit codes above; used by the CLI main and
// by tests that drive commands in-process.
int run_command(const std::string& command, const nlohmann::json& config,
                const std::string& store, std::string* run_dir_out = nullptr);

}  // namespace oscal::cli

#endif
