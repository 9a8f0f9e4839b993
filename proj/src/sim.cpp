#include "oscal/sim.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>

#include <sys/wait.h>

#include <json.hpp>

#include "oscal/errors.hpp"
#include "oscal/io.hpp"
#include "oscal/rng.hpp"

namespace oscal::sim {

double toy_model_raw(double x, double u1, double u2) {
    const double denom = x + u2;
    if (denom == 0.0)
        throw InvalidArgument("toy_model: division by zero at x + u2 == 0");
    return std::cos(25.0 * std::sin(x) * x * u1 / denom);
}

std::optional<double> toy_model(double x, double u1, double u2) {
    const double y = toy_model_raw(x, u1, u2);
    if (u1 * u2 > 0.5) {
        // llround rounds half away from zero; ties have measure zero here.
        const long long r = std::llround(5.0 * y);
        if (r % 2 == 0) return std::nullopt;
    }
    return y;
}

double true_process(double x) {
    return toy_model_raw(x, 0.8, 0.2) + std::sin(4.0 * x);
}

FieldDataset gen_field(Eigen::Index n_f, double noise_sd, std::uint64_t seed) {
    if (n_f < 1) throw InvalidArgument("gen_field: N_F must be >= 1");
    FieldDataset field;
    if (n_f == 1) {
        design::DesignMatrix dm = design::lhs(1, 1, seed);
        field.X = dm.points;
    } else {
        design::DesignMatrix dm = design::maximin_lhs(n_f, 1, seed);
        field.X = dm.points;
    }
    field.noise_sd = noise_sd;
    field.y.resize(n_f);
    auto eng = rng::engine(rng::derive(seed, 0xF1E1D));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (Eigen::Index i = 0; i < n_f; ++i)
        field.y(i) = true_process(field.X(i, 0)) + noise_sd * noise(eng);
    return field;
}

SimResult ToySimulator::run(const Eigen::MatrixXd& inputs) {
    if (inputs.rows() > 0 && inputs.cols() != 3)
        throw InvalidArgument("ToySimulator: expected 3 input columns");
    SimResult out;
    out.n_requested = inputs.rows();
    out.values.reserve(static_cast<std::size_t>(inputs.rows()));
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        auto v = toy_model(inputs(i, 0), inputs(i, 1), inputs(i, 2));
        if (v) ++out.n_converged;
        out.values.push_back(v);
    }
    return out;
}

AdapterConfig adapter_config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    AdapterConfig cfg;
    cfg.command = j.value("command", std::string{});
    cfg.workdir = j.value("workdir", std::string{"."});
    cfg.timeout_seconds = j.value("timeout_seconds", 0.0);
    cfg.response_file = j.value("response_file", std::string{});
    cfg.input_dim = j.value("input_dim", 0);
    return cfg;
}

BatchFileSimulator::BatchFileSimulator(AdapterConfig config)
    : config_(std::move(config)) {
    if (config_.command.empty() && config_.response_file.empty())
        throw ConfigError(
            "adapter needs either a command or a precomputed response file");
}

SimResult BatchFileSimulator::run(const Eigen::MatrixXd& inputs) {
    SimResult out;
    out.n_requested = inputs.rows();
    if (inputs.rows() == 0) return out;

    std::vector<std::optional<double>> values;
    if (!config_.command.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(config_.workdir);
        const long tag = invocation_++;
        const std::string in_path =
            (fs::path(config_.workdir) / ("sim_in_" + std::to_string(tag) + ".csv"))
                .string();
        const std::string out_path =
            (fs::path(config_.workdir) /
             ("sim_out_" + std::to_string(tag) + ".csv"))
                .string();
        io::write_matrix_csv(in_path, inputs);
        std::error_code ec;
        fs::remove(out_path, ec);

        std::string cmd = config_.command + " '" + in_path + "' '" + out_path + "'";
        if (config_.timeout_seconds > 0.0)
            cmd = "timeout " + io::format_double(config_.timeout_seconds) + " " + cmd;
        const int rc = std::system(cmd.c_str());
        const int status = WEXITSTATUS(rc);
        if (config_.timeout_seconds > 0.0 && status == 124) {
            // timeout expiry: every row of this invocation is missing
            out.values.assign(static_cast<std::size_t>(inputs.rows()),
                              std::nullopt);
            return out;
        }
        if (rc == -1 || status != 0)
            throw SimulatorFailure("simulator command failed (exit " +
                                   std::to_string(status) + "): " + cmd);
        values = io::read_response_csv(out_path);
    } else {
        values = io::read_response_csv(config_.response_file);
    }

    if (static_cast<Eigen::Index>(values.size()) != inputs.rows())
        throw ProtocolError("simulator returned " +
                            std::to_string(values.size()) + " rows, expected " +
                            std::to_string(inputs.rows()));
    out.values = std::move(values);
    for (const auto& v : out.values)
        if (v) ++out.n_converged;
    return out;
}

SimResult batch_simulate(Simulator& adapter, const design::DesignMatrix& inputs) {
    return adapter.run(inputs.points);
}

}  // namespace oscal::sim
