#ifndef OSCAL_SIM_HPP
#define OSCAL_SIM_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oscal/design.hpp"

namespace oscal::sim {

// Simulator outputs; a missing value means the run failed to converge.
struct SimResult {
    std::vector<std::optional<double>> values;
    Eigen::Index n_requested = 0;
    Eigen::Index n_converged = 0;
};

// Field input sites with observed responses.
struct FieldDataset {
    Eigen::MatrixXd X;   // N_F x p_x
    Eigen::VectorXd y;   // length N_F
    double noise_sd = 0.0;
};

// Underlying smooth response of the toy computer model; throws on the
// (unreachable under interior designs) pole x + u2 == 0.
double toy_model_raw(double x, double u1, double u2);

// Toy computer model with its deterministic missingness rule: the run is
// missing iff u1*u2 > 0.5 and round(5 y*) is even.
std::optional<double> toy_model(double x, double u1, double u2);

// Real process: toy model at the true parameters (0.8, 0.2), bypassing the
// missingness rule, plus the sin(4x) bias.
double true_process(double x);

// Field data: maximin LHS sites in x, responses from the real process plus
// iid Gaussian noise.
FieldDataset gen_field(Eigen::Index n_f, double noise_sd, std::uint64_t seed);

// Joint-input simulator interface: rows of `inputs` span the full
// (x, u) space of dimension input_dim().
class Simulator {
public:
    virtual ~Simulator() = default;
    virtual SimResult run(const Eigen::MatrixXd& inputs) = 0;
    virtual Eigen::Index input_dim() const = 0;
};

// In-process toy simulator over (x, u1, u2).
class ToySimulator : public Simulator {
public:
    SimResult run(const Eigen::MatrixXd& inputs) override;
    Eigen::Index input_dim() const override { return 3; }
};

// External-program adapter. If `command` is set, inputs are written to a
// CSV, the command is invoked as `command <input.csv> <output.csv>`, and
// the response file is parsed back. If instead `response_file` is set, the
// precomputed responses are read directly. A timeout (seconds) kills the
// run and yields MISSING for every row of that invocation.
struct AdapterConfig {
    std::string command;
    std::string workdir = ".";
    double timeout_seconds = 0.0;  // 0 = no timeout
    std::string response_file;
    Eigen::Index input_dim = 0;
};

AdapterConfig adapter_config_from_json(const std::string& text);

class BatchFileSimulator : public Simulator {
public:
    explicit BatchFileSimulator(AdapterConfig config);
    SimResult run(const Eigen::MatrixXd& inputs) override;
    Eigen::Index input_dim() const override { return config_.input_dim; }

private:
    AdapterConfig config_;
    long invocation_ = 0;
};

SimResult batch_simulate(Simulator& adapter, const design::DesignMatrix& inputs);

}  // namespace oscal::sim

#endif
