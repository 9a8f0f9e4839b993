#ifndef OSCAL_CALIB_HPP
#define OSCAL_CALIB_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "oscal/bank.hpp"
#include "oscal/gp.hpp"

namespace oscal::calib {

enum class PriorKind { kUniform, kBeta };

struct PriorSpec {
    PriorKind kind = PriorKind::kUniform;
    double alpha = 2.0;
    double beta = 2.0;
};

// log p(u); -inf outside the unit cube.
double log_prior(const PriorSpec& prior, const Eigen::VectorXd& u);

// Per-site evaluator: simulator-backed evaluators may return missing.
using SiteEvaluator =
    std::function<std::optional<double>(Eigen::Index site, const Eigen::VectorXd& u)>;

SiteEvaluator bank_evaluator(const oss::SurrogateBank& bank);

struct NlsResult {
    Eigen::VectorXd u_hat;
    double rmse = 0.0;
    bool converged = false;
};

struct NlsConfig {
    double missing_threshold = 0.1;  // abort the attempt above this rate
    double big_residual = 100.0;     // imputed below the threshold
    int max_iters = 400;
};

// Bounded derivative-free local minimization of mean squared residual.
// Missingness above the threshold raises MissingnessError so the caller
// can restart elsewhere.
NlsResult nls_calibrate(const SiteEvaluator& evaluator,
                        const sim::FieldDataset& field,
                        const Eigen::VectorXd& u0, const NlsConfig& config = {});

struct ModularResult {
    Eigen::VectorXd u_hat;
    double log_score = 0.0;  // log p(u) + bias-GP concentrated loglik
    gp::KernelHyperparams phi_b;
    double bias_loglik = 0.0;
};

// Residuals at u, bias GP fit by MLE, score = log prior + marginal loglik.
ModularResult modular_objective(const Eigen::VectorXd& u,
                                const oss::SurrogateBank& bank,
                                const PriorSpec& prior,
                                const gp::FitConfig& bias_fit);

// Local maximizations of the modular objective from LHS-sampled starts,
// returned ranked by log_score (best first).
std::vector<ModularResult> modular_optimize(const oss::SurrogateBank& bank,
                                            const PriorSpec& prior, int restarts,
                                            std::uint64_t seed,
                                            const gp::FitConfig& bias_fit,
                                            int threads = 0);

using LogLikFn = std::function<double(const Eigen::VectorXd&)>;

struct McmcConfig {
    Eigen::VectorXd sigma;      // per-coordinate proposal sds
    long n_sweeps = 10000;      // retained states, one per full sweep
    Eigen::VectorXd u_init;
    std::uint64_t seed = 0;
    bool pilot_tune = false;    // adapt sigma before the retained chain
    long pilot_sweeps = 2000;
};

// Reference proposal scales documented for the p_u = 4 application.
Eigen::VectorXd default_proposal_sigma(Eigen::Index p_u);

struct PosteriorChain {
    Eigen::MatrixXd samples;        // T x p_u
    Eigen::VectorXd logpost;        // length T
    Eigen::VectorXi accept_counts;  // per coordinate
    long proposals_per_coord = 0;
    Eigen::VectorXd sigma;          // scales actually used (post-pilot)
    Eigen::VectorXd u_init;
    std::uint64_t seed = 0;
};

// Metropolis-within-Gibbs with marginal Gaussian random-walk proposals;
// out-of-cube proposals are rejected through the prior support. One state
// retained per full sweep.
PosteriorChain mcmc(const LogLikFn& loglik, const PriorSpec& prior,
                    const McmcConfig& config);

struct EssResult {
    Eigen::VectorXd ess;
    std::vector<bool> degenerate;  // constant-coordinate flag
};

// ESS_j = T / (1 + 2 sum rho_k), autocorrelations summed until the first
// nonpositive one.
EssResult ess(const Eigen::MatrixXd& samples);

// Sample with maximal recorded log posterior; earliest index on ties.
Eigen::VectorXd map_extract(const PosteriorChain& chain);

// Default burn-in: first 20% of retained sweeps.
PosteriorChain discard_burn_in(const PosteriorChain& chain, double frac = 0.2);

}  // namespace oscal::calib

#endif
