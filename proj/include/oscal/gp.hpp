#ifndef OSCAL_GP_HPP
#define OSCAL_GP_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace oscal::gp {

// Nugget floor; Cholesky failures escalate diagonal jitter up to kJitterMax
// before reporting a numerical failure.
constexpr double kEtaMin = 1e-8;
constexpr double kJitterMax = 1e-2;

// Scaled, nugget-augmented separable Gaussian kernel
//   k(u, v) = tau2 * [ exp(-sum_k (u_k - v_k)^2 / theta_k) + delta * eta ]
// where delta keys on index identity, not coincident values.
struct KernelHyperparams {
    double tau2 = 1.0;
    Eigen::VectorXd theta;  // one positive lengthscale per input dimension
    double eta = kEtaMin;
};

double kernel_value(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                    bool same_index, const KernelHyperparams& hp);

// Correlation-plus-nugget matrix K~ = exp-distance part + eta * I.
Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& theta, double eta);

// Cross-correlation (no nugget): rows of A against rows of B.
Eigen::MatrixXd cross_correlation(const Eigen::MatrixXd& A,
                                  const Eigen::MatrixXd& B,
                                  const Eigen::VectorXd& theta);

struct ConcentratedLik {
    double loglik = 0.0;        // concentrated log marginal likelihood
    Eigen::VectorXd grad;       // d/dlog(theta_1..theta_d), d/dlog(eta)
    double tau2_hat = 0.0;      // profiled scale y' K~^-1 y / n
};

// tau2 is profiled out analytically; gradient is with respect to the log
// parameters. Throws NumericalFailure if K~ cannot be factorized even
// after jitter escalation.
ConcentratedLik log_marginal_likelihood(const Eigen::VectorXd& theta,
                                        double eta, const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& y,
                                        bool want_grad = true);

struct Bounds {
    Eigen::VectorXd lo;  // over (log theta_1..d, log eta)
    Eigen::VectorXd hi;
};

// Inputs coded to [0,1]: log theta in [log 1e-4, log 10],
// log eta in [log eta_min, log 1].
Bounds default_bounds(Eigen::Index d);

struct FitConfig {
    Bounds bounds;          // empty lo/hi means default_bounds(d)
    int restarts = 5;
    std::uint64_t seed = 0;
    int max_iters = 200;
    bool center = false;    // optional output centering, off by default
};

struct FittedGP {
    KernelHyperparams hp;
    Eigen::MatrixXd inputs;    // n x d
    Eigen::VectorXd outputs;   // length n (as fitted; centered if requested)
    double mean_shift = 0.0;   // subtracted from outputs when center = true
    Eigen::MatrixXd chol;      // lower factor of K~ (+ any jitter applied)
    Eigen::VectorXd alpha;     // K~^-1 y
    double logdet_corr = 0.0;  // log|K~|
    double logdet = 0.0;       // log|K| = n log tau2 + log|K~|
    double loglik = 0.0;
    double quad = 0.0;         // y' K~^-1 y

    Eigen::Index n() const { return inputs.rows(); }
    Eigen::Index d() const { return inputs.cols(); }
};

// Builds the cached factorization for given hyperparameters without any
// optimization. Used internally by fit_mle and directly by tests.
FittedGP condition(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   const KernelHyperparams& hp);

// Bounded quasi-Newton ascent of the concentrated likelihood from
// `restarts` starts: first at the bounds midpoint, the rest LHS-sampled in
// log-parameter space. Deterministic in (X, y, config).
FittedGP fit_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                 const FitConfig& config = {});

// Zero-mean GP conditional; test points never get same-index nugget
// treatment. Variances are clamped at zero.
void predict(const FittedGP& gp, const Eigen::MatrixXd& Xtest,
             Eigen::VectorXd& mean, Eigen::VectorXd& var);

std::string hyperparams_to_json(const FittedGP& gp);
KernelHyperparams hyperparams_from_json(const std::string& text);

// Cholesky with jitter escalation (x10 from 1e-10 up to kJitterMax added
// to the diagonal). Returns the lower factor; reports the jitter used.
Eigen::MatrixXd robust_cholesky(Eigen::MatrixXd A, double* jitter_used,
                                const std::string& what);

}  // namespace oscal::gp

#endif
