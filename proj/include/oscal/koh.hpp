#ifndef OSCAL_KOH_HPP
#define OSCAL_KOH_HPP

#include <Eigen/Dense>
#include <vector>

#include "oscal/bank.hpp"
#include "oscal/gp.hpp"

namespace oscal::koh {

// Everything in the joint likelihood that does not depend on u: per-site
// factorizations and solves, plus the dense field-side block
// Vb = Diag[tau_i^2 (1 + eta_i)] + K_b(X^F). Immutable once built; safe to
// share across threads.
struct JointPrecompute {
    // per site i
    std::vector<Eigen::MatrixXd> chol_corr;  // lower factor of K~_i
    std::vector<double> tau2;                // site scale
    std::vector<Eigen::MatrixXd> U;          // on-site design
    std::vector<Eigen::VectorXd> theta;      // site lengthscales
    std::vector<Eigen::VectorXd> a;          // V_i^-1 y_i
    std::vector<double> logdetV;             // log|V_i|
    std::vector<double> q;                   // y_i' V_i^-1 y_i

    Eigen::MatrixXd Vb;       // N_F x N_F field-side covariance
    Eigen::MatrixXd Xf;       // field sites
    Eigen::VectorXd yF;       // field responses
    gp::KernelHyperparams phi_b;

    double sum_logdetV = 0.0;
    double sum_q = 0.0;
    Eigen::Index n_m_total = 0;

    Eigen::Index n_sites() const {
        return static_cast<Eigen::Index>(chol_corr.size());
    }
};

JointPrecompute precompute(const oss::SurrogateBank& bank,
                           const gp::KernelHyperparams& phi_b);

// u-dependent workspace: per-site cross-covariances and the Schur
// complement C(u) = Vb - Diag[d_i(u)].
struct UWorkspace {
    Eigen::VectorXd d;        // V_i(u)' V_i^-1 V_i(u) per site
    Eigen::VectorXd m;        // V_i(u)' a_i per site (surrogate means)
    Eigen::VectorXd r;        // y^F - m
    Eigen::MatrixXd chol_C;   // lower factor of C(u)
    double logdetC = 0.0;
    double quad = 0.0;        // r' C^-1 r
};

UWorkspace u_workspace(const JointPrecompute& pre, const Eigen::VectorXd& u,
                       int threads = 1);

// Joint MVN log-likelihood of (y^M, y^F) via the partitioned decomposition;
// algebraically equal to the dense form, certified by the oracle tests.
double joint_loglik(const JointPrecompute& pre, const Eigen::VectorXd& u,
                    int threads = 1);

struct PredictiveDistribution {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

// Conditional of y^F at the new bank's sites given training simulations,
// field data, and the new on-site simulations, at a fixed u.
PredictiveDistribution posterior_predict(const JointPrecompute& pre,
                                         const oss::SurrogateBank& new_bank,
                                         const Eigen::VectorXd& u,
                                         int threads = 1);

// Mixture moments over posterior samples: mean of means, mean of
// covariances plus the (population) covariance of the means.
PredictiveDistribution aggregate_predictions(
    const std::vector<PredictiveDistribution>& preds);

struct LooReport {
    Eigen::VectorXd pred_mean;
    Eigen::VectorXd pred_sd;      // zero in point mode
    Eigen::VectorXd residuals;
    double rmse = 0.0;
    double coverage95 = -1.0;     // fraction of sites inside the 95% interval
};

// Point-estimate LOO: for each held-out site, refit the bias GP to the
// remaining residuals at u_hat and predict the held-out field value.
LooReport loo_point(const oss::SurrogateBank& bank, const Eigen::VectorXd& u_hat,
                    const gp::FitConfig& bias_fit, int threads = 0);

// Full-Bayes LOO: condition on all-but-i through posterior_predict,
// aggregating over posterior samples of u. Reuses each site's training
// design and fit as the "new" surrogate.
LooReport loo_full_bayes(const oss::SurrogateBank& bank,
                         const gp::KernelHyperparams& phi_b,
                         const Eigen::MatrixXd& u_samples, int threads = 0);

}  // namespace oscal::koh

#endif
