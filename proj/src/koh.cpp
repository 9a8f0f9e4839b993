#include "oscal/koh.hpp"

#include <cmath>
#include <sstream>

#include "oscal/errors.hpp"
#include "oscal/parallel.hpp"

namespace oscal::koh {

namespace {
constexpr double kPi = 3.14159265358979323846;

std::string format_u(const Eigen::VectorXd& u) {
    std::ostringstream ss;
    ss << "(";
    for (Eigen::Index j = 0; j < u.size(); ++j)
        ss << (j ? ", " : "") << u(j);
    ss << ")";
    return ss.str();
}

// Correlation vector of u against the rows of U (no nugget; a field
// pairing (x_i, u) is never a stored training row).
Eigen::VectorXd corr_vector(const Eigen::MatrixXd& U,
                            const Eigen::VectorXd& theta,
                            const Eigen::VectorXd& u) {
    Eigen::VectorXd k(U.rows());
    for (Eigen::Index r = 0; r < U.rows(); ++r) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < theta.size(); ++j) {
            const double d = u(j) - U(r, j);
            s += d * d / theta(j);
        }
        k(r) = std::exp(-s);
    }
    return k;
}

}  // namespace

JointPrecompute precompute(const oss::SurrogateBank& bank,
                           const gp::KernelHyperparams& phi_b) {
    const Eigen::Index n_f = bank.n_sites();
    if (n_f < 1) throw InvalidArgument("precompute: empty bank");
    if (phi_b.theta.size() != bank.field.X.cols())
        throw InvalidArgument("precompute: phi_b dimensioned for p_x");

    JointPrecompute pre;
    pre.chol_corr.resize(static_cast<std::size_t>(n_f));
    pre.tau2.resize(static_cast<std::size_t>(n_f));
    pre.U.resize(static_cast<std::size_t>(n_f));
    pre.theta.resize(static_cast<std::size_t>(n_f));
    pre.a.resize(static_cast<std::size_t>(n_f));
    pre.logdetV.resize(static_cast<std::size_t>(n_f));
    pre.q.resize(static_cast<std::size_t>(n_f));
    pre.Xf = bank.field.X;
    pre.yF = bank.field.y;
    pre.phi_b = phi_b;

    Eigen::VectorXd v_diag(n_f);
    for (Eigen::Index i = 0; i < n_f; ++i) {
        const auto& s = bank.sites[static_cast<std::size_t>(i)];
        const gp::FittedGP& fit = s.fit;
        const double tau2 = fit.hp.tau2;
        if (!(tau2 > 0.0))
            throw NumericalFailure("precompute: nonpositive scale at site " +
                                   std::to_string(i));
        pre.chol_corr[static_cast<std::size_t>(i)] = fit.chol;
        pre.tau2[static_cast<std::size_t>(i)] = tau2;
        pre.U[static_cast<std::size_t>(i)] = fit.inputs;
        pre.theta[static_cast<std::size_t>(i)] = fit.hp.theta;
        pre.a[static_cast<std::size_t>(i)] = fit.alpha / tau2;
        pre.logdetV[static_cast<std::size_t>(i)] =
            static_cast<double>(fit.n()) * std::log(tau2) + fit.logdet_corr;
        pre.q[static_cast<std::size_t>(i)] = fit.quad / tau2;
        v_diag(i) = tau2 * (1.0 + fit.hp.eta);
        pre.n_m_total += fit.n();
    }
    // sums accumulated in ascending site order
    pre.sum_logdetV = 0.0;
    pre.sum_q = 0.0;
    for (Eigen::Index i = 0; i < n_f; ++i) {
        pre.sum_logdetV += pre.logdetV[static_cast<std::size_t>(i)];
        pre.sum_q += pre.q[static_cast<std::size_t>(i)];
    }

    pre.Vb = phi_b.tau2 *
             gp::correlation_matrix(bank.field.X, phi_b.theta, phi_b.eta);
    pre.Vb.diagonal() += v_diag;
    return pre;
}

UWorkspace u_workspace(const JointPrecompute& pre, const Eigen::VectorXd& u,
                       int threads) {
    const Eigen::Index n_f = pre.n_sites();
    UWorkspace ws;
    ws.d.resize(n_f);
    ws.m.resize(n_f);
    parallel_for(n_f, threads, [&](long i) {
        const auto idx = static_cast<std::size_t>(i);
        Eigen::VectorXd k = corr_vector(pre.U[idx], pre.theta[idx], u);
        // m_i = k' K~^-1 y (tau2 cancels); d_i = tau2 * k' K~^-1 k
        Eigen::VectorXd t =
            pre.chol_corr[idx].triangularView<Eigen::Lower>().solve(k);
        ws.d(i) = pre.tau2[idx] * t.squaredNorm();
        ws.m(i) = pre.tau2[idx] * k.dot(pre.a[idx]);
    });

    Eigen::MatrixXd C = pre.Vb;
    C.diagonal() -= ws.d;
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() != Eigen::Success)
        throw NumericalFailure("C(u) not positive definite at u = " +
                               format_u(u));
    ws.chol_C = llt.matrixL();
    ws.logdetC = 0.0;
    for (Eigen::Index i = 0; i < n_f; ++i)
        ws.logdetC += 2.0 * std::log(ws.chol_C(i, i));
    ws.r = pre.yF - ws.m;
    Eigen::VectorXd t = ws.chol_C.triangularView<Eigen::Lower>().solve(ws.r);
    ws.quad = t.squaredNorm();
    return ws;
}

double joint_loglik(const JointPrecompute& pre, const Eigen::VectorXd& u,
                    int threads) {
    UWorkspace ws = u_workspace(pre, u, threads);
    const double dim = static_cast<double>(pre.n_m_total + pre.n_sites());
    return -0.5 * (pre.sum_logdetV + ws.logdetC) -
           0.5 * (pre.sum_q + ws.quad) - 0.5 * dim * std::log(2.0 * kPi);
}

PredictiveDistribution posterior_predict(const JointPrecompute& pre,
                                         const oss::SurrogateBank& new_bank,
                                         const Eigen::VectorXd& u,
                                         int threads) {
    const Eigen::Index n_new = new_bank.n_sites();
    if (n_new < 1) throw InvalidArgument("posterior_predict: empty new bank");
    UWorkspace ws = u_workspace(pre, u, threads);

    // Cross-bias covariance between new and training field sites.
    Eigen::MatrixXd B =
        pre.phi_b.tau2 *
        gp::cross_correlation(new_bank.field.X, pre.Xf, pre.phi_b.theta);

    // C^-1 r and C^-1 B'
    Eigen::VectorXd cinv_r = ws.r;
    ws.chol_C.triangularView<Eigen::Lower>().solveInPlace(cinv_r);
    ws.chol_C.transpose().triangularView<Eigen::Upper>().solveInPlace(cinv_r);
    Eigen::MatrixXd cinv_Bt = B.transpose();
    ws.chol_C.triangularView<Eigen::Lower>().solveInPlace(cinv_Bt);
    ws.chol_C.transpose().triangularView<Eigen::Upper>().solveInPlace(cinv_Bt);

    // New on-site surrogate terms at u.
    Eigen::VectorXd m_new(n_new), d_new(n_new), v_new(n_new);
    for (Eigen::Index i = 0; i < n_new; ++i) {
        const gp::FittedGP& fit = new_bank.sites[static_cast<std::size_t>(i)].fit;
        Eigen::VectorXd k = corr_vector(fit.inputs, fit.hp.theta, u);
        m_new(i) = k.dot(fit.alpha) + fit.mean_shift;
        Eigen::VectorXd t = fit.chol.triangularView<Eigen::Lower>().solve(k);
        d_new(i) = fit.hp.tau2 * t.squaredNorm();
        v_new(i) = fit.hp.tau2 * (1.0 + fit.hp.eta);
    }

    PredictiveDistribution out;
    out.mean = B * cinv_r + m_new;

    Eigen::MatrixXd Vb_new =
        pre.phi_b.tau2 * gp::correlation_matrix(new_bank.field.X,
                                                pre.phi_b.theta, pre.phi_b.eta);
    Vb_new.diagonal() += v_new;
    out.cov = Vb_new - B * cinv_Bt;
    out.cov.diagonal() -= d_new;

    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    const double floor =
        1e-10 * std::max(1e-300, out.cov.diagonal().maxCoeff());
    for (Eigen::Index i = 0; i < n_new; ++i) {
        if (out.cov(i, i) < 0.0) {
            if (out.cov(i, i) < -floor)
                throw NumericalFailure(
                    "posterior_predict: negative predictive variance beyond "
                    "roundoff at new site " +
                    std::to_string(i));
            out.cov(i, i) = 0.0;
        }
    }
    return out;
}

PredictiveDistribution aggregate_predictions(
    const std::vector<PredictiveDistribution>& preds) {
    if (preds.empty())
        throw InvalidArgument("aggregate_predictions: empty prediction list");
    const Eigen::Index n = preds.front().mean.size();
    for (const auto& p : preds)
        if (p.mean.size() != n || p.cov.rows() != n || p.cov.cols() != n)
            throw InvalidArgument("aggregate_predictions: dimension mismatch");

    const double T = static_cast<double>(preds.size());
    PredictiveDistribution out;
    out.mean = Eigen::VectorXd::Zero(n);
    out.cov = Eigen::MatrixXd::Zero(n, n);
    for (const auto& p : preds) {
        out.mean += p.mean;
        out.cov += p.cov;
    }
    out.mean /= T;
    out.cov /= T;
    // law of total covariance: add the covariance of the means
    for (const auto& p : preds) {
        Eigen::VectorXd dm = p.mean - out.mean;
        out.cov += (dm * dm.transpose()) / T;
    }
    return out;
}

LooReport loo_point(const oss::SurrogateBank& bank, const Eigen::VectorXd& u_hat,
                    const gp::FitConfig& bias_fit, int threads) {
    const Eigen::Index n_f = bank.n_sites();
    if (n_f < 3)
        throw InsufficientData("loo_point: need at least 3 field sites");

    Eigen::VectorXd surrogate_mean(n_f);
    for (Eigen::Index i = 0; i < n_f; ++i)
        surrogate_mean(i) = emulate(bank, i, u_hat).mean;
    Eigen::VectorXd resid = bank.field.y - surrogate_mean;

    LooReport report;
    report.pred_mean.resize(n_f);
    report.pred_sd = Eigen::VectorXd::Zero(n_f);
    parallel_for(n_f, threads, [&](long i) {
        const Eigen::Index p_x = bank.field.X.cols();
        Eigen::MatrixXd X_rest(n_f - 1, p_x);
        Eigen::VectorXd r_rest(n_f - 1);
        Eigen::Index k = 0;
        for (Eigen::Index j = 0; j < n_f; ++j) {
            if (j == i) continue;
            X_rest.row(k) = bank.field.X.row(j);
            r_rest(k) = resid(j);
            ++k;
        }
        gp::FittedGP bias = gp::fit_mle(X_rest, r_rest, bias_fit);
        Eigen::VectorXd bm, bv;
        gp::predict(bias, bank.field.X.row(i), bm, bv);
        report.pred_mean(i) = surrogate_mean(i) + bm(0);
    });
    report.residuals = bank.field.y - report.pred_mean;
    report.rmse = std::sqrt(report.residuals.squaredNorm() /
                            static_cast<double>(n_f));
    return report;
}

LooReport loo_full_bayes(const oss::SurrogateBank& bank,
                         const gp::KernelHyperparams& phi_b,
                         const Eigen::MatrixXd& u_samples, int threads) {
    const Eigen::Index n_f = bank.n_sites();
    if (n_f < 3)
        throw InsufficientData("loo_full_bayes: need at least 3 field sites");
    if (u_samples.rows() < 1)
        throw InvalidArgument("loo_full_bayes: need at least one u sample");

    LooReport report;
    report.pred_mean.resize(n_f);
    report.pred_sd.resize(n_f);
    parallel_for(n_f, threads, [&](long i) {
        oss::SurrogateBank rest;
        rest.p_u = bank.p_u;
        rest.field.noise_sd = bank.field.noise_sd;
        rest.field.X.resize(n_f - 1, bank.field.X.cols());
        rest.field.y.resize(n_f - 1);
        Eigen::Index k = 0;
        for (Eigen::Index j = 0; j < n_f; ++j) {
            if (j == i) continue;
            rest.field.X.row(k) = bank.field.X.row(j);
            rest.field.y(k) = bank.field.y(j);
            rest.sites.push_back(bank.sites[static_cast<std::size_t>(j)]);
            ++k;
        }
        // held-out site reuses its training design and fit
        oss::SurrogateBank held;
        held.p_u = bank.p_u;
        held.field.X = bank.field.X.row(i);
        held.field.y = bank.field.y.segment(i, 1);
        held.sites.push_back(bank.sites[static_cast<std::size_t>(i)]);

        JointPrecompute pre = precompute(rest, phi_b);
        std::vector<PredictiveDistribution> preds;
        preds.reserve(static_cast<std::size_t>(u_samples.rows()));
        for (Eigen::Index t = 0; t < u_samples.rows(); ++t)
            preds.push_back(
                posterior_predict(pre, held, u_samples.row(t).transpose()));
        PredictiveDistribution agg = aggregate_predictions(preds);
        report.pred_mean(i) = agg.mean(0);
        report.pred_sd(i) = std::sqrt(std::max(0.0, agg.cov(0, 0)));
    });
    report.residuals = bank.field.y - report.pred_mean;
    report.rmse = std::sqrt(report.residuals.squaredNorm() /
                            static_cast<double>(n_f));
    Eigen::Index inside = 0;
    for (Eigen::Index i = 0; i < n_f; ++i)
        if (std::abs(report.residuals(i)) <= 1.96 * report.pred_sd(i)) ++inside;
    report.coverage95 = static_cast<double>(inside) / static_cast<double>(n_f);
    return report;
}

}  // namespace oscal::koh
