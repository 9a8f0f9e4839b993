#include "oscal/gp.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oscal/design.hpp"
#include "oscal/errors.hpp"
#include "oscal/rng.hpp"

namespace oscal::gp {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double kernel_value(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                    bool same_index, const KernelHyperparams& hp) {
    if (u.size() != hp.theta.size() || v.size() != hp.theta.size())
        throw InvalidArgument("kernel_value: dimension mismatch");
    double s = 0.0;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
        const double dk = u(k) - v(k);
        s += dk * dk / hp.theta(k);
    }
    double corr = std::exp(-s);
    if (same_index) corr += hp.eta;
    return hp.tau2 * corr;
}

Eigen::MatrixXd cross_correlation(const Eigen::MatrixXd& A,
                                  const Eigen::MatrixXd& B,
                                  const Eigen::VectorXd& theta) {
    if (A.cols() != theta.size() || B.cols() != theta.size())
        throw InvalidArgument("cross_correlation: dimension mismatch");
    Eigen::MatrixXd out(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < B.rows(); ++j) {
            double s = 0.0;
            for (Eigen::Index k = 0; k < theta.size(); ++k) {
                const double dk = A(i, k) - B(j, k);
                s += dk * dk / theta(k);
            }
            out(i, j) = std::exp(-s);
        }
    return out;
}

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& theta, double eta) {
    const Eigen::Index n = X.rows();
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        K(i, i) = 1.0 + eta;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (Eigen::Index k = 0; k < theta.size(); ++k) {
                const double dk = X(i, k) - X(j, k);
                s += dk * dk / theta(k);
            }
            K(i, j) = K(j, i) = std::exp(-s);
        }
    }
    return K;
}

Eigen::MatrixXd robust_cholesky(Eigen::MatrixXd A, double* jitter_used,
                                const std::string& what) {
    double jitter = 0.0;
    for (;;) {
        Eigen::LLT<Eigen::MatrixXd> llt(A);
        if (llt.info() == Eigen::Success) {
            if (jitter_used) *jitter_used = jitter;
            return llt.matrixL();
        }
        const double next = (jitter == 0.0) ? 1e-10 : jitter * 10.0;
        if (next > kJitterMax)
            throw NumericalFailure("Cholesky failed for " + what +
                                       " after jitter escalation to " +
                                       std::to_string(jitter),
                                   jitter);
        A.diagonal().array() += next - jitter;
        jitter = next;
    }
}

ConcentratedLik log_marginal_likelihood(const Eigen::VectorXd& theta,
                                        double eta, const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& y,
                                        bool want_grad) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    if (n < 1) throw InsufficientData("log_marginal_likelihood: empty data");
    if (y.size() != n)
        throw InvalidArgument("log_marginal_likelihood: X/y size mismatch");
    if (theta.size() != d)
        throw InvalidArgument("log_marginal_likelihood: theta size mismatch");

    Eigen::MatrixXd K = correlation_matrix(X, theta, eta);
    double jitter = 0.0;
    Eigen::MatrixXd L = robust_cholesky(K, &jitter, "correlation matrix");

    Eigen::VectorXd alpha =
        L.triangularView<Eigen::Lower>().solve(y);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(L(i, i));
    L.transpose().triangularView<Eigen::Upper>().solveInPlace(alpha);

    const double S = y.dot(alpha);
    if (!(S > 0.0) || !std::isfinite(S))
        throw NumericalFailure("nonpositive quadratic form in likelihood");

    const double nd = static_cast<double>(n);
    ConcentratedLik out;
    out.tau2_hat = S / nd;
    out.loglik = -0.5 * nd * std::log(S) + 0.5 * nd * std::log(nd) -
                 0.5 * logdet - 0.5 * nd * std::log(2.0 * kPi) - 0.5 * nd;

    if (want_grad) {
        // W = K~^-1 - (n/S) alpha alpha'; dl/dpsi = -0.5 tr(W dK/dpsi)
        Eigen::MatrixXd Kinv = Eigen::MatrixXd::Identity(n, n);
        L.triangularView<Eigen::Lower>().solveInPlace(Kinv);
        L.transpose().triangularView<Eigen::Upper>().solveInPlace(Kinv);
        Eigen::MatrixXd W = Kinv - (nd / S) * (alpha * alpha.transpose());

        out.grad.resize(d + 1);
        for (Eigen::Index k = 0; k < d; ++k) {
            // dK/dlog theta_k = C o D_k / theta_k (exp part only)
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = i + 1; j < n; ++j) {
                    const double dk = X(i, k) - X(j, k);
                    // K holds eta only on the diagonal, so off-diagonals
                    // are the pure correlation part.
                    acc += W(i, j) * K(i, j) * dk * dk;
                }
            out.grad(k) = -acc / theta(k);  // -0.5 * 2 * acc / theta_k
        }
        // dK/dlog eta = eta I
        out.grad(d) = -0.5 * eta * W.trace();
    }
    return out;
}

Bounds default_bounds(Eigen::Index d) {
    Bounds b;
    b.lo.resize(d + 1);
    b.hi.resize(d + 1);
    for (Eigen::Index k = 0; k < d; ++k) {
        b.lo(k) = std::log(1e-4);
        b.hi(k) = std::log(10.0);
    }
    b.lo(d) = std::log(kEtaMin);
    b.hi(d) = 0.0;  // log 1
    return b;
}

FittedGP condition(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   const KernelHyperparams& hp) {
    if (hp.theta.size() != X.cols())
        throw InvalidArgument("condition: theta size mismatch");
    const Eigen::Index n = X.rows();
    FittedGP gp;
    gp.hp = hp;
    gp.hp.eta = std::max(hp.eta, kEtaMin);
    gp.inputs = X;
    gp.outputs = y;

    Eigen::MatrixXd K = correlation_matrix(X, gp.hp.theta, gp.hp.eta);
    double jitter = 0.0;
    gp.chol = robust_cholesky(std::move(K), &jitter, "training covariance");
    gp.alpha = gp.chol.triangularView<Eigen::Lower>().solve(y);
    gp.logdet_corr = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        gp.logdet_corr += 2.0 * std::log(gp.chol(i, i));
    gp.chol.transpose().triangularView<Eigen::Upper>().solveInPlace(gp.alpha);
    gp.quad = y.dot(gp.alpha);
    gp.logdet = static_cast<double>(n) * std::log(gp.hp.tau2) + gp.logdet_corr;

    const double nd = static_cast<double>(n);
    if (gp.quad > 0.0)
        gp.loglik = -0.5 * nd * std::log(gp.quad) + 0.5 * nd * std::log(nd) -
                    0.5 * gp.logdet_corr - 0.5 * nd * std::log(2.0 * kPi) -
                    0.5 * nd;
    else
        gp.loglik = -std::numeric_limits<double>::infinity();
    return gp;
}

namespace {

Eigen::VectorXd clip_to_box(Eigen::VectorXd x, const Bounds& b) {
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x(i) = std::min(b.hi(i), std::max(b.lo(i), x(i)));
    return x;
}

struct EvalResult {
    double f;  // negative concentrated loglik
    Eigen::VectorXd g;
    double tau2;
};

std::optional<EvalResult> evaluate(const Eigen::VectorXd& psi,
                                   const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& y) {
    const Eigen::Index d = X.cols();
    Eigen::VectorXd theta = psi.head(d).array().exp();
    const double eta = std::exp(psi(d));
    try {
        ConcentratedLik lik = log_marginal_likelihood(theta, eta, X, y, true);
        if (!std::isfinite(lik.loglik)) return std::nullopt;
        return EvalResult{-lik.loglik, -lik.grad, lik.tau2_hat};
    } catch (const NumericalFailure&) {
        return std::nullopt;
    }
}

// Projected limited-memory BFGS with Armijo backtracking. Minimizes f over
// the box; good enough for the small, smooth problems fit_mle poses.
struct LocalOptimum {
    Eigen::VectorXd psi;
    double f;
    double tau2;
    bool ok;
};

LocalOptimum minimize_box(Eigen::VectorXd x, const Bounds& bounds,
                          const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          int max_iters) {
    constexpr int kMemory = 8;
    constexpr double kArmijo = 1e-4;
    x = clip_to_box(std::move(x), bounds);
    auto ev = evaluate(x, X, y);
    if (!ev) return {x, std::numeric_limits<double>::infinity(), 0.0, false};
    double f = ev->f;
    Eigen::VectorXd g = ev->g;
    double tau2 = ev->tau2;

    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> mem;  // (s, y)
    for (int iter = 0; iter < max_iters; ++iter) {
        Eigen::VectorXd pg = x - clip_to_box(x - g, bounds);
        if (pg.lpNorm<Eigen::Infinity>() < 1e-7) break;

        // Two-loop recursion for the quasi-Newton direction.
        Eigen::VectorXd q = g;
        std::vector<double> a(mem.size());
        for (std::size_t i = mem.size(); i-- > 0;) {
            const auto& [s, yv] = mem[i];
            const double rho = 1.0 / s.dot(yv);
            a[i] = rho * s.dot(q);
            q -= a[i] * yv;
        }
        if (!mem.empty()) {
            const auto& [s, yv] = mem.back();
            q *= s.dot(yv) / yv.dot(yv);
        }
        for (std::size_t i = 0; i < mem.size(); ++i) {
            const auto& [s, yv] = mem[i];
            const double rho = 1.0 / s.dot(yv);
            const double b = rho * yv.dot(q);
            q += (a[i] - b) * s;
        }
        Eigen::VectorXd dir = -q;
        if (dir.dot(g) > -1e-12 * dir.norm() * g.norm()) dir = -g;

        bool accepted = false;
        Eigen::VectorXd xn;
        std::optional<EvalResult> en;
        double step = mem.empty() ? std::min(1.0, 1.0 / std::max(1.0, g.norm()))
                                  : 1.0;
        for (int bt = 0; bt < 40; ++bt) {
            xn = clip_to_box(x + step * dir, bounds);
            Eigen::VectorXd dx = xn - x;
            if (dx.lpNorm<Eigen::Infinity>() < 1e-14) break;
            en = evaluate(xn, X, y);
            if (en && en->f <= f + kArmijo * g.dot(dx)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (!mem.empty()) {
                mem.clear();
                continue;  // retry from steepest descent
            }
            break;
        }
        Eigen::VectorXd s = xn - x;
        Eigen::VectorXd yv = en->g - g;
        if (s.dot(yv) > 1e-10 * s.norm() * yv.norm()) {
            mem.emplace_back(std::move(s), std::move(yv));
            if (mem.size() > kMemory) mem.pop_front();
        }
        x = std::move(xn);
        f = en->f;
        g = en->g;
        tau2 = en->tau2;
    }
    return {x, f, tau2, true};
}

}  // namespace

FittedGP fit_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                 const FitConfig& config) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    if (n < 2)
        throw InsufficientData("fit_mle: need at least 2 observations, got " +
                               std::to_string(n));
    if (y.size() != n) throw InvalidArgument("fit_mle: X/y size mismatch");
    if (config.restarts < 1)
        throw InvalidArgument("fit_mle: restarts must be >= 1");

    Bounds bounds = config.bounds;
    if (bounds.lo.size() == 0) bounds = default_bounds(d);
    if (bounds.lo.size() != d + 1 || bounds.hi.size() != d + 1)
        throw InvalidArgument("fit_mle: bounds must cover log theta and log eta");

    Eigen::VectorXd yfit = y;
    double shift = 0.0;
    if (config.center) {
        shift = y.mean();
        yfit.array() -= shift;
    }

    std::vector<Eigen::VectorXd> starts;
    starts.push_back(0.5 * (bounds.lo + bounds.hi));
    if (config.restarts > 1) {
        design::DesignMatrix extra = design::lhs(
            config.restarts - 1, d + 1, rng::derive(config.seed, 0xF17));
        for (Eigen::Index r = 0; r < extra.points.rows(); ++r) {
            Eigen::VectorXd s(d + 1);
            for (Eigen::Index k = 0; k <= d; ++k)
                s(k) = bounds.lo(k) +
                       extra.points(r, k) * (bounds.hi(k) - bounds.lo(k));
            starts.push_back(std::move(s));
        }
    }

    bool any_ok = false;
    LocalOptimum best;
    best.f = std::numeric_limits<double>::infinity();
    for (const auto& s : starts) {
        LocalOptimum opt = minimize_box(s, bounds, X, yfit, config.max_iters);
        if (opt.ok && opt.f < best.f) {
            best = opt;
            any_ok = true;
        }
    }
    if (!any_ok)
        throw NumericalFailure("fit_mle: all restarts failed numerically");

    KernelHyperparams hp;
    hp.theta = best.psi.head(d).array().exp();
    hp.eta = std::max(std::exp(best.psi(d)), kEtaMin);
    hp.tau2 = best.tau2;
    FittedGP gp = condition(X, yfit, hp);
    gp.mean_shift = shift;
    return gp;
}

void predict(const FittedGP& gp, const Eigen::MatrixXd& Xtest,
             Eigen::VectorXd& mean, Eigen::VectorXd& var) {
    if (Xtest.cols() != gp.d())
        throw InvalidArgument("predict: test dimension mismatch");
    Eigen::MatrixXd Kx = cross_correlation(Xtest, gp.inputs, gp.hp.theta);
    mean = Kx * gp.alpha;
    mean.array() += gp.mean_shift;

    // v_i = tau2 [ (1 + eta) - k_i' K~^-1 k_i ]
    Eigen::MatrixXd sol = gp.chol.triangularView<Eigen::Lower>().solve(
        Eigen::MatrixXd(Kx.transpose()));
    var.resize(Xtest.rows());
    for (Eigen::Index i = 0; i < Xtest.rows(); ++i) {
        double v = gp.hp.tau2 * (1.0 + gp.hp.eta - sol.col(i).squaredNorm());
        var(i) = std::max(0.0, v);
    }
}

std::string hyperparams_to_json(const FittedGP& gp) {
    nlohmann::json j;
    j["tau2"] = gp.hp.tau2;
    j["theta"] = std::vector<double>(gp.hp.theta.data(),
                                     gp.hp.theta.data() + gp.hp.theta.size());
    j["eta"] = gp.hp.eta;
    j["n"] = gp.n();
    j["d"] = gp.d();
    j["loglik"] = gp.loglik;
    return j.dump(2);
}

KernelHyperparams hyperparams_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    KernelHyperparams hp;
    hp.tau2 = j.at("tau2").get<double>();
    auto th = j.at("theta").get<std::vector<double>>();
    hp.theta = Eigen::Map<Eigen::VectorXd>(th.data(),
                                           static_cast<Eigen::Index>(th.size()));
    hp.eta = j.at("eta").get<double>();
    return hp;
}

}  // namespace oscal::gp
