#include <cmath>
#include <random>

#include "doctest.h"
#include "oscal/design.hpp"
#include "oscal/errors.hpp"
#include "oscal/gp.hpp"

using namespace oscal;

namespace {

Eigen::MatrixXd random_inputs(Eigen::Index n, Eigen::Index d,
                              std::mt19937_64& eng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = unif(eng);
    return X;
}

Eigen::VectorXd random_outputs(Eigen::Index n, std::mt19937_64& eng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = gauss(eng);
    return y;
}

}  // namespace

TEST_CASE("kernel value basics") {
    gp::KernelHyperparams hp;
    hp.tau2 = 2.0;
    hp.theta = Eigen::VectorXd::Constant(2, 0.5);
    hp.eta = 0.1;
    Eigen::VectorXd u(2), v(2);
    u << 0.3, 0.7;
    v = u;
    CHECK(gp::kernel_value(u, v, true, hp) == doctest::Approx(2.2));
    CHECK(gp::kernel_value(u, v, false, hp) == doctest::Approx(2.0));
    v << 40.0, -40.0;
    CHECK(gp::kernel_value(u, v, false, hp) == doctest::Approx(0.0));
    Eigen::VectorXd w(3);
    CHECK_THROWS_AS(gp::kernel_value(u, w, false, hp), InvalidArgument);
}

TEST_CASE("concentrated likelihood n=1 closed form") {
    Eigen::MatrixXd X(1, 1);
    X << 0.5;
    Eigen::VectorXd y(1);
    y << 1.7;
    Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 0.3);
    auto lik = gp::log_marginal_likelihood(theta, gp::kEtaMin, X, y, false);
    // K~ = 1 + eta_min: to this tolerance, tau2 = y^2 and
    // l = -(1/2) log(y^2) - (1/2) log(2 pi) - 1/2
    const double expect =
        -0.5 * std::log(1.7 * 1.7) - 0.5 * std::log(2.0 * M_PI) - 0.5;
    CHECK(lik.loglik == doctest::Approx(expect).epsilon(1e-6));
    CHECK(lik.tau2_hat == doctest::Approx(1.7 * 1.7).epsilon(1e-6));
}

TEST_CASE("likelihood is invariant under joint row permutation") {
    std::mt19937_64 eng(5);
    Eigen::MatrixXd X = random_inputs(15, 2, eng);
    Eigen::VectorXd y = random_outputs(15, eng);
    Eigen::VectorXd theta = Eigen::VectorXd::Constant(2, 0.4);
    auto base = gp::log_marginal_likelihood(theta, 1e-4, X, y, false);

    Eigen::PermutationMatrix<Eigen::Dynamic> perm(15);
    perm.setIdentity();
    std::shuffle(perm.indices().data(), perm.indices().data() + 15, eng);
    Eigen::MatrixXd Xp = perm * X;
    Eigen::VectorXd yp = perm * y;
    auto permuted = gp::log_marginal_likelihood(theta, 1e-4, Xp, yp, false);
    CHECK(permuted.loglik == doctest::Approx(base.loglik).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central finite differences") {
    // 50 random instances, step 1e-5 in the log parameters.
    std::mt19937_64 eng(17);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double h = 1e-5;
    for (int rep = 0; rep < 50; ++rep) {
        const Eigen::Index n = 10 + static_cast<Eigen::Index>(unif(eng) * 11);
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(unif(eng) * 2);
        Eigen::MatrixXd X = random_inputs(n, d, eng);
        Eigen::VectorXd y = random_outputs(n, eng);
        Eigen::VectorXd theta(d);
        for (Eigen::Index j = 0; j < d; ++j)
            theta(j) = std::exp(-2.5 + 2.0 * unif(eng));
        const double eta = std::exp(-6.0 + 3.0 * unif(eng));

        auto lik = gp::log_marginal_likelihood(theta, eta, X, y, true);
        REQUIRE(lik.grad.size() == d + 1);
        for (Eigen::Index k = 0; k <= d; ++k) {
            auto eval = [&](double shift) {
                Eigen::VectorXd th = theta;
                double et = eta;
                if (k < d)
                    th(k) = std::exp(std::log(theta(k)) + shift);
                else
                    et = std::exp(std::log(eta) + shift);
                return gp::log_marginal_likelihood(th, et, X, y, false).loglik;
            };
            const double fd = (eval(h) - eval(-h)) / (2.0 * h);
            const double scale = std::max({std::abs(fd), std::abs(lik.grad(k)), 1e-8});
            CHECK(std::abs(lik.grad(k) - fd) / scale <= 1e-4);
        }
    }
}

TEST_CASE("predict matches the dense conditional-MVN oracle") {
    std::mt19937_64 eng(23);
    Eigen::MatrixXd X = random_inputs(10, 2, eng);
    Eigen::VectorXd y = random_outputs(10, eng);
    gp::KernelHyperparams hp;
    hp.tau2 = 1.3;
    hp.theta = Eigen::VectorXd::Constant(2, 0.25);
    hp.eta = 1e-3;
    gp::FittedGP fit = gp::condition(X, y, hp);

    Eigen::MatrixXd Xt = random_inputs(7, 2, eng);
    Eigen::VectorXd mean, var;
    gp::predict(fit, Xt, mean, var);

    // Dense oracle: assemble the full covariance and take the conditional.
    Eigen::MatrixXd K =
        hp.tau2 * gp::correlation_matrix(X, hp.theta, hp.eta);
    Eigen::MatrixXd Kx = hp.tau2 * gp::cross_correlation(Xt, X, hp.theta);
    Eigen::MatrixXd Kinv = K.inverse();
    Eigen::VectorXd mean_oracle = Kx * Kinv * y;
    for (Eigen::Index i = 0; i < 7; ++i) {
        const double var_oracle =
            hp.tau2 * (1.0 + hp.eta) -
            (Kx.row(i) * Kinv * Kx.row(i).transpose())(0, 0);
        CHECK(mean(i) == doctest::Approx(mean_oracle(i)).epsilon(1e-10));
        CHECK(var(i) == doctest::Approx(var_oracle).epsilon(1e-10));
        CHECK(var(i) >= 0.0);
    }
}

TEST_CASE("prediction interpolates at training points with the floor nugget") {
    std::mt19937_64 eng(31);
    Eigen::MatrixXd X(12, 1);
    X.col(0).setLinSpaced(12, 0.04, 0.96);
    Eigen::VectorXd y = random_outputs(12, eng);
    gp::KernelHyperparams hp;
    hp.tau2 = 1.0;
    // well-separated points and a short lengthscale keep the kernel matrix
    // well conditioned so the floor nugget really interpolates
    hp.theta = Eigen::VectorXd::Constant(1, 0.005);
    hp.eta = gp::kEtaMin;
    gp::FittedGP fit = gp::condition(X, y, hp);
    Eigen::VectorXd mean, var;
    gp::predict(fit, X, mean, var);
    for (Eigen::Index i = 0; i < 12; ++i)
        CHECK(mean(i) ==
              doctest::Approx(y(i)).epsilon(1e-6));
}

TEST_CASE("prediction reverts to the prior far from the data") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Constant(5, 1, 0.5);
    X.col(0).setLinSpaced(5, 0.1, 0.9);
    Eigen::VectorXd y(5);
    y << 1.0, -1.0, 0.5, 0.2, -0.7;
    gp::KernelHyperparams hp;
    hp.tau2 = 2.5;
    hp.theta = Eigen::VectorXd::Constant(1, 0.01);
    hp.eta = 1e-4;
    gp::FittedGP fit = gp::condition(X, y, hp);
    Eigen::MatrixXd Xt(1, 1);
    Xt << 100.0;
    Eigen::VectorXd mean, var;
    gp::predict(fit, Xt, mean, var);
    CHECK(mean(0) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var(0) == doctest::Approx(hp.tau2 * (1.0 + hp.eta)).epsilon(1e-10));
}

TEST_CASE("mle recovers a known lengthscale") {
    // Data drawn from a GP with theta* = 0.2, near-noiseless; the fitted
    // log-lengthscale should land within +-0.5 of the truth on >= 18/20 seeds.
    const double theta_true = 0.2;
    int ok = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 eng(seed * 7919);
        Eigen::MatrixXd X = design::lhs(200, 1, seed).points;
        Eigen::MatrixXd K = gp::correlation_matrix(
            X, Eigen::VectorXd::Constant(1, theta_true), 1e-6);
        Eigen::LLT<Eigen::MatrixXd> llt(K);
        REQUIRE(llt.info() == Eigen::Success);
        Eigen::VectorXd z = random_outputs(200, eng);
        Eigen::VectorXd y = llt.matrixL() * z;

        gp::FitConfig cfg;
        cfg.seed = seed;
        gp::FittedGP fit = gp::fit_mle(X, y, cfg);
        if (std::abs(std::log(fit.hp.theta(0)) - std::log(theta_true)) <= 0.5)
            ++ok;
    }
    CHECK(ok >= 18);
}

TEST_CASE("more restarts never hurt") {
    std::mt19937_64 eng(41);
    Eigen::MatrixXd X = random_inputs(40, 2, eng);
    Eigen::VectorXd y = random_outputs(40, eng);
    gp::FitConfig one;
    one.restarts = 1;
    one.seed = 3;
    gp::FitConfig five;
    five.restarts = 5;
    five.seed = 3;
    CHECK(gp::fit_mle(X, y, five).loglik >= gp::fit_mle(X, y, one).loglik);
}

TEST_CASE("constant outputs fit and predict near the constant") {
    Eigen::MatrixXd X = design::lhs(30, 1, 2).points;
    const double c = 3.0;
    Eigen::VectorXd y = Eigen::VectorXd::Constant(30, c);
    gp::FitConfig cfg;
    cfg.seed = 1;
    gp::FittedGP fit = gp::fit_mle(X, y, cfg);
    Eigen::MatrixXd Xt(3, 1);
    Xt << 0.25, 0.5, 0.75;
    Eigen::VectorXd mean, var;
    gp::predict(fit, Xt, mean, var);
    for (Eigen::Index i = 0; i < 3; ++i)
        CHECK(std::abs(mean(i) - c) <= std::abs(c) * 1e-2);
}

TEST_CASE("fit_mle rejects n < 2 and is deterministic") {
    Eigen::MatrixXd X(1, 1);
    X << 0.5;
    Eigen::VectorXd y(1);
    y << 1.0;
    CHECK_THROWS_AS(gp::fit_mle(X, y, {}), InsufficientData);

    std::mt19937_64 eng(43);
    Eigen::MatrixXd X2 = random_inputs(25, 2, eng);
    Eigen::VectorXd y2 = random_outputs(25, eng);
    gp::FitConfig cfg;
    cfg.seed = 11;
    auto a = gp::fit_mle(X2, y2, cfg);
    auto b = gp::fit_mle(X2, y2, cfg);
    CHECK(a.hp.tau2 == b.hp.tau2);
    CHECK(a.hp.theta == b.hp.theta);
    CHECK(a.hp.eta == b.hp.eta);
}

TEST_CASE("correlation matrix is positive definite at the nugget floor") {
    std::mt19937_64 eng(53);
    Eigen::MatrixXd X = random_inputs(30, 2, eng);
    Eigen::MatrixXd K = gp::correlation_matrix(
        X, Eigen::VectorXd::Constant(2, 0.5), gp::kEtaMin);
    CHECK((K - K.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("hyperparameter json round trip") {
    std::mt19937_64 eng(61);
    Eigen::MatrixXd X = random_inputs(12, 2, eng);
    Eigen::VectorXd y = random_outputs(12, eng);
    gp::FitConfig cfg;
    cfg.seed = 5;
    gp::FittedGP fit = gp::fit_mle(X, y, cfg);
    auto hp = gp::hyperparams_from_json(gp::hyperparams_to_json(fit));
    CHECK(hp.tau2 == fit.hp.tau2);
    CHECK(hp.theta == fit.hp.theta);
    CHECK(hp.eta == fit.hp.eta);
}
