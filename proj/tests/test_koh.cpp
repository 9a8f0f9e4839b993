#include <cmath>
#include <random>

#include "doctest.h"
#include "oscal/bank.hpp"
#include "oscal/errors.hpp"
#include "oscal/koh.hpp"
#include "oscal/sim.hpp"

using namespace oscal;

namespace {

struct DenseInstance {
    oss::SurrogateBank bank;
    gp::KernelHyperparams phi_b;
};

Eigen::MatrixXd random_unit(Eigen::Index n, Eigen::Index d,
                            std::mt19937_64& eng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = unif(eng);
    return X;
}

Eigen::VectorXd random_gauss(Eigen::Index n, std::mt19937_64& eng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = g(eng);
    return y;
}

gp::KernelHyperparams random_hp(Eigen::Index d, std::mt19937_64& eng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    gp::KernelHyperparams hp;
    hp.tau2 = 0.5 + 1.5 * unif(eng);
    hp.theta = Eigen::VectorXd::Zero(d);
    for (Eigen::Index j = 0; j < d; ++j) hp.theta(j) = 0.1 + 0.9 * unif(eng);
    hp.eta = 1e-4 + 1e-2 * unif(eng);
    return hp;
}

// A synthetic bank with arbitrary (not simulator-derived) data, suitable
// for exact dense-oracle comparisons.
DenseInstance random_instance(Eigen::Index n_f, Eigen::Index p_u,
                              std::mt19937_64& eng,
                              Eigen::Index n_lo = 3, Eigen::Index n_hi = 8) {
    std::uniform_int_distribution<Eigen::Index> pick_n(n_lo, n_hi);
    DenseInstance inst;
    inst.bank.field.X = random_unit(n_f, 1, eng);
    inst.bank.field.y = random_gauss(n_f, eng);
    inst.bank.p_u = p_u;
    for (Eigen::Index i = 0; i < n_f; ++i) {
        oss::SiteSurrogate site;
        const Eigen::Index n_i = pick_n(eng);
        site.U = random_unit(n_i, p_u, eng);
        site.y = random_gauss(n_i, eng);
        site.fit = gp::condition(site.U, site.y, random_hp(p_u, eng));
        site.n_requested = n_i;
        inst.bank.sites.push_back(std::move(site));
    }
    inst.phi_b = random_hp(1, eng);
    inst.phi_b.tau2 = 0.2 + 0.3 *
        std::uniform_real_distribution<double>(0.0, 1.0)(eng);
    return inst;
}

// Full covariance of the stacked (y^M_1..y^M_{N_F}, y^F) vector at u.
Eigen::MatrixXd dense_joint_cov(const DenseInstance& inst,
                                const Eigen::VectorXd& u) {
    const auto& bank = inst.bank;
    const Eigen::Index n_f = bank.n_sites();
    Eigen::Index n_m = 0;
    for (const auto& s : bank.sites) n_m += s.U.rows();
    const Eigen::Index n = n_m + n_f;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);

    Eigen::Index off = 0;
    for (Eigen::Index i = 0; i < n_f; ++i) {
        const auto& s = bank.sites[i];
        const auto& hp = s.fit.hp;
        const Eigen::Index n_i = s.U.rows();
        cov.block(off, off, n_i, n_i) =
            hp.tau2 * gp::correlation_matrix(s.U, hp.theta, hp.eta);
        // cross covariance of site i's runs with y^F_i = y^M(x_i, u) + ...
        Eigen::MatrixXd k =
            hp.tau2 * gp::cross_correlation(s.U, u.transpose(), hp.theta);
        cov.block(off, n_m + i, n_i, 1) = k;
        cov.block(n_m + i, off, 1, n_i) = k.transpose();
        cov(n_m + i, n_m + i) += hp.tau2 * (1.0 + hp.eta);
        off += n_i;
    }
    cov.block(n_m, n_m, n_f, n_f) +=
        inst.phi_b.tau2 *
        gp::correlation_matrix(bank.field.X, inst.phi_b.theta, inst.phi_b.eta);
    return cov;
}

Eigen::VectorXd stacked_obs(const oss::SurrogateBank& bank) {
    Eigen::Index n_m = 0;
    for (const auto& s : bank.sites) n_m += s.U.rows();
    Eigen::VectorXd z(n_m + bank.n_sites());
    Eigen::Index off = 0;
    for (const auto& s : bank.sites) {
        z.segment(off, s.y.size()) = s.y;
        off += s.y.size();
    }
    z.tail(bank.n_sites()) = bank.field.y;
    return z;
}

double dense_loglik(const DenseInstance& inst, const Eigen::VectorXd& u) {
    Eigen::MatrixXd cov = dense_joint_cov(inst, u);
    Eigen::VectorXd z = stacked_obs(inst.bank);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    REQUIRE(llt.info() == Eigen::Success);
    const double logdet =
        2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double quad = z.dot(llt.solve(z));
    return -0.5 * logdet - 0.5 * quad -
           0.5 * static_cast<double>(z.size()) * std::log(2.0 * M_PI);
}

}  // namespace

TEST_CASE("sparse joint likelihood equals the dense oracle") {
    std::mt19937_64 eng(101);
    std::uniform_int_distribution<Eigen::Index> pick_nf(2, 4);
    std::uniform_int_distribution<Eigen::Index> pick_pu(1, 2);
    for (int rep = 0; rep < 20; ++rep) {
        DenseInstance inst = random_instance(pick_nf(eng), pick_pu(eng), eng);
        koh::JointPrecompute pre = koh::precompute(inst.bank, inst.phi_b);
        Eigen::VectorXd u = random_unit(1, inst.bank.p_u, eng).row(0);
        const double sparse = koh::joint_loglik(pre, u);
        const double dense = dense_loglik(inst, u);
        CHECK(std::abs(sparse - dense) <= 1e-8 * std::max(1.0, std::abs(dense)));
    }
}

TEST_CASE("precompute log-determinants match the block diagonal") {
    std::mt19937_64 eng(113);
    DenseInstance inst = random_instance(3, 2, eng, 5, 5);
    koh::JointPrecompute pre = koh::precompute(inst.bank, inst.phi_b);
    double dense = 0.0, quad = 0.0;
    for (const auto& s : inst.bank.sites) {
        Eigen::MatrixXd V = s.fit.hp.tau2 * gp::correlation_matrix(
            s.U, s.fit.hp.theta, s.fit.hp.eta);
        Eigen::LLT<Eigen::MatrixXd> llt(V);
        dense += 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        quad += s.y.dot(llt.solve(s.y));
    }
    CHECK(pre.sum_logdetV == doctest::Approx(dense).epsilon(1e-10));
    CHECK(pre.sum_q == doctest::Approx(quad).epsilon(1e-10));
}

TEST_CASE("likelihood is invariant under site permutation") {
    std::mt19937_64 eng(127);
    DenseInstance inst = random_instance(4, 2, eng);
    koh::JointPrecompute pre = koh::precompute(inst.bank, inst.phi_b);
    Eigen::VectorXd u(2);
    u << 0.35, 0.6;
    const double base = koh::joint_loglik(pre, u);

    DenseInstance perm = inst;
    std::vector<Eigen::Index> order = {2, 0, 3, 1};
    perm.bank.field.X.resize(4, 1);
    perm.bank.field.y.resize(4);
    for (Eigen::Index i = 0; i < 4; ++i) {
        perm.bank.sites[i] = inst.bank.sites[order[i]];
        perm.bank.field.X.row(i) = inst.bank.field.X.row(order[i]);
        perm.bank.field.y(i) = inst.bank.field.y(order[i]);
    }
    koh::JointPrecompute pre2 = koh::precompute(perm.bank, perm.phi_b);
    CHECK(koh::joint_loglik(pre2, u) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("precompute is reused bit-identically across evaluations") {
    std::mt19937_64 eng(131);
    DenseInstance inst = random_instance(3, 1, eng);
    koh::JointPrecompute pre = koh::precompute(inst.bank, inst.phi_b);
    Eigen::VectorXd u1(1), u2(1);
    u1 << 0.3;
    u2 << 0.8;
    const double a1 = koh::joint_loglik(pre, u1);
    (void)koh::joint_loglik(pre, u2);
    CHECK(koh::joint_loglik(pre, u1) == a1);
    // serial and two-thread evaluation agree bitwise (ordered reductions)
    CHECK(koh::joint_loglik(pre, u1, 2) == a1);
}

TEST_CASE("posterior prediction equals the dense conditional oracle") {
    std::mt19937_64 eng(139);
    std::uniform_int_distribution<Eigen::Index> pick_nf(2, 4);
    std::uniform_int_distribution<Eigen::Index> pick_pu(1, 2);
    for (int rep = 0; rep < 20; ++rep) {
        const Eigen::Index p_u = pick_pu(eng);
        DenseInstance train = random_instance(pick_nf(eng), p_u, eng);
        DenseInstance fresh = random_instance(pick_nf(eng), p_u, eng);
        // new sites share the training instance's bias hyperparameters
        fresh.phi_b = train.phi_b;
        const oss::SurrogateBank& nb = fresh.bank;
        const Eigen::Index n_new = nb.n_sites();

        koh::JointPrecompute pre = koh::precompute(train.bank, train.phi_b);
        Eigen::VectorXd u = random_unit(1, p_u, eng).row(0);
        koh::PredictiveDistribution got = koh::posterior_predict(pre, nb, u);

        // Dense oracle over z = (y^M, y^M_new, y^F), target y^F_new.
        Eigen::Index n_m = 0, n_m_new = 0;
        for (const auto& s : train.bank.sites) n_m += s.U.rows();
        for (const auto& s : nb.sites) n_m_new += s.U.rows();
        const Eigen::Index n_f = train.bank.n_sites();
        const Eigen::Index nz = n_m + n_m_new + n_f;

        Eigen::MatrixXd sz = Eigen::MatrixXd::Zero(nz, nz);
        Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(n_new, nz);
        Eigen::MatrixXd st(n_new, n_new);

        // training blocks occupy the same layout as the joint instance
        Eigen::MatrixXd joint = dense_joint_cov(train, u);
        sz.topLeftCorner(n_m, n_m) = joint.topLeftCorner(n_m, n_m);
        sz.block(0, n_m + n_m_new, n_m, n_f) = joint.topRightCorner(n_m, n_f);
        sz.block(n_m + n_m_new, 0, n_f, n_m) = joint.bottomLeftCorner(n_f, n_m);
        sz.block(n_m + n_m_new, n_m + n_m_new, n_f, n_f) =
            joint.bottomRightCorner(n_f, n_f);

        Eigen::Index off = n_m;
        st.setZero();
        for (Eigen::Index i = 0; i < n_new; ++i) {
            const auto& s = nb.sites[i];
            const auto& hp = s.fit.hp;
            const Eigen::Index n_i = s.U.rows();
            sz.block(off, off, n_i, n_i) =
                hp.tau2 * gp::correlation_matrix(s.U, hp.theta, hp.eta);
            Eigen::MatrixXd k =
                hp.tau2 * gp::cross_correlation(s.U, u.transpose(), hp.theta);
            cross.block(i, off, 1, n_i) = k.transpose();
            st(i, i) += hp.tau2 * (1.0 + hp.eta);
            off += n_i;
        }
        st += train.phi_b.tau2 * gp::correlation_matrix(
            nb.field.X, train.phi_b.theta, train.phi_b.eta);
        cross.block(0, n_m + n_m_new, n_new, n_f) =
            train.phi_b.tau2 * gp::cross_correlation(
                nb.field.X, train.bank.field.X, train.phi_b.theta);

        Eigen::VectorXd z(nz);
        Eigen::VectorXd zm = stacked_obs(train.bank);
        Eigen::VectorXd zn = stacked_obs(nb);
        z.head(n_m) = zm.head(n_m);
        z.segment(n_m, n_m_new) = zn.head(n_m_new);
        z.tail(n_f) = zm.tail(n_f);

        Eigen::LLT<Eigen::MatrixXd> llt(sz);
        REQUIRE(llt.info() == Eigen::Success);
        Eigen::VectorXd mean_oracle = cross * llt.solve(z);
        Eigen::MatrixXd cov_oracle = st - cross * llt.solve(cross.transpose());

        for (Eigen::Index i = 0; i < n_new; ++i) {
            CHECK(std::abs(got.mean(i) - mean_oracle(i)) <=
                  1e-8 * std::max(1.0, std::abs(mean_oracle(i))));
            for (Eigen::Index j = 0; j < n_new; ++j)
                CHECK(std::abs(got.cov(i, j) - cov_oracle(i, j)) <=
                      1e-8 * std::max(1.0, std::abs(cov_oracle(i, j))));
        }
        // predicted variance never exceeds the unconditional field variance
        for (Eigen::Index i = 0; i < n_new; ++i)
            CHECK(got.cov(i, i) <= st(i, i) + 1e-10);
    }
}

TEST_CASE("aggregation follows the law of total covariance") {
    koh::PredictiveDistribution a, b;
    a.mean = Eigen::VectorXd::Zero(2);
    a.mean << 1.0, 2.0;
    b.mean = Eigen::VectorXd::Zero(2);
    b.mean << 3.0, 0.0;
    a.cov = Eigen::MatrixXd::Identity(2, 2) * 0.5;
    b.cov = a.cov;

    auto single = koh::aggregate_predictions({a});
    CHECK(single.mean == a.mean);
    CHECK(single.cov == a.cov);

    auto two = koh::aggregate_predictions({a, b});
    // two-point population covariance: outer((m1 - m2)/2)
    Eigen::VectorXd h = (a.mean - b.mean) / 2.0;
    Eigen::MatrixXd expect = a.cov + h * h.transpose();
    CHECK(two.mean(0) == doctest::Approx(2.0));
    CHECK(two.mean(1) == doctest::Approx(1.0));
    for (Eigen::Index i = 0; i < 2; ++i)
        for (Eigen::Index j = 0; j < 2; ++j)
            CHECK(two.cov(i, j) == doctest::Approx(expect(i, j)).epsilon(1e-12));
    for (Eigen::Index i = 0; i < 2; ++i)
        CHECK(two.cov(i, i) >= a.cov(i, i));

    CHECK_THROWS_AS(koh::aggregate_predictions({}), InvalidArgument);
}

TEST_CASE("point-mode LOO is accurate on zero-bias data") {
    // Field responses generated exactly by the surrogates at a known u:
    // every held-out residual is then a pure bias-GP interpolation of
    // (near) zeros.
    std::mt19937_64 eng(149);
    sim::FieldDataset field = sim::gen_field(6, 0.0, 7);
    oss::SurrogateBank bank;
    bank.field = field;
    bank.p_u = 2;
    Eigen::VectorXd u_star(2);
    u_star << 0.8, 0.2;
    for (Eigen::Index i = 0; i < 6; ++i) {
        oss::SiteSurrogate site;
        site.U = random_unit(40, 2, eng);
        site.y.resize(40);
        for (Eigen::Index r = 0; r < 40; ++r)
            site.y(r) = std::sin(3.0 * field.X(i, 0)) + site.U(r, 0) -
                        0.5 * site.U(r, 1);
        gp::FitConfig fc;
        fc.seed = 50 + static_cast<std::uint64_t>(i);
        site.fit = gp::fit_mle(site.U, site.y, fc);
        site.n_requested = 40;
        bank.sites.push_back(std::move(site));
    }
    // field values from the underlying function at u*: residuals are then
    // pure (small, nonzero) emulation error
    for (Eigen::Index i = 0; i < 6; ++i)
        bank.field.y(i) = std::sin(3.0 * field.X(i, 0)) + u_star(0) -
                          0.5 * u_star(1);

    gp::FitConfig bias_fc;
    bias_fc.seed = 99;
    koh::LooReport rep = koh::loo_point(bank, u_star, bias_fc);
    CHECK(rep.rmse <= 1e-2);
    for (Eigen::Index i = 0; i < 6; ++i)
        CHECK(std::abs(rep.residuals(i)) <= 5e-2);
}

TEST_CASE("full-Bayes LOO produces coherent intervals") {
    sim::FieldDataset field = sim::gen_field(5, 0.02, 77);
    sim::ToySimulator simulator;
    oss::BuildConfig bc;
    bc.n_per_site = 60;
    bc.seed = 77;
    bc.fit.seed = 77;
    oss::SurrogateBank bank = oss::build_bank(field, simulator, bc);

    // residual-based bias hyperparameters at the truth
    Eigen::VectorXd u_star(2);
    u_star << 0.8, 0.2;
    Eigen::VectorXd resid(5);
    for (Eigen::Index i = 0; i < 5; ++i)
        resid(i) = field.y(i) - oss::emulate(bank, i, u_star).mean;
    gp::FitConfig fc;
    fc.seed = 5;
    gp::FittedGP bias = gp::fit_mle(field.X, resid, fc);

    Eigen::MatrixXd u_samples(3, 2);
    u_samples << 0.8, 0.2, 0.78, 0.22, 0.82, 0.18;
    koh::LooReport rep = koh::loo_full_bayes(bank, bias.hp, u_samples);
    CHECK(rep.pred_mean.size() == 5);
    CHECK(rep.coverage95 >= 0.0);
    CHECK(rep.coverage95 <= 1.0);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(rep.pred_sd(i) > 0.0);
    CHECK(std::isfinite(rep.rmse));
}

TEST_CASE("LOO needs at least three sites") {
    std::mt19937_64 eng(151);
    DenseInstance inst = random_instance(2, 1, eng);
    Eigen::VectorXd u(1);
    u << 0.5;
    CHECK_THROWS_AS(koh::loo_point(inst.bank, u, {}), InsufficientData);
}
