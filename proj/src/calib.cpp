#include "oscal/calib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "oscal/errors.hpp"
#include "oscal/parallel.hpp"
#include "oscal/rng.hpp"

namespace oscal::calib {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool in_unit_cube(const Eigen::VectorXd& u) {
    for (Eigen::Index j = 0; j < u.size(); ++j)
        if (!(u(j) >= 0.0 && u(j) <= 1.0)) return false;
    return true;
}

// Bounded Nelder-Mead minimization; vertices are clipped to the box.
// Objective may return +inf to reject a point.
struct NmResult {
    Eigen::VectorXd x;
    double f = std::numeric_limits<double>::infinity();
    bool converged = false;
};

Eigen::VectorXd clip01(Eigen::VectorXd x) {
    for (Eigen::Index j = 0; j < x.size(); ++j)
        x(j) = std::min(1.0, std::max(0.0, x(j)));
    return x;
}

NmResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                     const Eigen::VectorXd& x0, double step, int max_iters,
                     double ftol = 1e-10, double xtol = 1e-8) {
    const Eigen::Index d = x0.size();
    const auto nd = static_cast<std::size_t>(d);
    std::vector<Eigen::VectorXd> xs(nd + 1);
    std::vector<double> fs(nd + 1);
    xs[0] = clip01(x0);
    fs[0] = f(xs[0]);
    for (Eigen::Index j = 0; j < d; ++j) {
        Eigen::VectorXd v = xs[0];
        v(j) += (v(j) + step <= 1.0) ? step : -step;
        xs[static_cast<std::size_t>(j) + 1] = clip01(v);
        fs[static_cast<std::size_t>(j) + 1] = f(xs[static_cast<std::size_t>(j) + 1]);
    }

    auto order = [&]() {
        std::vector<std::size_t> idx(nd + 1);
        for (std::size_t i = 0; i <= nd; ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
        std::vector<Eigen::VectorXd> nxs(nd + 1);
        std::vector<double> nfs(nd + 1);
        for (std::size_t i = 0; i <= nd; ++i) {
            nxs[i] = xs[idx[i]];
            nfs[i] = fs[idx[i]];
        }
        xs = std::move(nxs);
        fs = std::move(nfs);
    };

    NmResult res;
    for (int it = 0; it < max_iters; ++it) {
        order();
        double spread = 0.0;
        for (std::size_t i = 1; i <= nd; ++i)
            spread = std::max(spread, (xs[i] - xs[0]).lpNorm<Eigen::Infinity>());
        if ((std::isfinite(fs[0]) && std::isfinite(fs[nd]) &&
             fs[nd] - fs[0] < ftol && spread < xtol)) {
            res.converged = true;
            break;
        }
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
        for (std::size_t i = 0; i < nd; ++i) centroid += xs[i];
        centroid /= static_cast<double>(d);

        Eigen::VectorXd xr = clip01(centroid + (centroid - xs[nd]));
        double fr = f(xr);
        if (fr < fs[0]) {
            Eigen::VectorXd xe = clip01(centroid + 2.0 * (centroid - xs[nd]));
            double fe = f(xe);
            if (fe < fr) {
                xs[nd] = xe;
                fs[nd] = fe;
            } else {
                xs[nd] = xr;
                fs[nd] = fr;
            }
        } else if (fr < fs[nd - 1]) {
            xs[nd] = xr;
            fs[nd] = fr;
        } else {
            Eigen::VectorXd xc = clip01(centroid + 0.5 * (xs[nd] - centroid));
            double fc = f(xc);
            if (fc < fs[nd]) {
                xs[nd] = xc;
                fs[nd] = fc;
            } else {
                for (std::size_t i = 1; i <= nd; ++i) {
                    xs[i] = clip01(xs[0] + 0.5 * (xs[i] - xs[0]));
                    fs[i] = f(xs[i]);
                }
            }
        }
    }
    order();
    res.x = xs[0];
    res.f = fs[0];
    return res;
}

}  // namespace

double log_prior(const PriorSpec& prior, const Eigen::VectorXd& u) {
    if (!in_unit_cube(u)) return kNegInf;
    if (prior.kind == PriorKind::kUniform) return 0.0;
    const double a = prior.alpha, b = prior.beta;
    const double log_beta_fn =
        std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    double lp = 0.0;
    for (Eigen::Index j = 0; j < u.size(); ++j) {
        if (u(j) <= 0.0 || u(j) >= 1.0) {
            if ((u(j) == 0.0 && a > 1.0) || (u(j) == 1.0 && b > 1.0))
                return kNegInf;
        }
        lp += (a - 1.0) * std::log(u(j)) + (b - 1.0) * std::log1p(-u(j)) -
              log_beta_fn;
    }
    return lp;
}

SiteEvaluator bank_evaluator(const oss::SurrogateBank& bank) {
    return [&bank](Eigen::Index site,
                   const Eigen::VectorXd& u) -> std::optional<double> {
        return oss::emulate(bank, site, u).mean;
    };
}

NlsResult nls_calibrate(const SiteEvaluator& evaluator,
                        const sim::FieldDataset& field,
                        const Eigen::VectorXd& u0, const NlsConfig& config) {
    if (!in_unit_cube(u0))
        throw InvalidArgument("nls_calibrate: u0 must be inside the unit cube");
    if (!(config.big_residual > 0.0))
        throw InvalidArgument("nls_calibrate: big_residual must be positive");
    const Eigen::Index n_f = field.X.rows();

    auto objective = [&](const Eigen::VectorXd& u) {
        Eigen::Index missing = 0;
        double sum_sq = 0.0;
        for (Eigen::Index i = 0; i < n_f; ++i) {
            auto v = evaluator(i, u);
            double r;
            if (v) {
                r = field.y(i) - *v;
            } else {
                ++missing;
                r = config.big_residual;
            }
            sum_sq += r * r;
        }
        const double rate =
            static_cast<double>(missing) / static_cast<double>(n_f);
        if (rate > config.missing_threshold)
            throw MissingnessError("nls_calibrate: missingness rate " +
                                   std::to_string(rate) + " above threshold");
        return sum_sq / static_cast<double>(n_f);
    };

    NmResult nm = nelder_mead(objective, u0, 0.1, config.max_iters);
    NlsResult out;
    out.u_hat = nm.x;
    out.rmse = std::sqrt(nm.f);
    out.converged = nm.converged;
    return out;
}

ModularResult modular_objective(const Eigen::VectorXd& u,
                                const oss::SurrogateBank& bank,
                                const PriorSpec& prior,
                                const gp::FitConfig& bias_fit) {
    if (u.size() != bank.p_u)
        throw InvalidArgument("modular_objective: u dimension mismatch");
    const Eigen::Index n_f = bank.n_sites();
    Eigen::VectorXd resid(n_f);
    for (Eigen::Index i = 0; i < n_f; ++i)
        resid(i) = bank.field.y(i) - oss::emulate(bank, i, u).mean;

    gp::FittedGP bias = gp::fit_mle(bank.field.X, resid, bias_fit);
    ModularResult out;
    out.u_hat = u;
    out.phi_b = bias.hp;
    out.bias_loglik = bias.loglik;
    out.log_score = log_prior(prior, u) + bias.loglik;
    return out;
}

std::vector<ModularResult> modular_optimize(const oss::SurrogateBank& bank,
                                            const PriorSpec& prior, int restarts,
                                            std::uint64_t seed,
                                            const gp::FitConfig& bias_fit,
                                            int threads) {
    if (restarts < 1)
        throw InvalidArgument("modular_optimize: restarts must be >= 1");
    design::DesignMatrix starts =
        design::lhs(restarts, bank.p_u, rng::derive(seed, 0x0B7));

    std::vector<std::optional<ModularResult>> results(
        static_cast<std::size_t>(restarts));
    parallel_for(restarts, threads, [&](long r) {
        auto objective = [&](const Eigen::VectorXd& u) {
            try {
                ModularResult m = modular_objective(u, bank, prior, bias_fit);
                return std::isfinite(m.log_score)
                           ? -m.log_score
                           : std::numeric_limits<double>::infinity();
            } catch (const NumericalFailure&) {
                return std::numeric_limits<double>::infinity();
            }
        };
        Eigen::VectorXd u0 = starts.points.row(r).transpose();
        NmResult nm = nelder_mead(objective, u0, 0.15, 300);
        if (!std::isfinite(nm.f)) return;
        try {
            results[static_cast<std::size_t>(r)] =
                modular_objective(nm.x, bank, prior, bias_fit);
        } catch (const NumericalFailure&) {
        }
    });

    std::vector<ModularResult> out;
    for (auto& r : results)
        if (r) out.push_back(std::move(*r));
    if (out.empty())
        throw NumericalFailure("modular_optimize: all restarts failed");
    std::stable_sort(out.begin(), out.end(),
                     [](const ModularResult& a, const ModularResult& b) {
                         return a.log_score > b.log_score;
                     });
    return out;
}

Eigen::VectorXd default_proposal_sigma(Eigen::Index p_u) {
    if (p_u == 4) {
        Eigen::VectorXd s(4);
        s << 0.02, 0.01, 0.2, 0.1;
        return s;
    }
    return Eigen::VectorXd::Constant(p_u, 0.05);
}

PosteriorChain mcmc(const LogLikFn& loglik, const PriorSpec& prior,
                    const McmcConfig& config) {
    const Eigen::Index p = config.u_init.size();
    if (p < 1) throw InvalidArgument("mcmc: empty u_init");
    if (!in_unit_cube(config.u_init))
        throw InvalidArgument("mcmc: u_init outside the unit cube");
    if (config.sigma.size() != p || (config.sigma.array() <= 0.0).any())
        throw InvalidArgument("mcmc: sigma must be positive per coordinate");
    if (config.n_sweeps < 1)
        throw InvalidArgument("mcmc: n_sweeps must be >= 1");

    auto target = [&](const Eigen::VectorXd& u) -> double {
        const double lp = log_prior(prior, u);
        if (!std::isfinite(lp)) return kNegInf;
        try {
            return lp + loglik(u);
        } catch (const NumericalFailure&) {
            return kNegInf;
        }
    };

    Eigen::VectorXd u = config.u_init;
    double lp = target(u);
    if (!std::isfinite(lp))
        throw InvalidArgument("mcmc: non-finite log posterior at u_init");

    auto eng = rng::engine(rng::derive(config.seed, 0x3C3C));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::VectorXd sigma = config.sigma;

    auto sweep = [&](Eigen::VectorXd& state, double& state_lp,
                     Eigen::VectorXi& accepts) {
        for (Eigen::Index j = 0; j < p; ++j) {
            Eigen::VectorXd prop = state;
            prop(j) += sigma(j) * gauss(eng);
            if (prop(j) < 0.0 || prop(j) > 1.0) continue;  // prior support
            const double prop_lp = target(prop);
            if (!std::isfinite(prop_lp)) continue;
            const double log_acc = prop_lp - state_lp;
            if (log_acc >= 0.0 || std::log(unif(eng)) < log_acc) {
                state = std::move(prop);
                state_lp = prop_lp;
                ++accepts(j);
            }
        }
    };

    if (config.pilot_tune && config.pilot_sweeps > 0) {
        const long chunk = 100;
        Eigen::VectorXi acc = Eigen::VectorXi::Zero(p);
        long done = 0;
        while (done < config.pilot_sweeps) {
            const long todo = std::min(chunk, config.pilot_sweeps - done);
            acc.setZero();
            for (long t = 0; t < todo; ++t) sweep(u, lp, acc);
            for (Eigen::Index j = 0; j < p; ++j) {
                const double rate =
                    static_cast<double>(acc(j)) / static_cast<double>(todo);
                // multiplicative update with fixed point at 35% acceptance;
                // moves fast when far from the 25-45% band
                if (rate > 0.45 || rate < 0.25) {
                    sigma(j) *= std::exp(rate - 0.35);
                    sigma(j) = std::clamp(sigma(j), 1e-6, 2.0);
                }
            }
            done += todo;
        }
        // scales frozen from here on
    }

    PosteriorChain chain;
    chain.samples.resize(config.n_sweeps, p);
    chain.logpost.resize(config.n_sweeps);
    chain.accept_counts = Eigen::VectorXi::Zero(p);
    chain.sigma = sigma;
    chain.u_init = config.u_init;
    chain.seed = config.seed;
    chain.proposals_per_coord = config.n_sweeps;
    for (long t = 0; t < config.n_sweeps; ++t) {
        sweep(u, lp, chain.accept_counts);
        chain.samples.row(t) = u.transpose();
        chain.logpost(t) = lp;
    }
    return chain;
}

EssResult ess(const Eigen::MatrixXd& samples) {
    const Eigen::Index T = samples.rows();
    const Eigen::Index p = samples.cols();
    if (T < 10) throw InvalidArgument("ess: need at least 10 samples");
    EssResult out;
    out.ess.resize(p);
    out.degenerate.assign(static_cast<std::size_t>(p), false);
    for (Eigen::Index j = 0; j < p; ++j) {
        Eigen::VectorXd x = samples.col(j);
        const double mu = x.mean();
        x.array() -= mu;
        const double c0 = x.squaredNorm() / static_cast<double>(T);
        // relative threshold: constant chains leave only rounding residue
        if (c0 <= 1e-20 * (mu * mu + 1.0)) {
            out.ess(j) = 1.0;
            out.degenerate[static_cast<std::size_t>(j)] = true;
            continue;
        }
        double acc = 0.0;
        for (Eigen::Index k = 1; k < T - 1; ++k) {
            const double ck =
                x.head(T - k).dot(x.tail(T - k)) / static_cast<double>(T);
            const double rho = ck / c0;
            if (rho <= 0.0) break;  // initial-positive-sequence truncation
            acc += rho;
        }
        out.ess(j) = static_cast<double>(T) / (1.0 + 2.0 * acc);
    }
    return out;
}

Eigen::VectorXd map_extract(const PosteriorChain& chain) {
    if (chain.samples.rows() < 1)
        throw InvalidArgument("map_extract: empty chain");
    Eigen::Index best = 0;
    for (Eigen::Index t = 1; t < chain.logpost.size(); ++t)
        if (chain.logpost(t) > chain.logpost(best)) best = t;
    return chain.samples.row(best).transpose();
}

PosteriorChain discard_burn_in(const PosteriorChain& chain, double frac) {
    const Eigen::Index T = chain.samples.rows();
    const Eigen::Index skip = static_cast<Eigen::Index>(
        std::floor(frac * static_cast<double>(T)));
    if (skip <= 0 || skip >= T) return chain;
    PosteriorChain out = chain;
    out.samples = chain.samples.bottomRows(T - skip).eval();
    out.logpost = chain.logpost.tail(T - skip).eval();
    return out;
}

}  // namespace oscal::calib
