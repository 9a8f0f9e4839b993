#ifndef OSCAL_BANK_HPP
#define OSCAL_BANK_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "oscal/gp.hpp"
#include "oscal/sim.hpp"

namespace oscal::oss {

// One on-site surrogate: the converged runs at a single field site and the
// GP fit to them.
struct SiteSurrogate {
    Eigen::MatrixXd U;        // n_i x p_u, converged rows only
    Eigen::VectorXd y;        // length n_i
    gp::FittedGP fit;
    Eigen::Index n_requested = 0;
    std::uint64_t seed = 0;
};

struct SurrogateBank {
    sim::FieldDataset field;
    std::vector<SiteSurrogate> sites;
    Eigen::Index p_u = 0;

    Eigen::Index n_sites() const {
        return static_cast<Eigen::Index>(sites.size());
    }
    Eigen::Index n_converged_total() const;
    Eigen::Index n_requested_total() const;
};

struct BuildConfig {
    Eigen::Index n_per_site = 200;
    std::uint64_t seed = 0;
    gp::FitConfig fit;            // restarts default 5 for on-site fits
    long maximin_iters = -1;      // -1 = default budget
    int threads = 0;              // 0 = hardware parallelism
};

// Builds one surrogate per field site, in parallel: fresh maximin LHS in
// u-space, simulator runs at (x_i, u), missing rows dropped, MLE fit.
// Per-site seeds derive from (seed, i) so serial and parallel builds agree.
SurrogateBank build_bank(const sim::FieldDataset& field, sim::Simulator& simulator,
                         const BuildConfig& config);

// Predictive mean/variance of site i's surrogate at u.
struct Prediction {
    double mean = 0.0;
    double variance = 0.0;
};
Prediction emulate(const SurrogateBank& bank, Eigen::Index site,
                   const Eigen::VectorXd& u);

// Global comparator: one GP over the joint (x, u) space, fit on converged
// runs with the larger restart budget.
struct GlobalSurrogate {
    gp::FittedGP fit;
    Eigen::Index n_requested = 0;
    Eigen::Index n_converged = 0;
};
GlobalSurrogate build_global(const design::DesignMatrix& joint_design,
                             sim::Simulator& simulator,
                             const gp::FitConfig& fit_config);

// Out-of-sample RMSE protocol: a fresh maximin LHS in u-space per site,
// simulator evaluated, missing dropped, per-site RMSE of the surrogate.
// Test designs depend only on (seed, site) so bank and global comparisons
// share identical test sets.
struct RmseReport {
    std::vector<double> rmse;              // per retained site
    std::vector<Eigen::Index> site_index;  // which site each entry belongs to
    std::vector<Eigen::Index> n_test;
    std::vector<Eigen::Index> excluded_sites;  // zero converged test runs
    Eigen::Index n_missing_total = 0;
    Eigen::Index n_requested_total = 0;
    double median() const;
    double mean() const;
};

RmseReport rmse_eval_bank(const SurrogateBank& bank, sim::Simulator& simulator,
                          Eigen::Index n_test_per_site, std::uint64_t seed,
                          int threads = 0);
RmseReport rmse_eval_global(const GlobalSurrogate& global,
                            const sim::FieldDataset& field, Eigen::Index p_u,
                            sim::Simulator& simulator,
                            Eigen::Index n_test_per_site, std::uint64_t seed,
                            int threads = 0);

// Bank persistence: per-site U_i.csv / y_i.csv / hp_i.json plus a
// bank.json manifest.
void save_bank(const SurrogateBank& bank, const std::string& dir);
SurrogateBank load_bank(const std::string& dir);

}  // namespace oscal::oss

#endif
