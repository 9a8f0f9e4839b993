#ifndef OSCAL_DESIGN_HPP
#define OSCAL_DESIGN_HPP

#include <Eigen/Dense>
#include <cstdint>

namespace oscal::design {

// Space-filling design on [0,1]^d. Per column, exactly one point lands in
// each stratum [k/n, (k+1)/n). Immutable after construction.
struct DesignMatrix {
    Eigen::MatrixXd points;  // n x d
    std::uint64_t seed = 0;
    long maximin_iters = 0;
};

// Plain LHS: one uniform draw inside each per-column stratum, columns
// independently permuted. Deterministic in (n, d, seed).
DesignMatrix lhs(Eigen::Index n, Eigen::Index d, std::uint64_t seed);

// Starts from lhs(n, d, seed) and performs `iters` random within-column
// stratum-pair swaps, keeping a swap iff the minimum pairwise Euclidean
// distance does not decrease. Stratification is preserved.
DesignMatrix maximin_lhs(Eigen::Index n, Eigen::Index d, std::uint64_t seed,
                         long iters);

// Budget scaled with design size; cheap at the sizes used here.
inline long default_maximin_iters(Eigen::Index n, Eigen::Index d) {
    return 100L * static_cast<long>(n) * static_cast<long>(d);
}

DesignMatrix maximin_lhs(Eigen::Index n, Eigen::Index d, std::uint64_t seed);

double min_pairwise_distance(const Eigen::MatrixXd& points);

}  // namespace oscal::design

#endif
