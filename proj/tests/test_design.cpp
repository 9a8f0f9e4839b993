#include <algorithm>
#include <vector>

#include "doctest.h"
#include "oscal/design.hpp"
#include "oscal/errors.hpp"

using namespace oscal;

namespace {

// Each column must contain exactly one point per stratum [k/n, (k+1)/n).
bool stratified(const Eigen::MatrixXd& p) {
    const Eigen::Index n = p.rows();
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        std::vector<int> counts(static_cast<std::size_t>(n), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double v = p(i, j);
            if (v < 0.0 || v >= 1.0) return false;
            const auto k = static_cast<std::size_t>(v * static_cast<double>(n));
            if (k >= counts.size()) return false;
            ++counts[k];
        }
        for (int c : counts)
            if (c != 1) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("lhs stratification in the smallest cases") {
    auto dm = design::lhs(2, 1, 42);
    // one point in each half
    const double a = dm.points(0, 0), b = dm.points(1, 0);
    CHECK(((a < 0.5 && b >= 0.5) || (a >= 0.5 && b < 0.5)));

    auto dm2 = design::lhs(4, 2, 17);
    CHECK(stratified(dm2.points));
}

TEST_CASE("lhs is deterministic in its seed") {
    auto a = design::lhs(1000, 4, 7);
    auto b = design::lhs(1000, 4, 7);
    CHECK(a.points == b.points);
    auto c = design::lhs(1000, 4, 8);
    CHECK(a.points != c.points);
}

TEST_CASE("lhs rejects degenerate sizes") {
    CHECK_THROWS_AS(design::lhs(0, 1, 0), InvalidArgument);
    CHECK_THROWS_AS(design::lhs(1, 0, 0), InvalidArgument);
    CHECK_THROWS_AS(design::maximin_lhs(1, 1, 0, 10), InvalidArgument);
}

TEST_CASE("maximin never decreases the minimum distance") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        auto base = design::lhs(30, 3, seed);
        auto opt = design::maximin_lhs(30, 3, seed, 2000);
        CHECK(design::min_pairwise_distance(opt.points) >=
              design::min_pairwise_distance(base.points));
        CHECK(stratified(opt.points));
    }
}

TEST_CASE("maximin with zero iterations equals plain lhs") {
    auto a = design::lhs(25, 2, 11);
    auto b = design::maximin_lhs(25, 2, 11, 0);
    CHECK(a.points == b.points);
}

TEST_CASE("min distance is monotone in the iteration budget") {
    auto lo = design::maximin_lhs(40, 2, 5, 200);
    auto hi = design::maximin_lhs(40, 2, 5, 4000);
    CHECK(design::min_pairwise_distance(hi.points) >=
          design::min_pairwise_distance(lo.points));
}

TEST_CASE("maximin beats the median random lhs") {
    // Brute-force oracle: the optimized design's min distance should exceed
    // the median min distance over 100 independent random LHS draws.
    auto opt = design::maximin_lhs(50, 2, 3, 5000);
    const double opt_dist = design::min_pairwise_distance(opt.points);
    std::vector<double> dists;
    for (std::uint64_t s = 1000; s < 1100; ++s)
        dists.push_back(
            design::min_pairwise_distance(design::lhs(50, 2, s).points));
    std::sort(dists.begin(), dists.end());
    CHECK(opt_dist >= dists[49]);
}

TEST_CASE("per-column strata form the full multiset after optimization") {
    auto dm = design::maximin_lhs(64, 3, 9, 5000);
    CHECK(stratified(dm.points));
}
