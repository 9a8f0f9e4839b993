#include "oscal/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "oscal/errors.hpp"
#include "oscal/rng.hpp"

namespace oscal::design {

namespace {

double sq_dist(const Eigen::MatrixXd& p, Eigen::Index a, Eigen::Index b) {
    return (p.row(a) - p.row(b)).squaredNorm();
}

}  // namespace

double min_pairwise_distance(const Eigen::MatrixXd& points) {
    const Eigen::Index n = points.rows();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            best = std::min(best, sq_dist(points, i, j));
    return std::sqrt(best);
}

DesignMatrix lhs(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    if (n < 1 || d < 1)
        throw InvalidArgument("lhs: n and d must both be at least 1");
    auto eng = rng::engine(rng::derive(seed, 0xD351));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::MatrixXd pts(n, d);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < d; ++j) {
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        std::shuffle(perm.begin(), perm.end(), eng);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto k = static_cast<double>(perm[static_cast<std::size_t>(i)]);
            double v = (k + unif(eng)) / static_cast<double>(n);
            // keep the point strictly inside its stratum under rounding
            if (v * static_cast<double>(n) >= k + 1.0)
                v = std::nextafter((k + 1.0) / static_cast<double>(n), 0.0);
            pts(i, j) = v;
        }
    }
    return DesignMatrix{std::move(pts), seed, 0};
}

DesignMatrix maximin_lhs(Eigen::Index n, Eigen::Index d, std::uint64_t seed,
                         long iters) {
    if (n < 2 || d < 1)
        throw InvalidArgument("maximin_lhs: need n >= 2 and d >= 1");
    if (iters < 0) throw InvalidArgument("maximin_lhs: iters must be >= 0");
    DesignMatrix dm = lhs(n, d, seed);
    dm.maximin_iters = iters;
    // In one dimension a stratum swap only relabels which row carries which
    // value; the point set (and so the min distance) never changes.
    if (iters == 0 || d == 1) return dm;

    Eigen::MatrixXd& p = dm.points;
    // Squared pairwise distances, kept in sync with accepted swaps.
    Eigen::MatrixXd D(n, n);
    D.setZero();
    double global_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double s = sq_dist(p, i, j);
            D(i, j) = D(j, i) = s;
            global_min = std::min(global_min, s);
        }

    auto eng = rng::engine(rng::derive(seed, 0x3A81));
    std::uniform_int_distribution<Eigen::Index> pick_col(0, d - 1);
    std::uniform_int_distribution<Eigen::Index> pick_row(0, n - 1);

    Eigen::VectorXd new_da(n), new_db(n);
    for (long it = 0; it < iters; ++it) {
        const Eigen::Index c = pick_col(eng);
        Eigen::Index a = pick_row(eng);
        Eigen::Index b = pick_row(eng);
        if (a == b) continue;
        if (a > b) std::swap(a, b);

        const double va = p(a, c), vb = p(b, c);
        p(a, c) = vb;
        p(b, c) = va;

        double aff_new = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            new_da(j) = (j == a) ? 0.0 : sq_dist(p, a, j);
            new_db(j) = (j == b) ? 0.0 : sq_dist(p, b, j);
            if (j != a) aff_new = std::min(aff_new, new_da(j));
            if (j != b) aff_new = std::min(aff_new, new_db(j));
        }

        double aff_old = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != a) aff_old = std::min(aff_old, D(a, j));
            if (j != b) aff_old = std::min(aff_old, D(b, j));
        }

        double new_global;
        if (aff_old > global_min) {
            // The current minimum pair is untouched by this swap.
            new_global = std::min(global_min, aff_new);
        } else {
            // Minimum pair involves a or b; rescan the unaffected pairs.
            double rest = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < n; ++i) {
                if (i == a || i == b) continue;
                for (Eigen::Index j = i + 1; j < n; ++j) {
                    if (j == a || j == b) continue;
                    rest = std::min(rest, D(i, j));
                }
            }
            new_global = std::min(rest, aff_new);
        }

        if (new_global >= global_min) {
            for (Eigen::Index j = 0; j < n; ++j) {
                D(a, j) = D(j, a) = new_da(j);
                D(b, j) = D(j, b) = new_db(j);
            }
            D(a, b) = D(b, a) = sq_dist(p, a, b);
            global_min = new_global;
        } else {
            p(a, c) = va;
            p(b, c) = vb;
        }
    }
    return dm;
}

DesignMatrix maximin_lhs(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    return maximin_lhs(n, d, seed, default_maximin_iters(n, d));
}

}  // namespace oscal::design
