#include "oscal/bank.hpp"

#include <algorithm>
#include <filesystem>
#include <mutex>
#include <numeric>

#include <json.hpp>

#include "oscal/errors.hpp"
#include "oscal/io.hpp"
#include "oscal/parallel.hpp"
#include "oscal/rng.hpp"

namespace oscal::oss {

namespace fs = std::filesystem;

namespace {

// Test designs must agree between bank and global evaluation.
std::uint64_t test_seed(std::uint64_t master, Eigen::Index site) {
    return rng::derive(master ^ 0x7E57DE5160000000ULL,
                       static_cast<std::uint64_t>(site));
}

// Rows (x_i, u) for all u in U.
Eigen::MatrixXd joint_rows(const Eigen::VectorXd& x, const Eigen::MatrixXd& U) {
    Eigen::MatrixXd out(U.rows(), x.size() + U.cols());
    for (Eigen::Index r = 0; r < U.rows(); ++r) {
        out.row(r).head(x.size()) = x.transpose();
        out.row(r).tail(U.cols()) = U.row(r);
    }
    return out;
}

struct FilteredRuns {
    Eigen::MatrixXd U;
    Eigen::VectorXd y;
    Eigen::Index n_requested = 0;
};

FilteredRuns drop_missing(const Eigen::MatrixXd& U, const sim::SimResult& res) {
    FilteredRuns out;
    out.n_requested = res.n_requested;
    out.U.resize(res.n_converged, U.cols());
    out.y.resize(res.n_converged);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < U.rows(); ++r) {
        if (res.values[static_cast<std::size_t>(r)]) {
            out.U.row(k) = U.row(r);
            out.y(k) = *res.values[static_cast<std::size_t>(r)];
            ++k;
        }
    }
    return out;
}

}  // namespace

Eigen::Index SurrogateBank::n_converged_total() const {
    return std::accumulate(sites.begin(), sites.end(), Eigen::Index{0},
                           [](Eigen::Index acc, const SiteSurrogate& s) {
                               return acc + s.y.size();
                           });
}

Eigen::Index SurrogateBank::n_requested_total() const {
    return std::accumulate(sites.begin(), sites.end(), Eigen::Index{0},
                           [](Eigen::Index acc, const SiteSurrogate& s) {
                               return acc + s.n_requested;
                           });
}

SurrogateBank build_bank(const sim::FieldDataset& field, sim::Simulator& simulator,
                         const BuildConfig& config) {
    if (config.n_per_site < 2)
        throw InvalidArgument("build_bank: n_per_site must be >= 2");
    const Eigen::Index n_f = field.X.rows();
    const Eigen::Index p_u = simulator.input_dim() - field.X.cols();
    if (p_u < 1)
        throw InvalidArgument("build_bank: simulator input dim must exceed p_x");

    SurrogateBank bank;
    bank.field = field;
    bank.p_u = p_u;
    bank.sites.resize(static_cast<std::size_t>(n_f));

    const long iters = config.maximin_iters >= 0
                           ? config.maximin_iters
                           : design::default_maximin_iters(config.n_per_site, p_u);

    // One external process at a time per adapter handle.
    std::mutex sim_mutex;
    parallel_for(n_f, config.threads, [&](long i) {
        const std::uint64_t site_seed =
            rng::derive(config.seed, static_cast<std::uint64_t>(i));
        design::DesignMatrix dm =
            design::maximin_lhs(config.n_per_site, p_u, site_seed, iters);
        Eigen::MatrixXd inputs = joint_rows(field.X.row(i), dm.points);
        sim::SimResult res;
        {
            std::lock_guard<std::mutex> lock(sim_mutex);
            res = simulator.run(inputs);
        }
        FilteredRuns runs = drop_missing(dm.points, res);
        if (runs.y.size() < 2)
            throw SiteStarvation("site " + std::to_string(i) + " has only " +
                                     std::to_string(runs.y.size()) +
                                     " converged runs",
                                 i);
        gp::FitConfig fit = config.fit;
        fit.seed = rng::derive(site_seed, 0xF17BA5E);
        SiteSurrogate& s = bank.sites[static_cast<std::size_t>(i)];
        s.fit = gp::fit_mle(runs.U, runs.y, fit);
        s.U = std::move(runs.U);
        s.y = std::move(runs.y);
        s.n_requested = runs.n_requested;
        s.seed = site_seed;
    });
    return bank;
}

Prediction emulate(const SurrogateBank& bank, Eigen::Index site,
                   const Eigen::VectorXd& u) {
    if (site < 0 || site >= bank.n_sites())
        throw InvalidArgument("emulate: site index out of range");
    Eigen::VectorXd mean, var;
    gp::predict(bank.sites[static_cast<std::size_t>(site)].fit, u.transpose(),
                mean, var);
    return Prediction{mean(0), var(0)};
}

GlobalSurrogate build_global(const design::DesignMatrix& joint_design,
                             sim::Simulator& simulator,
                             const gp::FitConfig& fit_config) {
    sim::SimResult res = simulator.run(joint_design.points);
    FilteredRuns runs = drop_missing(joint_design.points, res);
    if (runs.y.size() < 2)
        throw SiteStarvation("global surrogate has only " +
                                 std::to_string(runs.y.size()) +
                                 " converged runs",
                             -1);
    GlobalSurrogate g;
    g.n_requested = res.n_requested;
    g.n_converged = res.n_converged;
    g.fit = gp::fit_mle(runs.U, runs.y, fit_config);
    return g;
}

double RmseReport::median() const {
    if (rmse.empty()) return 0.0;
    std::vector<double> v = rmse;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double RmseReport::mean() const {
    if (rmse.empty()) return 0.0;
    return std::accumulate(rmse.begin(), rmse.end(), 0.0) /
           static_cast<double>(rmse.size());
}

namespace {

// Shared driver: prediction function maps (site, test U) to means.
template <typename PredictFn>
RmseReport rmse_eval_impl(const sim::FieldDataset& field, Eigen::Index p_u,
                          sim::Simulator& simulator, Eigen::Index n_test,
                          std::uint64_t seed, int threads, PredictFn&& predict) {
    if (n_test < 1)
        throw InvalidArgument("rmse_eval: n_test_per_site must be >= 1");
    const Eigen::Index n_f = field.X.rows();
    std::vector<double> rmse(static_cast<std::size_t>(n_f), -1.0);
    std::vector<Eigen::Index> n_kept(static_cast<std::size_t>(n_f), 0);
    std::vector<Eigen::Index> n_req(static_cast<std::size_t>(n_f), 0);
    std::mutex sim_mutex;
    parallel_for(n_f, threads, [&](long i) {
        design::DesignMatrix dm =
            design::maximin_lhs(n_test, p_u, test_seed(seed, i),
                                design::default_maximin_iters(n_test, p_u));
        Eigen::MatrixXd inputs = joint_rows(field.X.row(i), dm.points);
        sim::SimResult res;
        {
            std::lock_guard<std::mutex> lock(sim_mutex);
            res = simulator.run(inputs);
        }
        FilteredRuns runs = drop_missing(dm.points, res);
        n_req[static_cast<std::size_t>(i)] = res.n_requested;
        n_kept[static_cast<std::size_t>(i)] = runs.y.size();
        if (runs.y.size() == 0) return;  // excluded with a warning record
        Eigen::VectorXd mean = predict(static_cast<Eigen::Index>(i), runs.U);
        rmse[static_cast<std::size_t>(i)] =
            std::sqrt((mean - runs.y).squaredNorm() /
                      static_cast<double>(runs.y.size()));
    });

    RmseReport report;
    for (Eigen::Index i = 0; i < n_f; ++i) {
        report.n_requested_total += n_req[static_cast<std::size_t>(i)];
        report.n_missing_total +=
            n_req[static_cast<std::size_t>(i)] - n_kept[static_cast<std::size_t>(i)];
        if (n_kept[static_cast<std::size_t>(i)] == 0) {
            report.excluded_sites.push_back(i);
        } else {
            report.rmse.push_back(rmse[static_cast<std::size_t>(i)]);
            report.site_index.push_back(i);
            report.n_test.push_back(n_kept[static_cast<std::size_t>(i)]);
        }
    }
    return report;
}

}  // namespace

RmseReport rmse_eval_bank(const SurrogateBank& bank, sim::Simulator& simulator,
                          Eigen::Index n_test_per_site, std::uint64_t seed,
                          int threads) {
    return rmse_eval_impl(
        bank.field, bank.p_u, simulator, n_test_per_site, seed, threads,
        [&](Eigen::Index site, const Eigen::MatrixXd& U) {
            Eigen::VectorXd mean, var;
            gp::predict(bank.sites[static_cast<std::size_t>(site)].fit, U, mean,
                        var);
            return mean;
        });
}

RmseReport rmse_eval_global(const GlobalSurrogate& global,
                            const sim::FieldDataset& field, Eigen::Index p_u,
                            sim::Simulator& simulator,
                            Eigen::Index n_test_per_site, std::uint64_t seed,
                            int threads) {
    return rmse_eval_impl(
        field, p_u, simulator, n_test_per_site, seed, threads,
        [&](Eigen::Index site, const Eigen::MatrixXd& U) {
            Eigen::MatrixXd inputs = joint_rows(field.X.row(site), U);
            Eigen::VectorXd mean, var;
            gp::predict(global.fit, inputs, mean, var);
            return mean;
        });
}

void save_bank(const SurrogateBank& bank, const std::string& dir) {
    fs::create_directories(dir);
    io::write_matrix_csv((fs::path(dir) / "field_X.csv").string(), bank.field.X);
    io::write_vector_csv((fs::path(dir) / "field_y.csv").string(), bank.field.y);
    nlohmann::json manifest;
    manifest["n_sites"] = bank.n_sites();
    manifest["p_u"] = bank.p_u;
    manifest["noise_sd"] = bank.field.noise_sd;
    manifest["n_requested_total"] = bank.n_requested_total();
    manifest["n_converged_total"] = bank.n_converged_total();
    nlohmann::json sites = nlohmann::json::array();
    for (Eigen::Index i = 0; i < bank.n_sites(); ++i) {
        const SiteSurrogate& s = bank.sites[static_cast<std::size_t>(i)];
        const std::string tag = std::to_string(i);
        io::write_matrix_csv((fs::path(dir) / ("U_" + tag + ".csv")).string(),
                             s.U);
        io::write_vector_csv((fs::path(dir) / ("y_" + tag + ".csv")).string(),
                             s.y);
        io::write_text_file((fs::path(dir) / ("hp_" + tag + ".json")).string(),
                            gp::hyperparams_to_json(s.fit));
        sites.push_back({{"n_requested", s.n_requested}, {"seed", s.seed}});
    }
    manifest["sites"] = sites;
    io::write_text_file((fs::path(dir) / "bank.json").string(),
                        manifest.dump(2));
}

SurrogateBank load_bank(const std::string& dir) {
    const std::string manifest_path = (fs::path(dir) / "bank.json").string();
    if (!fs::exists(manifest_path))
        throw UpstreamMissing("bank manifest not found: " + manifest_path);
    nlohmann::json manifest =
        nlohmann::json::parse(io::read_text_file(manifest_path));
    SurrogateBank bank;
    bank.field.X = io::read_matrix_csv((fs::path(dir) / "field_X.csv").string());
    bank.field.y = io::read_vector_csv((fs::path(dir) / "field_y.csv").string());
    bank.field.noise_sd = manifest.value("noise_sd", 0.0);
    bank.p_u = manifest.at("p_u").get<Eigen::Index>();
    const auto n_sites = manifest.at("n_sites").get<Eigen::Index>();
    bank.sites.resize(static_cast<std::size_t>(n_sites));
    for (Eigen::Index i = 0; i < n_sites; ++i) {
        const std::string tag = std::to_string(i);
        SiteSurrogate& s = bank.sites[static_cast<std::size_t>(i)];
        s.U = io::read_matrix_csv((fs::path(dir) / ("U_" + tag + ".csv")).string());
        s.y = io::read_vector_csv((fs::path(dir) / ("y_" + tag + ".csv")).string());
        gp::KernelHyperparams hp = gp::hyperparams_from_json(
            io::read_text_file((fs::path(dir) / ("hp_" + tag + ".json")).string()));
        s.fit = gp::condition(s.U, s.y, hp);
        const auto& sj = manifest.at("sites").at(static_cast<std::size_t>(i));
        s.n_requested = sj.value("n_requested", s.y.size());
        s.seed = sj.value("seed", std::uint64_t{0});
    }
    return bank;
}

}  // namespace oscal::oss
