#include "oscal/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "oscal/bank.hpp"
#include "oscal/calib.hpp"
#include "oscal/design.hpp"
#include "oscal/errors.hpp"
#include "oscal/io.hpp"
#include "oscal/koh.hpp"
#include "oscal/rng.hpp"
#include "oscal/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace oscal::cli {

namespace {

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
}

template <typename T>
T jget(const json& config, const std::string& key, T fallback) {
    if (!config.contains(key)) return fallback;
    try {
        return config.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
    }
}

std::string jrequire_string(const json& config, const std::string& key) {
    if (!config.contains(key))
        throw ConfigError("config key '" + key + "' is required");
    return jget<std::string>(config, key, "");
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path))
        throw UpstreamMissing(what + " not found at expected path: " + path);
}

void require_dir(const std::string& path, const std::string& what) {
    if (!fs::is_directory(path))
        throw UpstreamMissing(what + " not found at expected path: " + path);
}

calib::PriorSpec prior_from_config(const json& config) {
    calib::PriorSpec prior;
    const std::string kind = jget<std::string>(config, "prior", "uniform");
    if (kind == "uniform") {
        prior.kind = calib::PriorKind::kUniform;
    } else if (kind == "beta") {
        prior.kind = calib::PriorKind::kBeta;
        prior.alpha = jget<double>(config, "prior_alpha", 2.0);
        prior.beta = jget<double>(config, "prior_beta", 2.0);
    } else {
        throw ConfigError("prior must be 'uniform' or 'beta', got '" + kind + "'");
    }
    return prior;
}

Eigen::VectorXd jvector(const json& arr, const std::string& what) {
    if (!arr.is_array() || arr.empty())
        throw ConfigError(what + " must be a nonempty array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number())
            throw ConfigError(what + " must contain only numbers");
        v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    }
    return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

json hp_to_json(const gp::KernelHyperparams& hp) {
    return json{{"tau2", hp.tau2},
                {"theta", vector_to_json(hp.theta)},
                {"eta", hp.eta}};
}

gp::KernelHyperparams hp_from_json(const json& j) {
    gp::KernelHyperparams hp;
    hp.tau2 = j.at("tau2").get<double>();
    hp.eta = j.at("eta").get<double>();
    hp.theta = jvector(j.at("theta"), "theta");
    return hp;
}

// Accepts either a bare hyperparameter file or a calibrate-opt result whose
// best solution carries phi_b.
gp::KernelHyperparams load_phi_b(const std::string& path) {
    require_file(path, "bias hyperparameter file");
    json j = json::parse(io::read_text_file(path));
    if (j.contains("tau2")) return hp_from_json(j);
    if (j.contains("best") && j["best"].contains("phi_b"))
        return hp_from_json(j["best"]["phi_b"]);
    throw ConfigError("no bias hyperparameters found in " + path);
}

std::unique_ptr<sim::Simulator> make_simulator(const json& config) {
    const std::string adapter = jget<std::string>(config, "adapter", "toy");
    if (adapter == "toy") return std::make_unique<sim::ToySimulator>();
    require_file(adapter, "adapter config");
    auto ac = sim::adapter_config_from_json(io::read_text_file(adapter));
    return std::make_unique<sim::BatchFileSimulator>(ac);
}

sim::FieldDataset load_field_from_config(const json& config) {
    if (config.contains("toy_field")) {
        const json& tf = config["toy_field"];
        return sim::gen_field(jget<Eigen::Index>(tf, "n_f", 10),
                              jget<double>(tf, "noise_sd", 0.02),
                              jget<std::uint64_t>(tf, "seed", 0));
    }
    const std::string xp = jrequire_string(config, "field_x");
    const std::string yp = jrequire_string(config, "field_y");
    require_file(xp, "field inputs");
    require_file(yp, "field responses");
    sim::FieldDataset field;
    field.X = io::read_matrix_csv(xp);
    field.y = io::read_vector_csv(yp);
    field.noise_sd = jget<double>(config, "noise_sd", 0.0);
    if (field.X.rows() != field.y.size())
        throw ConfigError("field inputs and responses have different lengths");
    return field;
}

void save_field(const sim::FieldDataset& field, const std::string& dir) {
    io::write_matrix_csv(dir + "/field_x.csv", field.X);
    io::write_vector_csv(dir + "/field_y.csv", field.y);
    io::write_text_file(dir + "/field.json",
                        json{{"n_f", field.X.rows()},
                             {"p_x", field.X.cols()},
                             {"noise_sd", field.noise_sd}}
                            .dump(2) +
                            "\n");
}

void write_json_file(const std::string& path, const json& j) {
    io::write_text_file(path, j.dump(2) + "\n");
}

void write_chain_csv(const std::string& path,
                     const calib::PosteriorChain& chain) {
    std::string out = "t";
    for (Eigen::Index j = 0; j < chain.samples.cols(); ++j)
        out += ",u" + std::to_string(j + 1);
    out += ",logpost\n";
    for (Eigen::Index t = 0; t < chain.samples.rows(); ++t) {
        out += std::to_string(t);
        for (Eigen::Index j = 0; j < chain.samples.cols(); ++j)
            out += "," + io::format_double(chain.samples(t, j));
        out += "," + io::format_double(chain.logpost(t)) + "\n";
    }
    io::write_text_file(path, out);
}

json chain_summary(const calib::PosteriorChain& full,
                   const calib::PosteriorChain& post, double burn_frac) {
    const Eigen::Index p = post.samples.cols();
    const double t_post = static_cast<double>(post.samples.rows());
    json mean = json::array(), sd = json::array(), acc = json::array();
    for (Eigen::Index j = 0; j < p; ++j) {
        const double m = post.samples.col(j).mean();
        const double v =
            (post.samples.col(j).array() - m).square().sum() / (t_post - 1.0);
        mean.push_back(m);
        sd.push_back(std::sqrt(v));
        acc.push_back(static_cast<double>(full.accept_counts(j)) /
                      static_cast<double>(full.proposals_per_coord));
    }
    calib::EssResult e = calib::ess(post.samples);
    return json{{"n_sweeps", full.samples.rows()},
                {"burn_in_fraction", burn_frac},
                {"retained", post.samples.rows()},
                {"mean", mean},
                {"sd", sd},
                {"acceptance", acc},
                {"ess", vector_to_json(e.ess)},
                {"proposal_sigma", vector_to_json(full.sigma)},
                {"seed", full.seed}};
}

Eigen::MatrixXd thin_chain(const Eigen::MatrixXd& samples, long stride) {
    if (stride <= 1) return samples;
    const Eigen::Index t_out = (samples.rows() + stride - 1) / stride;
    Eigen::MatrixXd out(t_out, samples.cols());
    for (Eigen::Index i = 0; i < t_out; ++i)
        out.row(i) = samples.row(i * stride);
    return out;
}

// Resolves the calibration point for predict/loo: an inline array, a
// map.json artifact, or (first row of) a chain file.
Eigen::VectorXd load_u_point(const json& config) {
    if (config.contains("u")) return jvector(config["u"], "u");
    if (config.contains("map")) {
        const std::string path = jget<std::string>(config, "map", "");
        require_file(path, "map artifact");
        json j = json::parse(io::read_text_file(path));
        return jvector(j.at("u"), "map u");
    }
    throw ConfigError("either 'u' (array) or 'map' (path) is required");
}

gp::FitConfig fit_config(const json& config, int restarts,
                         std::uint64_t seed) {
    gp::FitConfig fc;
    fc.restarts = jget<int>(config, "fit_restarts", restarts);
    fc.seed = seed;
    return fc;
}

struct LockGuard {
    std::string path;
    explicit LockGuard(const std::string& dir) : path(dir + "/lock") {
        if (fs::exists(path))
            throw ConfigError("run directory is locked (stale lock? remove " +
                              path + ")");
        std::ofstream f(path);
        f << "locked\n";
    }
    ~LockGuard() { std::error_code ec; fs::remove(path, ec); }
};

void finalize_run(const std::string& dir, const std::string& command,
                  const json& config, const std::vector<std::string>& artifacts) {
    json manifest{{"command", command},
                  {"config_hash", config_hash(config)},
                  {"artifacts", artifacts},
                  {"status", "complete"}};
    write_json_file(dir + "/manifest.json", manifest);
}

}  // namespace

std::string config_hash(const json& config) {
    const std::string s = config.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

RunDir prepare_run_dir(const std::string& store, const std::string& command,
                       const json& effective_config) {
    RunDir rd;
    const std::string hash = config_hash(effective_config);
    rd.path = store + "/" + command + "-" + hash.substr(0, 8);
    if (fs::exists(rd.path + "/manifest.json")) {
        json manifest =
            json::parse(io::read_text_file(rd.path + "/manifest.json"));
        if (manifest.value("config_hash", "") == hash) {
            rd.rerun = true;
            std::cerr << "note: identical completed run found at " << rd.path
                      << "; rerunning in place\n";
        }
    }
    fs::create_directories(rd.path);
    write_json_file(rd.path + "/config.json", effective_config);
    return rd;
}

std::string cmd_design(const json& config, const std::string& store) {
    RunDir rd = prepare_run_dir(store, "design", config);
    LockGuard lock(rd.path);
    const auto n = jget<Eigen::Index>(config, "n", 0);
    const auto d = jget<Eigen::Index>(config, "d", 0);
    if (n < 1 || d < 1) throw ConfigError("design needs n >= 1 and d >= 1");
    const auto seed = jget<std::uint64_t>(config, "seed", 0);
    design::DesignMatrix dm;
    if (jget<bool>(config, "maximin", true)) {
        const long iters =
            jget<long>(config, "iters", design::default_maximin_iters(n, d));
        dm = design::maximin_lhs(n, d, seed, iters);
    } else {
        dm = design::lhs(n, d, seed);
    }
    io::write_matrix_csv(rd.path + "/design.csv", dm.points);
    finalize_run(rd.path, "design", config, {"design.csv"});
    return rd.path;
}

std::string cmd_simulate(const json& config, const std::string& store) {
    RunDir rd = prepare_run_dir(store, "simulate", config);
    LockGuard lock(rd.path);
    const std::string design_path = jrequire_string(config, "design");
    require_file(design_path, "design artifact");
    design::DesignMatrix dm;
    dm.points = io::read_matrix_csv(design_path);
    auto simulator = make_simulator(config);
    sim::SimResult res = sim::batch_simulate(*simulator, dm);
    io::write_response_csv(rd.path + "/responses.csv", res.values);
    write_json_file(rd.path + "/sim.json",
                    json{{"n_requested", res.n_requested},
                         {"n_converged", res.n_converged},
                         {"n_missing", res.n_requested - res.n_converged}});
    finalize_run(rd.path, "simulate", config, {"responses.csv", "sim.json"});
    return rd.path;
}

std::string cmd_fit(const json& config, const std::string& store) {
    RunDir rd = prepare_run_dir(store, "fit", config);
    LockGuard lock(rd.path);
    const auto t0 = std::chrono::steady_clock::now();
    sim::FieldDataset field = load_field_from_config(config);
    save_field(field, rd.path);
    auto simulator = make_simulator(config);

    oss::BuildConfig bc;
    bc.n_per_site = jget<Eigen::Index>(config, "n_per_site", 200);
    bc.seed = jget<std::uint64_t>(config, "seed", 0);
    bc.fit = fit_config(config, 5, rng::derive(bc.seed, 0xF17));
    bc.threads = jget<int>(config, "threads", 0);
    oss::SurrogateBank bank = oss::build_bank(field, *simulator, bc);
    oss::save_bank(bank, rd.path + "/bank");

    json extras;
    std::vector<std::string> artifacts = {"bank", "field_x.csv", "field_y.csv"};
    if (jget<bool>(config, "global", false)) {
        const auto n_m = jget<Eigen::Index>(config, "global_n_m", 500);
        design::DesignMatrix jd = design::maximin_lhs(
            n_m, field.X.cols() + bank.p_u, rng::derive(bc.seed, 0x6D0));
        oss::GlobalSurrogate global = oss::build_global(
            jd, *simulator, fit_config(config, 30, rng::derive(bc.seed, 0x6D1)));
        io::write_text_file(rd.path + "/global_hp.json",
                            gp::hyperparams_to_json(global.fit));
        extras["global_n_converged"] = global.n_converged;
        artifacts.push_back("global_hp.json");
    }
    extras["n_converged_total"] = bank.n_converged_total();
    extras["n_requested_total"] = bank.n_requested_total();
    extras["seconds"] = elapsed_since(t0);
    write_json_file(rd.path + "/fit.json", extras);
    artifacts.push_back("fit.json");
    finalize_run(rd.path, "fit", config, artifacts);
    return rd.path;
}

std::string cmd_calibrate_opt(const json& config, const std::string& store) {
    RunDir rd = prepare_run_dir(store, "calibrate-opt", config);
    LockGuard lock(rd.path);
    const std::string bank_dir = jrequire_string(config, "bank");
    require_dir(bank_dir, "surrogate bank");
    oss::SurrogateBank bank = oss::load_bank(bank_dir);
    const auto seed = jget<std::uint64_t>(config, "seed", 0);
    const int restarts = jget<int>(config, "restarts", 50);
    const int threads = jget<int>(config, "threads", 0);
    calib::PriorSpec prior = prior_from_config(config);

    std::vector<calib::ModularResult> solutions = calib::modular_optimize(
        bank, prior, restarts, seed,
        fit_config(config, 5, rng::derive(seed, 0xB1A)), threads);

    json list = json::array();
    for (const auto& s : solutions)
        list.push_back(
            {{"u", vector_to_json(s.u_hat)}, {"log_score", s.log_score}});
    const calib::ModularResult& best = solutions.front();
    write_json_file(rd.path + "/modular.json",
                    json{{"solutions", list},
                         {"best",
                          {{"u", vector_to_json(best.u_hat)},
                           {"log_score", best.log_score},
                           {"phi_b", hp_to_json(best.phi_b)},
                           {"bias_loglik", best.bias_loglik}}}});
    write_json_file(rd.path + "/map.json",
                    json{{"u", vector_to_json(best.u_hat)},
                         {"source", "modular_optimize"},
                         {"log_score", best.log_score}});
    finalize_run(rd.path, "calibrate-opt", config, {"modular.json", "map.json"});
    return rd.path;
}

std::string cmd_calibrate_mcmc(const json& config, const std::string& store) {
    RunDir rd = prepare_run_dir(store, "calibrate-mcmc", config);
    LockGuard lock(rd.path);
    const std::string bank_dir = jrequire_string(config, "bank");
    require_dir(bank_dir, "surrogate bank");
    oss::SurrogateBank bank = oss::load_bank(bank_dir);
    gp::KernelHyperparams phi_b =
        load_phi_b(jrequire_string(config, "phi_b"));
    const int threads = jget<int>(config, "threads", 0);
    calib::PriorSpec prior = prior_from_config(config);

    koh::JointPrecompute pre = koh::precompute(bank, phi_b);
    calib::McmcConfig mc;
    mc.n_sweeps = jget<long>(config, "n_sweeps", 20000);
    mc.seed = jget<std::uint64_t>(config, "seed", 0);
    mc.pilot_tune = jget<bool>(config, "pilot", true);
    mc.pilot_sweeps = jget<long>(config, "pilot_sweeps", 2000);
    mc.sigma = config.contains("sigma")
                   ? jvector(config["sigma"], "sigma")
                   : calib::default_proposal_sigma(bank.p_u);
    mc.u_init = config.contains("u_init")
                    ? jvector(config["u_init"], "u_init")
                    : Eigen::VectorXd::Constant(bank.p_u, 0.5).eval();
    calib::PosteriorChain chain = calib::mcmc(
        [&](const Eigen::VectorXd& u) {
            return koh::joint_loglik(pre, u, threads);
        },
        prior, mc);

    const double burn = jget<double>(config, "burn_in", 0.2);
    calib::PosteriorChain post = calib::discard_burn_in(chain, burn);
    write_chain_csv(rd.path + "/posterior_samples.csv", chain);
    write_json_file(rd.path + "/posterior_summary.json",
                    chain_summary(chain, post, burn));
    Eigen::VectorXd u_map = calib::map_extract(post);
    write_json_file(rd.path + "/map.json",
                    json{{"u", vector_to_json(u_map)}, {"source", "mcmc"}});
    finalize_run(rd.path, "calibrate-mcmc", config,
                 {"posterior_samples.csv", "posterior_summary.json", "map.json"});
    return rd.path;
}

std::string cmd_predict(const json& config, const std::string& store) {
    RunDir rd = prepare_run_dir(store, "predict", config);
    LockGuard lock(rd.path);
    const std::string bank_dir = jrequire_string(config, "bank");
    const std::string new_bank_dir = jrequire_string(config, "new_bank");
    require_dir(bank_dir, "training surrogate bank");
    require_dir(new_bank_dir, "new-site surrogate bank");
    oss::SurrogateBank bank = oss::load_bank(bank_dir);
    oss::SurrogateBank new_bank = oss::load_bank(new_bank_dir);
    gp::KernelHyperparams phi_b = load_phi_b(jrequire_string(config, "phi_b"));
    const int threads = jget<int>(config, "threads", 0);
    koh::JointPrecompute pre = koh::precompute(bank, phi_b);

    koh::PredictiveDistribution agg;
    if (config.contains("chain")) {
        const std::string chain_path = jget<std::string>(config, "chain", "");
        require_file(chain_path, "posterior chain");
        Eigen::MatrixXd raw = io::read_matrix_csv(chain_path);
        // chain CSV layout: t, u1..u_p, logpost
        if (raw.cols() < bank.p_u + 2)
            throw ConfigError("chain file has too few columns");
        Eigen::MatrixXd us = raw.middleCols(1, bank.p_u);
        us = thin_chain(us, jget<long>(config, "thin", 1));
        std::vector<koh::PredictiveDistribution> preds;
        preds.reserve(static_cast<std::size_t>(us.rows()));
        for (Eigen::Index t = 0; t < us.rows(); ++t)
            preds.push_back(koh::posterior_predict(
                pre, new_bank, us.row(t).transpose(), threads));
        agg = koh::aggregate_predictions(preds);
    } else {
        agg = koh::posterior_predict(pre, new_bank, load_u_point(config),
                                     threads);
    }

    std::string out = "site";
    for (Eigen::Index j = 0; j < new_bank.field.X.cols(); ++j)
        out += ",x" + std::to_string(j + 1);
    out += ",mean,sd\n";
    for (Eigen::Index i = 0; i < agg.mean.size(); ++i) {
        out += std::to_string(i);
        for (Eigen::Index j = 0; j < new_bank.field.X.cols(); ++j)
            out += "," + io::format_double(new_bank.field.X(i, j));
        out += "," + io::format_double(agg.mean(i)) + "," +
               io::format_double(std::sqrt(std::max(0.0, agg.cov(i, i)))) + "\n";
    }
    io::write_text_file(rd.path + "/prediction.csv", out);
    std::vector<std::string> artifacts = {"prediction.csv"};
    if (jget<bool>(config, "full_cov", false)) {
        io::write_matrix_csv(rd.path + "/prediction_cov.csv", agg.cov);
        artifacts.push_back("prediction_cov.csv");
    }
    finalize_run(rd.path, "predict", config, artifacts);
    return rd.path;
}

std::string cmd_loo(const json& config, const std::string& store) {
    RunDir rd = prepare_run_dir(store, "loo", config);
    LockGuard lock(rd.path);
    const std::string bank_dir = jrequire_string(config, "bank");
    require_dir(bank_dir, "surrogate bank");
    oss::SurrogateBank bank = oss::load_bank(bank_dir);
    const int threads = jget<int>(config, "threads", 0);
    const std::string mode = jget<std::string>(config, "mode", "point");

    koh::LooReport report;
    if (mode == "point") {
        Eigen::VectorXd u_hat = load_u_point(config);
        const auto seed = jget<std::uint64_t>(config, "seed", 0);
        report = koh::loo_point(bank, u_hat,
                                fit_config(config, 5, rng::derive(seed, 0x100)),
                                threads);
    } else if (mode == "bayes") {
        gp::KernelHyperparams phi_b =
            load_phi_b(jrequire_string(config, "phi_b"));
        const std::string chain_path = jrequire_string(config, "chain");
        require_file(chain_path, "posterior chain");
        Eigen::MatrixXd raw = io::read_matrix_csv(chain_path);
        if (raw.cols() < bank.p_u + 2)
            throw ConfigError("chain file has too few columns");
        Eigen::MatrixXd us = thin_chain(raw.middleCols(1, bank.p_u),
                                        jget<long>(config, "thin", 1));
        report = koh::loo_full_bayes(bank, phi_b, us, threads);
    } else {
        throw ConfigError("mode must be 'point' or 'bayes', got '" + mode + "'");
    }

    std::string out = "site,y,pred_mean,pred_sd,residual\n";
    for (Eigen::Index i = 0; i < bank.n_sites(); ++i) {
        out += std::to_string(i) + "," + io::format_double(bank.field.y(i)) +
               "," + io::format_double(report.pred_mean(i)) + "," +
               io::format_double(report.pred_sd(i)) + "," +
               io::format_double(report.residuals(i)) + "\n";
    }
    io::write_text_file(rd.path + "/loo.csv", out);
    json summary{{"rmse", report.rmse}, {"mode", mode}};
    if (report.coverage95 >= 0.0) summary["coverage95"] = report.coverage95;
    write_json_file(rd.path + "/coverage.json", summary);
    finalize_run(rd.path, "loo", config, {"loo.csv", "coverage.json"});
    return rd.path;
}

std::string cmd_toy_e2e(const json& config, const std::string& store) {
    RunDir rd = prepare_run_dir(store, "toy-e2e", config);
    LockGuard lock(rd.path);
    const auto seed = jget<std::uint64_t>(config, "seed", 0);
    const int threads = jget<int>(config, "threads", 0);
    const auto n_f = jget<Eigen::Index>(config, "n_f", 10);
    const auto n_per_site = jget<Eigen::Index>(config, "n_per_site", 200);
    const auto global_n_m = jget<Eigen::Index>(config, "global_n_m", 500);
    const double noise_sd = jget<double>(config, "noise_sd", 0.02);
    const auto n_test = jget<Eigen::Index>(config, "n_test_per_site", 200);
    calib::PriorSpec prior = prior_from_config(config);
    json timing;
    auto t0 = std::chrono::steady_clock::now();

    sim::FieldDataset field = sim::gen_field(n_f, noise_sd, rng::derive(seed, 1));
    save_field(field, rd.path);
    sim::ToySimulator simulator;

    oss::BuildConfig bc;
    bc.n_per_site = n_per_site;
    bc.seed = rng::derive(seed, 2);
    bc.fit = fit_config(config, 5, rng::derive(seed, 3));
    bc.threads = threads;
    oss::SurrogateBank bank = oss::build_bank(field, simulator, bc);
    oss::save_bank(bank, rd.path + "/bank");
    timing["build_bank_s"] = elapsed_since(t0);
    t0 = std::chrono::steady_clock::now();

    design::DesignMatrix joint_design =
        design::maximin_lhs(global_n_m, 1 + bank.p_u, rng::derive(seed, 4));
    gp::FitConfig global_fit = fit_config(config, 30, rng::derive(seed, 5));
    oss::GlobalSurrogate global =
        oss::build_global(joint_design, simulator, global_fit);
    timing["build_global_s"] = elapsed_since(t0);
    t0 = std::chrono::steady_clock::now();

    const std::uint64_t test_seed = rng::derive(seed, 6);
    oss::RmseReport rb =
        oss::rmse_eval_bank(bank, simulator, n_test, test_seed, threads);
    oss::RmseReport rg = oss::rmse_eval_global(global, field, bank.p_u,
                                               simulator, n_test, test_seed,
                                               threads);
    {
        std::map<Eigen::Index, double> oss_by_site, glob_by_site;
        for (std::size_t k = 0; k < rb.rmse.size(); ++k)
            oss_by_site[rb.site_index[k]] = rb.rmse[k];
        for (std::size_t k = 0; k < rg.rmse.size(); ++k)
            glob_by_site[rg.site_index[k]] = rg.rmse[k];
        std::string out = "site,oss_rmse,global_rmse\n";
        for (Eigen::Index i = 0; i < n_f; ++i) {
            out += std::to_string(i) + ",";
            out += oss_by_site.count(i) ? io::format_double(oss_by_site[i])
                                        : std::string("NA");
            out += ",";
            out += glob_by_site.count(i) ? io::format_double(glob_by_site[i])
                                         : std::string("NA");
            out += "\n";
        }
        io::write_text_file(rd.path + "/rmse_compare.csv", out);
        write_json_file(
            rd.path + "/rmse_summary.json",
            json{{"oss_median", rb.median()},
                 {"oss_mean", rb.mean()},
                 {"global_median", rg.median()},
                 {"global_mean", rg.mean()},
                 {"oss_missing_fraction",
                  static_cast<double>(bank.n_requested_total() -
                                      bank.n_converged_total()) /
                      static_cast<double>(bank.n_requested_total())},
                 {"global_missing_fraction",
                  static_cast<double>(global.n_requested - global.n_converged) /
                      static_cast<double>(global.n_requested)}});
    }
    timing["rmse_eval_s"] = elapsed_since(t0);
    t0 = std::chrono::steady_clock::now();

    std::vector<calib::ModularResult> solutions = calib::modular_optimize(
        bank, prior, jget<int>(config, "opt_restarts", 50),
        rng::derive(seed, 7), fit_config(config, 5, rng::derive(seed, 8)),
        threads);
    const calib::ModularResult& best = solutions.front();
    {
        json list = json::array();
        for (const auto& s : solutions)
            list.push_back(
                {{"u", vector_to_json(s.u_hat)}, {"log_score", s.log_score}});
        write_json_file(rd.path + "/modular.json",
                        json{{"solutions", list},
                             {"best",
                              {{"u", vector_to_json(best.u_hat)},
                               {"log_score", best.log_score},
                               {"phi_b", hp_to_json(best.phi_b)},
                               {"bias_loglik", best.bias_loglik}}}});
    }
    timing["modular_optimize_s"] = elapsed_since(t0);
    t0 = std::chrono::steady_clock::now();

    koh::JointPrecompute pre = koh::precompute(bank, best.phi_b);
    calib::McmcConfig mc;
    mc.n_sweeps = jget<long>(config, "n_sweeps", 20000);
    mc.seed = rng::derive(seed, 9);
    mc.pilot_tune = jget<bool>(config, "pilot", true);
    mc.sigma = calib::default_proposal_sigma(bank.p_u);
    mc.u_init = best.u_hat;
    calib::PosteriorChain chain = calib::mcmc(
        [&](const Eigen::VectorXd& u) {
            return koh::joint_loglik(pre, u, threads);
        },
        prior, mc);
    timing["mcmc_s"] = elapsed_since(t0);

    const double burn = jget<double>(config, "burn_in", 0.2);
    calib::PosteriorChain post = calib::discard_burn_in(chain, burn);
    write_chain_csv(rd.path + "/posterior_samples.csv", chain);
    write_json_file(rd.path + "/posterior_summary.json",
                    chain_summary(chain, post, burn));
    Eigen::VectorXd u_map = calib::map_extract(post);
    write_json_file(rd.path + "/map.json",
                    json{{"u", vector_to_json(u_map)},
                         {"source", "mcmc"},
                         {"modular_u", vector_to_json(best.u_hat)},
                         {"modular_log_score", best.log_score}});
    write_json_file(rd.path + "/timing.json", timing);
    finalize_run(rd.path, "toy-e2e", config,
                 {"field_x.csv", "field_y.csv", "bank", "rmse_compare.csv",
                  "rmse_summary.json", "modular.json", "posterior_samples.csv",
                  "posterior_summary.json", "map.json", "timing.json"});
    return rd.path;
}

int run_command(const std::string& command, const json& config,
                const std::string& store, std::string* run_dir_out) {
    try {
        std::string dir;
        if (command == "toy-e2e") dir = cmd_toy_e2e(config, store);
        else if (command == "design") dir = cmd_design(config, store);
        else if (command == "simulate") dir = cmd_simulate(config, store);
        else if (command == "fit") dir = cmd_fit(config, store);
        else if (command == "calibrate-opt") dir = cmd_calibrate_opt(config, store);
        else if (command == "calibrate-mcmc")
            dir = cmd_calibrate_mcmc(config, store);
        else if (command == "predict") dir = cmd_predict(config, store);
        else if (command == "loo") dir = cmd_loo(config, store);
        else throw ConfigError("unknown command: " + command);
        if (run_dir_out) *run_dir_out = dir;
        std::cout << dir << "\n";
        return kExitOk;
    } catch (const UpstreamMissing& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUpstream;
    } catch (const SimulatorFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSimulator;
    } catch (const ProtocolError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSimulator;
    } catch (const SiteStarvation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSimulator;
    } catch (const NumericalFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const MissingnessError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const Error& e) {
        // remaining toolkit errors are config/usage problems
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}

}  // namespace oscal::cli
