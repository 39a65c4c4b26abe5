#pragma once

// Command-line surface: simulate, basis, fit, predict, evaluate and export-map.
//
// Every setting can come from a `--config` file or a flag; flags win, and the resolved
// value of every setting (defaults included) is written to the run manifest.
// Exit status: 0 success, 1 usage error, 2 data or format error, 3 numerical error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "rtgp/cavi.hpp"
#include "rtgp/errors.hpp"
#include "rtgp/geometry.hpp"
#include "rtgp/gibbs.hpp"
#include "rtgp/io.hpp"
#include "rtgp/kernel_basis.hpp"
#include "rtgp/metrics.hpp"
#include "rtgp/model.hpp"
#include "rtgp/simulate.hpp"

namespace rtgp::cli {

namespace fs = std::filesystem;

/// Malformed invocation: bad flag values, unknown configuration keys.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Named settings for one subcommand with default < config file < flag precedence.
class Settings {
public:
    explicit Settings(CLI::App* app) : app_(app) {
        app_->add_option("--config", config_path_, "key = value settings file");
    }

    void declare(const std::string& key, std::string default_value, const std::string& help) {
        std::string flag = "--" + key;
        for (char& c : flag)
            if (c == '_') c = '-';
        defaults_[key] = std::move(default_value);
        order_.push_back(key);
        options_[key] = app_->add_option(flag, raw_[key], help + " (default: " + defaults_[key] + ")");
    }

    void resolve() {
        std::map<std::string, std::string> from_file;
        if (!config_path_.empty()) {
            std::ifstream in(config_path_);
            if (!in) throw FormatError("cannot open config file " + config_path_, 0);
            std::stringstream ss;
            ss << in.rdbuf();
            try {
                from_file = io::parse_config(ss.str(), order_);
            } catch (const InvalidArgument& e) {
                throw UsageError(e.what());
            }
        }
        for (const auto& key : order_) {
            if (options_[key]->count() > 0) resolved_[key] = raw_[key];
            else if (auto it = from_file.find(key); it != from_file.end()) resolved_[key] = it->second;
            else resolved_[key] = defaults_[key];
        }
    }

    const std::string& str(const std::string& key) const { return resolved_.at(key); }

    double num(const std::string& key) const {
        const std::string& v = str(key);
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw UsageError("setting " + key + ": '" + v + "' is not a number");
        }
    }

    long integer(const std::string& key) const {
        const std::string& v = str(key);
        try {
            std::size_t used = 0;
            const long n = std::stol(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return n;
        } catch (const std::exception&) {
            throw UsageError("setting " + key + ": '" + v + "' is not an integer");
        }
    }

    std::uint64_t seed(const std::string& key) const {
        const std::string& v = str(key);
        try {
            std::size_t used = 0;
            const unsigned long long n = std::stoull(v, &used);
            if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
            return n;
        } catch (const std::exception&) {
            throw UsageError("setting " + key + ": '" + v + "' is not a nonnegative integer");
        }
    }

    std::string path(const std::string& key) const {
        const std::string& v = str(key);
        if (v.empty()) throw UsageError("setting " + key + " is required");
        return v;
    }

    const std::map<std::string, std::string>& resolved() const noexcept { return resolved_; }

    std::uint64_t fingerprint() const {
        std::string all;
        for (const auto& [k, v] : resolved_) all += k + "=" + v + "\n";
        return rtgp::detail::fnv1a(all);
    }

private:
    CLI::App* app_;
    std::string config_path_;
    std::vector<std::string> order_;
    std::map<std::string, std::string> defaults_, raw_, resolved_;
    std::map<std::string, CLI::Option*> options_;
};

namespace detail {

inline Hyperparameters hyper_from(const Settings& s) {
    Hyperparameters h;
    h.sigma_beta0_sq = s.num("sigma_beta0_sq");
    h.s_beta = s.num("s_beta");
    h.s_eps = s.num("s_eps");
    h.s_alpha = s.num("s_alpha");
    h.t_min = s.num("t_min");
    h.t_max = s.num("t_max");
    h.n_delta = static_cast<int>(s.integer("n_delta"));
    h.validate();
    return h;
}

inline void declare_hyper(Settings& s) {
    s.declare("sigma_beta0_sq", "100", "prior variance of the intercept");
    s.declare("s_beta", "1", "half-Cauchy scale for sigma_beta");
    s.declare("s_eps", "1", "half-Cauchy scale for sigma_eps");
    s.declare("s_alpha", "1", "half-Cauchy scale for sigma_alpha");
    s.declare("t_min", "0", "smallest threshold on the grid");
    s.declare("t_max", "2", "largest threshold on the grid");
    s.declare("n_delta", "21", "number of grid values");
}

inline Eigen::VectorXd read_vector(const std::string& path) {
    const Eigen::MatrixXd m = io::read_matrix(path);
    if (m.cols() != 1 && m.rows() != 1)
        throw FormatError(path + ": expected a single row or column, got " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()), 8);
    return m.cols() == 1 ? Eigen::VectorXd(m.col(0)) : Eigen::VectorXd(m.row(0).transpose());
}

inline std::vector<bool> read_mask(const std::string& path) {
    const Eigen::VectorXd v = read_vector(path);
    std::vector<bool> mask(static_cast<std::size_t>(v.size()));
    for (Eigen::Index j = 0; j < v.size(); ++j) mask[static_cast<std::size_t>(j)] = v[j] != 0.0;
    return mask;
}

inline std::string rep_dir(int r) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "rep_%03d", r);
    return buf;
}

/// Append one record to a JSON-lines manifest as part of a staged batch.
inline void stage_manifest(io::OutputBatch& out, const fs::path& path, const std::string& record) {
    std::string existing;
    if (fs::exists(path)) existing = io::detail::read_file(path);
    out.add(path, existing + record);
}

inline std::map<std::string, std::uint64_t> hash_inputs(const std::vector<std::string>& paths) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& p : paths) {
        if (fs::is_directory(p)) {
            for (const auto& entry : fs::directory_iterator(p))
                if (entry.is_regular_file()) out[entry.path().string()] = io::file_hash(entry.path());
        } else {
            out[p] = io::file_hash(p);
        }
    }
    return out;
}

}  // namespace detail

// ---- subcommands ------------------------------------------------------------------------

inline int run_simulate(const Settings& s, const std::string& out_dir, std::ostream& log) {
    const Eigen::Index m = s.integer("m");
    if (m < 1) throw UsageError("--m must be >= 1");
    const VertexSet v = fibonacci_sphere(m, s.num("radius"));
    KernelParams kp{s.num("phi"), s.num("nu")};
    kp.validate();
    const Eigen::MatrixXd k = gram(v, kp, s.num("jitter"));
    const BasisExpansion full = truncate_basis(k, KappaTarget{s.num("kappa")});

    StudyConfig cfg;
    cfg.n_train = s.integer("n_train");
    cfg.n_test = s.integer("n_test");
    cfg.reps = static_cast<int>(s.integer("reps"));
    cfg.sigma_beta_sq = s.num("sigma_beta_sq");
    cfg.sparsity = s.num("sparsity");
    cfg.sigma_x_sq = s.num("sigma_x_sq");
    cfg.beta0 = s.num("beta0");
    cfg.sigma_eps_sq = s.num("sigma_eps_sq");
    cfg.seed = s.seed("seed");
    const long truth_terms = s.integer("truth_terms");
    if (truth_terms < 0) throw UsageError("--truth-terms must be >= 0");
    const BasisExpansion truth_basis =
        truth_terms == 0 ? full : full.leading(std::min<Eigen::Index>(truth_terms, full.size()));
    const Study study = replicate_study(truth_basis, full, cfg);

    const fs::path dir(out_dir);
    io::OutputBatch out;
    {
        const auto& c = v.coords();
        out.add(dir / "vertices.csv", io::csv_table({"x", "y", "z"}, {c.col(0), c.col(1), c.col(2)}));
    }
    out.add_matrix(dir / "truth_beta.mat", study.truth.beta_true);
    Eigen::VectorXd mask(m);
    for (Eigen::Index j = 0; j < m; ++j) mask[j] = study.truth.support_mask[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
    out.add_matrix(dir / "truth_mask.mat", mask);
    io::json truth = {{"beta0", study.truth.beta0_true},
                      {"sigma_eps_sq", study.truth.sigma_eps_sq_true},
                      {"active", study.truth.active()},
                      {"generator_basis_size", full.size()},
                      {"generator_kappa", full.kappa_achieved},
                      {"truth_basis_size", truth_basis.size()}};
    out.add(dir / "truth.json", truth.dump(1) + "\n");
    for (int r = 0; r < cfg.reps; ++r) {
        const fs::path rd = dir / detail::rep_dir(r);
        const auto& rep = study.replicates[static_cast<std::size_t>(r)];
        out.add_matrix(rd / "train_x.mat", rep.train.x);
        out.add_matrix(rd / "train_y.mat", rep.train.y);
        out.add_matrix(rd / "test_x.mat", rep.test.x);
        out.add_matrix(rd / "test_y.mat", rep.test.y);
    }
    detail::stage_manifest(out, dir / "manifest.jsonl", io::manifest_record("simulate", s.resolved(), out.hashes()));
    out.commit();
    log << "simulate: " << cfg.reps << " replicates, " << study.truth.active() << " of " << m
        << " vertices active, written to " << dir.string() << "\n";
    return kOk;
}

inline int run_basis(const Settings& s, const std::string& out_dir, std::ostream& log) {
    const std::string vpath = s.path("vertices");
    const Eigen::MatrixXd raw = io::read_any_matrix(vpath);
    if (raw.cols() != 3) throw FormatError(vpath + ": vertex file must have 3 columns", 16);
    double radius = s.num("radius");
    if (radius <= 0.0) radius = raw.rowwise().norm().mean();
    const VertexSet v = VertexSet::from_points(PointMatrix(raw), radius);
    KernelParams kp{s.num("phi"), s.num("nu")};
    kp.validate();
    const double kappa = s.num("kappa");
    const long l = s.integer("l");
    if ((kappa > 0.0) == (l > 0)) throw UsageError("basis: give exactly one of --kappa or --l");
    const std::string solver_name = s.str("solver");
    EigenSolverKind solver;
    if (solver_name == "auto") solver = EigenSolverKind::Auto;
    else if (solver_name == "dense") solver = EigenSolverKind::Dense;
    else if (solver_name == "iterative") solver = EigenSolverKind::Iterative;
    else throw UsageError("basis: --solver must be auto, dense or iterative");

    const double jitter = s.num("jitter");
    const Eigen::MatrixXd k = gram(v, kp, jitter);
    BasisSelector sel = kappa > 0.0 ? BasisSelector(KappaTarget{kappa}) : BasisSelector(FixedCount{l});
    const BasisExpansion b = truncate_basis(k, sel, solver);
    BasisManifest man;
    man.kernel = kp;
    man.jitter = jitter;
    if (kappa > 0.0) man.kappa_target = kappa;
    else man.fixed_count = l;
    man.size = b.size();
    man.kappa_achieved = b.kappa_achieved;

    const fs::path dir(out_dir);
    io::OutputBatch out;
    io::stage_basis(out, dir, b, man);
    detail::stage_manifest(out, dir / "manifest.jsonl",
                           io::manifest_record("basis", s.resolved(), out.hashes(), detail::hash_inputs({vpath})));
    out.commit();
    log << "basis: L = " << b.size() << " captures " << b.kappa_achieved << " of total variation\n";
    return kOk;
}

inline int run_fit(const Settings& s, const std::string& out_path, std::ostream& log) {
    const std::string engine = s.str("engine");
    if (engine != "vi" && engine != "gibbs") throw UsageError("fit: --engine must be vi or gibbs");
    const std::string x_path = s.path("x"), y_path = s.path("y"), basis_path = s.path("basis");
    Dataset data = Dataset::make(detail::read_vector(y_path), io::read_matrix(x_path));
    io::LoadedBasis lb = io::load_basis(basis_path);
    const long l = s.integer("l");
    if (l < 0) throw UsageError("fit: --l must be nonnegative");
    BasisExpansion basis = l > 0 ? lb.basis.leading(l) : lb.basis;
    BasisManifest manifest = lb.manifest;
    manifest.size = basis.size();
    manifest.kappa_achieved = basis.kappa_achieved;
    const Hyperparameters h = detail::hyper_from(s);

    FitResult fit;
    std::string trace_csv, timing_csv;
    std::optional<Eigen::MatrixXd> chain_matrix;
    std::vector<std::string> chain_names;
    if (engine == "vi") {
        CaviConfig cfg;
        cfg.max_iter = static_cast<int>(s.integer("max_iter"));
        cfg.elbo_rel_tol = s.num("elbo_rel_tol");
        cfg.ridge_init_penalty = s.num("ridge_init_penalty");
        cfg.seed = s.seed("seed");
        cfg.selection_threshold = s.num("selection_threshold");
        cfg.block_size = s.integer("block_size");
        CaviEngine eng(data, basis, h, cfg);
        eng.run();
        fit = eng.result();
        const auto& tr = eng.elbo_trace();
        Eigen::VectorXd it(static_cast<Eigen::Index>(tr.size())), el(it.size());
        for (Eigen::Index i = 0; i < it.size(); ++i) {
            it[i] = static_cast<double>(i + 1);
            el[i] = tr[static_cast<std::size_t>(i)];
        }
        trace_csv = io::csv_table({"iteration", "elbo"}, {it, el});
        const auto& tm = eng.timings();
        std::vector<Eigen::VectorXd> cols(8, Eigen::VectorXd(it.size()));
        for (Eigen::Index i = 0; i < it.size(); ++i) {
            const auto& t = tm[static_cast<std::size_t>(i)];
            const double row[8] = {it[i], t.theta, t.alpha, t.delta, t.beta0, t.variances, t.aux, t.elbo};
            for (int c = 0; c < 8; ++c) cols[static_cast<std::size_t>(c)][i] = row[c];
        }
        timing_csv = io::csv_table({"iteration", "theta", "alpha", "delta", "beta0", "variances", "aux", "elbo"}, cols);
        log << "fit: CAVI finished after " << tr.size() << " sweeps, ELBO " << io::format_double(tr.back()) << "\n";
    } else {
        ChainConfig cfg;
        cfg.n_iter = s.integer("n_iter");
        cfg.burn_in = s.integer("burn_in");
        cfg.thin = s.integer("thin");
        cfg.seed = s.seed("seed");
        cfg.ridge_init_penalty = s.num("ridge_init_penalty");
        const ChainOutput chain = run_chain(data, basis, h, cfg);
        fit = summarize_chain(chain, basis, h, s.num("selection_threshold"));
        const Eigen::Index t = chain.size();
        Eigen::VectorXd it(t);
        for (Eigen::Index i = 0; i < t; ++i) it[i] = static_cast<double>(cfg.burn_in + (i + 1) * cfg.thin);
        trace_csv = io::csv_table({"iteration", "beta0", "delta", "sigma_eps_sq", "sigma_beta_sq", "sigma_alpha_sq"},
                                  {it, chain.samples.col(0), chain.samples.col(chain.col_delta()),
                                   chain.samples.col(chain.col_sigma_eps_sq()),
                                   chain.samples.col(chain.col_sigma_beta_sq()),
                                   chain.samples.col(chain.col_sigma_alpha_sq())});
        if (!s.str("chain").empty()) {
            chain_matrix = chain.samples;
            chain_names = chain.names();
        }
        log << "fit: Gibbs chain stored " << t << " draws\n";
    }
    fit.basis = manifest;

    const auto inputs = detail::hash_inputs({x_path, y_path, basis_path});
    std::string fp_src = io::hex64(s.fingerprint());
    for (const auto& [p, hh] : inputs) fp_src += io::hex64(hh);
    const std::string fingerprint = io::hex64(rtgp::detail::fnv1a(fp_src));

    io::OutputBatch out;
    out.add(out_path, io::encode_fit(fit, fingerprint));
    const std::string trace_path = s.str("trace").empty() ? out_path + ".trace.csv" : s.str("trace");
    out.add(trace_path, trace_csv);
    if (!s.str("timing").empty() && !timing_csv.empty()) out.add(s.str("timing"), timing_csv);
    if (chain_matrix) {
        out.add_matrix(s.str("chain"), *chain_matrix);
        std::string names = "column,parameter\n";
        for (std::size_t c = 0; c < chain_names.size(); ++c) names += std::to_string(c) + "," + chain_names[c] + "\n";
        out.add(s.str("chain") + ".names.csv", names);
    }
    std::map<std::string, std::uint64_t> recorded = out.hashes();
    if (!s.str("timing").empty()) recorded.erase(s.str("timing"));
    detail::stage_manifest(out, out_path + ".manifest.jsonl", io::manifest_record("fit", s.resolved(), recorded, inputs));
    out.commit();
    return kOk;
}

inline int run_predict(const Settings& s, const std::string& out_path, std::ostream&) {
    const FitResult fit = io::load_fit(s.path("fit"));
    const Eigen::VectorXd yhat = predict(fit, io::read_matrix(s.path("x")));
    io::OutputBatch out;
    out.add(out_path, io::csv_table({"prediction"}, {yhat}));
    out.commit();
    return kOk;
}

inline int run_export_map(const Settings& s, const std::string& out_path, std::ostream&) {
    const FitResult fit = io::load_fit(s.path("fit"));
    const Eigen::Index m = fit.vertices();
    Eigen::VectorXd idx(m), sel(m);
    const auto mask = median_probability_selection(fit.inclusion_prob, fit.selection_threshold);
    for (Eigen::Index j = 0; j < m; ++j) {
        idx[j] = static_cast<double>(j);
        sel[j] = mask[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
    }
    io::OutputBatch out;
    out.add(out_path, io::csv_table({"vertex", "beta_tilde", "inclusion_prob", "beta_map", "selected"},
                                    {idx, fit.beta_tilde_mean, fit.inclusion_prob, fit.beta_map, sel}));
    out.commit();
    return kOk;
}

struct EvaluateInputs {
    std::vector<std::string> fits, test_x, test_y, train_x, train_y;
};

/// Table of replicate means and standard errors: one row per method.
inline int run_evaluate(const Settings& s, const EvaluateInputs& in, const std::string& out_path, std::ostream& log) {
    if (in.fits.empty()) throw UsageError("evaluate: at least one --fit is required");
    if (in.test_x.size() != in.fits.size() || in.test_y.size() != in.fits.size())
        throw UsageError("evaluate: need one --test-x and --test-y per --fit");
    if (in.train_x.size() != in.train_y.size() || (!in.train_x.empty() && in.train_x.size() != in.fits.size()))
        throw UsageError("evaluate: --train-x/--train-y must be given once per --fit or not at all");
    const Eigen::VectorXd beta_true = detail::read_vector(s.path("truth_beta"));
    const std::vector<bool> mask =
        s.str("truth_mask").empty() ? nonzero_mask(beta_true) : detail::read_mask(s.str("truth_mask"));
    const std::string method = s.str("method");
    MetricTable table;
    auto add_prediction = [&](const std::string& name, const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
        const PredictiveMetrics pm = predictive_metrics(y, yhat);
        table.add(name, "r2_test", pm.r2);
        table.add(name, "mse_test", pm.mse);
    };
    for (std::size_t r = 0; r < in.fits.size(); ++r) {
        const FitResult fit = io::load_fit(in.fits[r]);
        if (fit.vertices() != beta_true.size()) throw InvalidArgument("evaluate: fit and truth disagree on vertex count");
        const ParamError pe = param_error(beta_true, fit.beta_map);
        table.add(method, "beta_bias", pe.bias);
        table.add(method, "beta_mse", pe.mse);
        const Eigen::VectorXd yte = detail::read_vector(in.test_y[r]);
        add_prediction(method, yte, predict(fit, io::read_matrix(in.test_x[r])));
        const SelectionConfusion c =
            selection_confusion(mask, median_probability_selection(fit.inclusion_prob, fit.selection_threshold));
        table.add(method, "tpr", c.tpr);
        table.add(method, "tdr", c.tdr);
        table.add(method, "fpr", c.fpr);
        table.add(method, "fdr", c.fdr);
        if (!in.train_x.empty()) {
            RidgeConfig rc;
            rc.seed = s.seed("seed");
            const RidgeFit rf = ridge_fit(io::read_matrix(in.train_x[r]), detail::read_vector(in.train_y[r]), rc);
            const ParamError rp = param_error(beta_true, rf.coefficients);
            table.add("Ridge", "beta_bias", rp.bias);
            table.add("Ridge", "beta_mse", rp.mse);
            Eigen::VectorXd yhat = io::read_matrix(in.test_x[r]) * rf.coefficients;
            yhat.array() += rf.intercept;
            add_prediction("Ridge", yte, yhat);
            for (const char* k : {"tpr", "tdr", "fpr", "fdr"}) table.add("Ridge", k, std::nullopt);
        }
    }
    std::ostringstream os;
    table.write_csv(os, s.num("scale"));
    io::OutputBatch out;
    out.add(out_path, os.str());
    out.commit();
    log << "evaluate: " << in.fits.size() << " replicates summarized\n";
    return kOk;
}

// ---- dispatch ------------------------------------------------------------------------------

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& log = std::cout,
                        std::ostream& err = std::cerr) {
    CLI::App app{"Relaxed-thresholded Gaussian process scalar-on-image regression"};
    app.require_subcommand(1);

    auto* sim = app.add_subcommand("simulate", "generate replicated synthetic datasets with a known truth");
    Settings sim_s(sim);
    std::string sim_out;
    sim->add_option("--out", sim_out, "output directory")->required();
    sim_s.declare("m", "2000", "number of vertices on the sphere");
    sim_s.declare("radius", "1", "sphere radius");
    sim_s.declare("phi", "8", "kernel bandwidth");
    sim_s.declare("nu", "2", "kernel exponent");
    sim_s.declare("jitter", "1e-8", "diagonal jitter of the Gram matrix");
    sim_s.declare("kappa", "0.9999", "share of total variation kept by the generating basis");
    sim_s.declare("n_train", "500", "training subjects per replicate");
    sim_s.declare("n_test", "1000", "test subjects per replicate");
    sim_s.declare("reps", "10", "number of replicates");
    sim_s.declare("seed", "1", "master seed");
    sim_s.declare("sparsity", "0.1", "fraction of active vertices");
    sim_s.declare("truth_terms", "100", "leading basis terms spanning the true field; 0 uses the whole generator");
    sim_s.declare("sigma_beta_sq", "0.3", "variance of the truth's field coefficients");
    sim_s.declare("sigma_x_sq", "0.003", "variance of the input images' field coefficients");
    sim_s.declare("beta0", "2", "true intercept");
    sim_s.declare("sigma_eps_sq", "0.2", "noise variance");

    auto* bas = app.add_subcommand("basis", "eigendecompose the kernel on a vertex set and keep the leading terms");
    Settings bas_s(bas);
    std::string bas_out;
    bas->add_option("--out", bas_out, "output directory")->required();
    bas_s.declare("vertices", "", "vertex coordinates, CSV with columns x,y,z (header optional)");
    bas_s.declare("radius", "0", "sphere radius; 0 uses the mean vertex norm");
    bas_s.declare("phi", "8", "kernel bandwidth");
    bas_s.declare("nu", "2", "kernel exponent");
    bas_s.declare("jitter", "1e-8", "diagonal jitter of the Gram matrix");
    bas_s.declare("kappa", "0", "choose the smallest L reaching this share of total variation");
    bas_s.declare("l", "0", "keep exactly this many terms");
    bas_s.declare("solver", "auto", "eigensolver: auto, dense or iterative");

    auto* fit = app.add_subcommand("fit", "fit the model by CAVI or Gibbs sampling");
    Settings fit_s(fit);
    std::string fit_out;
    fit->add_option("--out", fit_out, "fit container path (JSON)")->required();
    fit_s.declare("engine", "vi", "vi or gibbs");
    fit_s.declare("x", "", "design matrix file (N x M)");
    fit_s.declare("y", "", "outcome matrix file (N x 1)");
    fit_s.declare("basis", "", "basis directory");
    fit_s.declare("l", "0", "use the leading L basis terms; 0 uses all stored");
    detail::declare_hyper(fit_s);
    fit_s.declare("max_iter", "500", "maximum CAVI sweeps");
    fit_s.declare("elbo_rel_tol", "1e-8", "stop when the relative ELBO change falls below this");
    fit_s.declare("ridge_init_penalty", "1", "ridge penalty of the warm start");
    fit_s.declare("seed", "1", "seed (Gibbs chain stream)");
    fit_s.declare("selection_threshold", "0.5", "inclusion probability needed for selection");
    fit_s.declare("block_size", "192", "vertices per block in the latent sweep");
    fit_s.declare("n_iter", "10000", "Gibbs sweeps");
    fit_s.declare("burn_in", "1000", "Gibbs sweeps discarded");
    fit_s.declare("thin", "1", "keep every thin-th sweep after burn-in");
    fit_s.declare("trace", "", "ELBO or chain trace CSV (default: <out>.trace.csv)");
    fit_s.declare("timing", "", "optional per-update timing CSV");
    fit_s.declare("chain", "", "optional matrix file with every stored Gibbs draw");

    auto* pred = app.add_subcommand("predict", "predict outcomes for new images");
    Settings pred_s(pred);
    std::string pred_out;
    pred->add_option("--out", pred_out, "predictions CSV")->required();
    pred_s.declare("fit", "", "fit container");
    pred_s.declare("x", "", "design matrix file");

    auto* eval = app.add_subcommand("evaluate", "estimation, prediction and selection metrics over replicates");
    Settings eval_s(eval);
    std::string eval_out;
    EvaluateInputs eval_in;
    eval->add_option("--out", eval_out, "metric table CSV")->required();
    eval->add_option("--fit", eval_in.fits, "fit container, one per replicate");
    eval->add_option("--test-x", eval_in.test_x, "test design per replicate");
    eval->add_option("--test-y", eval_in.test_y, "test outcomes per replicate");
    eval->add_option("--train-x", eval_in.train_x, "training design per replicate (adds the ridge baseline)");
    eval->add_option("--train-y", eval_in.train_y, "training outcomes per replicate");
    eval_s.declare("truth_beta", "", "true coefficient map (M x 1)");
    eval_s.declare("truth_mask", "", "true support (M x 1, nonzero = active); default is beta != 0");
    eval_s.declare("method", "RTGP", "row label for the fitted model");
    eval_s.declare("scale", "100", "multiply reported values by this factor");
    eval_s.declare("seed", "1", "seed for the ridge validation split");

    auto* exp = app.add_subcommand("export-map", "per-vertex coefficient and selection map");
    Settings exp_s(exp);
    std::string exp_out;
    exp->add_option("--out", exp_out, "map CSV")->required();
    exp_s.declare("fit", "", "fit container");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, log, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (sim->parsed()) {
            sim_s.resolve();
            return run_simulate(sim_s, sim_out, log);
        }
        if (bas->parsed()) {
            bas_s.resolve();
            return run_basis(bas_s, bas_out, log);
        }
        if (fit->parsed()) {
            fit_s.resolve();
            return run_fit(fit_s, fit_out, log);
        }
        if (pred->parsed()) {
            pred_s.resolve();
            return run_predict(pred_s, pred_out, log);
        }
        if (eval->parsed()) {
            eval_s.resolve();
            return run_evaluate(eval_s, eval_in, eval_out, log);
        }
        if (exp->parsed()) {
            exp_s.resolve();
            return run_export_map(exp_s, exp_out, log);
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kNumerical;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << "\n";
        return kData;
    } catch (const InvalidArgument& e) {
        err << "invalid data: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}

}  // namespace rtgp::cli
