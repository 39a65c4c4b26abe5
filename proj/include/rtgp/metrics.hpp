#pragma once

// Estimation, prediction and selection metrics, the median probability rule, the ridge
// baseline and the replicate summary table.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rtgp/errors.hpp"
#include "rtgp/rng.hpp"

namespace rtgp {

struct ParamError {
    double bias = 0.0;  ///< mean absolute deviation
    double mse = 0.0;
};

inline ParamError param_error(const Eigen::VectorXd& truth, const Eigen::VectorXd& estimate) {
    detail::require(truth.size() == estimate.size() && truth.size() >= 1, "param_error: length mismatch");
    const Eigen::ArrayXd d = (truth - estimate).array();
    return {d.abs().mean(), d.square().mean()};
}

/// R^2 is the squared Pearson correlation; it is absent when either vector is constant.
struct PredictiveMetrics {
    std::optional<double> r2;
    double mse = 0.0;
};

inline PredictiveMetrics predictive_metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat) {
    detail::require(y.size() == y_hat.size(), "predictive_metrics: length mismatch");
    detail::require(y.size() >= 2, "predictive_metrics: need at least two observations");
    PredictiveMetrics out;
    out.mse = (y - y_hat).squaredNorm() / static_cast<double>(y.size());
    const Eigen::ArrayXd a = y.array() - y.mean();
    const Eigen::ArrayXd b = y_hat.array() - y_hat.mean();
    const double saa = a.square().sum(), sbb = b.square().sum();
    if (saa > 0.0 && sbb > 0.0) {
        const double sab = (a * b).sum();
        out.r2 = std::min(1.0, sab * sab / (saa * sbb));
    }
    return out;
}

/// Counts and rates; a rate is absent when its denominator is zero.
struct SelectionConfusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    std::optional<double> tpr, tdr, fpr, fdr;
};

inline SelectionConfusion selection_confusion(const std::vector<bool>& truth, const std::vector<bool>& estimate) {
    detail::require(truth.size() == estimate.size(), "selection_confusion: length mismatch");
    SelectionConfusion c;
    for (std::size_t j = 0; j < truth.size(); ++j) {
        if (truth[j] && estimate[j]) ++c.tp;
        else if (!truth[j] && estimate[j]) ++c.fp;
        else if (!truth[j] && !estimate[j]) ++c.tn;
        else ++c.fn;
    }
    auto rate = [](long num, long den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    c.tpr = rate(c.tp, c.tp + c.fn);
    c.tdr = rate(c.tp, c.tp + c.fp);
    c.fpr = rate(c.fp, c.fp + c.tn);
    c.fdr = rate(c.fp, c.fp + c.tp);
    return c;
}

/// Include vertex j when p_j >= tau.
inline std::vector<bool> median_probability_selection(const Eigen::VectorXd& p, double tau = 0.5) {
    detail::require(tau >= 0.0 && tau <= 1.0, "median_probability_selection: tau outside [0, 1]");
    std::vector<bool> mask(static_cast<std::size_t>(p.size()));
    for (Eigen::Index j = 0; j < p.size(); ++j) {
        detail::require(p[j] >= 0.0 && p[j] <= 1.0, "median_probability_selection: probability outside [0, 1]");
        mask[static_cast<std::size_t>(j)] = p[j] >= tau;
    }
    return mask;
}

inline std::vector<bool> nonzero_mask(const Eigen::VectorXd& beta) {
    std::vector<bool> mask(static_cast<std::size_t>(beta.size()));
    for (Eigen::Index j = 0; j < beta.size(); ++j) mask[static_cast<std::size_t>(j)] = beta[j] != 0.0;
    return mask;
}

// ---- ridge baseline ----------------------------------------------------------------------

struct RidgeSolution {
    Eigen::VectorXd coefficients;
    double intercept = 0.0;
};

/// Ridge with an unpenalized intercept. Uses the N x N dual system when M > N.
inline RidgeSolution ridge_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double penalty) {
    detail::require(x.rows() == y.size() && y.size() >= 2, "ridge_solve: need matching X and y with N >= 2");
    detail::require(penalty >= 0.0 && std::isfinite(penalty), "ridge_solve: penalty must be nonnegative");
    const Eigen::RowVectorXd xbar = x.colwise().mean();
    const double ybar = y.mean();
    const Eigen::MatrixXd xc = x.rowwise() - xbar;
    const Eigen::VectorXd yc = y.array() - ybar;
    RidgeSolution out;
    const bool dual = x.cols() > x.rows();
    Eigen::MatrixXd a = dual ? Eigen::MatrixXd(xc * xc.transpose()) : Eigen::MatrixXd(xc.transpose() * xc);
    a.diagonal().array() += penalty;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-13)
        throw NumericalError("ridge_solve: normal equations are singular at penalty " + std::to_string(penalty));
    out.coefficients = dual ? Eigen::VectorXd(xc.transpose() * llt.solve(yc)) : Eigen::VectorXd(llt.solve(xc.transpose() * yc));
    out.intercept = ybar - xbar.dot(out.coefficients);
    return out;
}

struct RidgeConfig {
    std::vector<double> penalties{1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5};
    double validation_fraction = 0.2;
    std::uint64_t seed = 1;
};

struct RidgeFit {
    Eigen::VectorXd coefficients;
    double intercept = 0.0;
    double penalty = 0.0;
    std::vector<double> validation_mse;  ///< one per candidate penalty
};

/// Pick the penalty by validation MSE on a seeded holdout (ties go to the larger penalty),
/// then refit on all rows.
inline RidgeFit ridge_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const RidgeConfig& cfg = {}) {
    const Eigen::Index n = y.size();
    detail::require(n >= 2 && x.rows() == n, "ridge_fit: need matching X and y with N >= 2");
    detail::require(!cfg.penalties.empty(), "ridge_fit: empty penalty grid");
    detail::require(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0,
                    "ridge_fit: validation fraction must lie in (0, 1)");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Rng rng = make_stream(cfg.seed, "ridge-split");
    std::shuffle(idx.begin(), idx.end(), rng);
    const Eigen::Index n_val =
        std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::round(cfg.validation_fraction * n)), 1, n - 2);
    const std::vector<Eigen::Index> val(idx.begin(), idx.begin() + n_val);
    const std::vector<Eigen::Index> tr(idx.begin() + n_val, idx.end());
    const Eigen::MatrixXd xtr = x(tr, Eigen::all), xva = x(val, Eigen::all);
    const Eigen::VectorXd ytr = y(tr), yva = y(val);

    RidgeFit out;
    double best = std::numeric_limits<double>::infinity();
    for (double pen : cfg.penalties) {
        const RidgeSolution s = ridge_solve(xtr, ytr, pen);
        const double mse = ((xva * s.coefficients).array() + s.intercept - yva.array()).square().mean();
        out.validation_mse.push_back(mse);
        if (mse < best || (mse == best && pen > out.penalty)) {
            best = mse;
            out.penalty = pen;
        }
    }
    const RidgeSolution full = ridge_solve(x, y, out.penalty);
    out.coefficients = full.coefficients;
    out.intercept = full.intercept;
    return out;
}

// ---- replicate summary table ----------------------------------------------------------------

/// Accumulates one value per (method, metric, replicate) and reports mean and Monte-Carlo
/// standard error. Methods and metrics keep their insertion order.
class MetricTable {
public:
    void add(const std::string& method, const std::string& metric, std::optional<double> value) {
        if (std::find(methods_.begin(), methods_.end(), method) == methods_.end()) methods_.push_back(method);
        if (std::find(metrics_.begin(), metrics_.end(), metric) == metrics_.end()) metrics_.push_back(metric);
        auto& cell = cells_[{method, metric}];
        if (value) cell.push_back(*value);
    }

    /// Mean and standard error over the defined values; absent when there are none.
    std::optional<std::pair<double, double>> summary(const std::string& method, const std::string& metric) const {
        const auto it = cells_.find({method, metric});
        if (it == cells_.end() || it->second.empty()) return std::nullopt;
        const auto& v = it->second;
        const double n = static_cast<double>(v.size());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        const double se = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
        return std::make_pair(mean, se);
    }

    /// One row per method: method,<metric>_mean,<metric>_se,... ; undefined cells print NA.
    void write_csv(std::ostream& os, double scale = 1.0) const {
        os << "method";
        for (const auto& m : metrics_) os << ',' << m << "_mean," << m << "_se";
        os << '\n';
        os.precision(10);
        for (const auto& meth : methods_) {
            os << meth;
            for (const auto& m : metrics_) {
                const auto s = summary(meth, m);
                if (s) os << ',' << s->first * scale << ',' << s->second * scale;
                else os << ",NA,NA";
            }
            os << '\n';
        }
    }

    const std::vector<std::string>& methods() const noexcept { return methods_; }
    const std::vector<std::string>& metrics() const noexcept { return metrics_; }

private:
    std::vector<std::string> methods_, metrics_;
    std::map<std::pair<std::string, std::string>, std::vector<double>> cells_;
};

}  // namespace rtgp
