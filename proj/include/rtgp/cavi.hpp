#pragma once

// Mean-field coordinate-ascent variational inference.
//
// q factorizes over beta0, theta, each alpha_j, delta, the three variances and their
// auxiliaries. Since the likelihood depends on alpha_j only through the indicators
// I(|alpha_j| > delta_k), the optimal q(alpha_j) is the prior-shaped normal
// N(m_j, v) tilted by a step function of |alpha_j| with a break at every grid value. It is
// therefore a mixture of 2K+1 truncated normals on the intervals
//   (-inf, -d_K), ..., (-d_2, -d_1), (-d_1, d_1), (d_1, d_2), ..., (d_K, inf)
// with d_1 < ... < d_K the sorted grid. With a single grid value this is the familiar
// three-component (negative tail, band, positive tail) form. Each update below is the exact
// maximizer of the ELBO in its factor, so the ELBO never decreases across updates.
//
// Expectations under delta use the conditional tail probabilities
//   P_jk = q(|alpha_j| > d_k),
// and per grid level the quantities Z_k = X diag(P_k) B (N x L) carry every cross-vertex
// interaction, so nothing of size M x M is ever formed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rtgp/distributions.hpp"
#include "rtgp/errors.hpp"
#include "rtgp/initialize.hpp"
#include "rtgp/model.hpp"

namespace rtgp {

/// Hold the three variances at fixed values; their factors and prior terms are dropped.
struct ClampedVariances {
    double sigma_eps_sq = 1.0;
    double sigma_beta_sq = 1.0;
    double sigma_alpha_sq = 1.0;
};

struct CaviConfig {
    int max_iter = 500;
    double elbo_rel_tol = 1e-8;
    double ridge_init_penalty = 1.0;
    /// Recorded with the fit. Initialization and updates are deterministic, so no stream
    /// is drawn from it.
    std::uint64_t seed = 1;
    double selection_threshold = 0.5;
    /// Vertices per block in the latent sweep.
    Eigen::Index block_size = 192;
    std::optional<ClampedVariances> clamp;

    void validate() const {
        detail::require(max_iter >= 1, "CaviConfig: max_iter must be >= 1");
        detail::require(elbo_rel_tol > 0.0, "CaviConfig: elbo_rel_tol must be positive");
        detail::require(ridge_init_penalty > 0.0, "CaviConfig: ridge_init_penalty must be positive");
        detail::require(selection_threshold >= 0.0 && selection_threshold <= 1.0,
                        "CaviConfig: selection threshold outside [0, 1]");
        detail::require(block_size >= 1, "CaviConfig: block_size must be >= 1");
        if (clamp)
            detail::require(clamp->sigma_eps_sq > 0.0 && clamp->sigma_beta_sq > 0.0 && clamp->sigma_alpha_sq > 0.0,
                            "CaviConfig: clamped variances must be positive");
    }
};

/// q(alpha_j) for all vertices: common component variance, per-vertex center, interval
/// weights (M x (2K+1)) and the derived moments.
struct LatentFactors {
    Eigen::VectorXd center;
    double var = 1.0;
    Eigen::MatrixXd weights;
    Eigen::VectorXd mean;
    Eigen::VectorXd second_moment;
    Eigen::VectorXd entropy;
    Eigen::MatrixXd tail_prob;  ///< M x K, P(|alpha_j| > d_k)

    Eigen::Index levels() const noexcept { return tail_prob.cols(); }
};

struct VariationalState {
    double beta0_mean = 0.0;
    double beta0_var = 1.0;
    Eigen::VectorXd theta_mean;
    Eigen::MatrixXd theta_cov;
    LatentFactors alpha;
    Eigen::VectorXd delta_prob;
    dist::InverseGamma sigma_eps, sigma_beta, sigma_alpha;
    dist::InverseGamma a_eps, a_beta, a_alpha;
};

namespace detail {

/// Interval i of the (2K+1)-interval partition of the real line for the sorted grid.
inline std::pair<double, double> latent_interval(const std::vector<double>& grid, Eigen::Index i) {
    const auto k = static_cast<Eigen::Index>(grid.size());
    auto g = [&](Eigen::Index r) { return r >= k ? dist::kInf : grid[static_cast<std::size_t>(r)]; };
    if (i < k) {
        const Eigen::Index r = k - i;  // interval (-d_{r+1}, -d_r), 1-indexed r
        return {-g(r), -g(r - 1)};
    }
    if (i == k) return {-grid.front(), grid.front()};
    const Eigen::Index r = i - k;
    return {g(r - 1), g(r)};
}

/// Number of grid values strictly below |alpha| on interval i.
inline Eigen::Index latent_region(Eigen::Index i, Eigen::Index k) { return i < k ? k - i : i - k; }

/// Fill the weights, moments and tail probabilities of vertex j from its center, the
/// common variance and the cumulative log-tilts F_0 = 0, F_r = sum_{k<=r} q_k h_k.
inline void set_latent(LatentFactors& f, Eigen::Index j, const std::vector<double>& grid, const double* tilt) {
    const auto k = static_cast<Eigen::Index>(grid.size());
    const Eigen::Index n_int = 2 * k + 1;
    const double sd = std::sqrt(f.var);
    const double m = f.center[j];
    double scores[512];
    dist::TruncatedMoments tm[512];
    for (Eigen::Index i = 0; i < n_int; ++i) {
        const auto [lo, hi] = latent_interval(grid, i);
        tm[i] = dist::truncated_moments(m, sd, lo, hi);
        scores[i] = tm[i].log_mass + tilt[latent_region(i, k)];
    }
    const double norm = dist::log_sum_exp(scores, static_cast<std::size_t>(n_int));
    double mean = 0.0, second = 0.0, ent = 0.0;
    for (Eigen::Index region = 1; region <= k; ++region) f.tail_prob(j, region - 1) = 0.0;
    for (Eigen::Index i = 0; i < n_int; ++i) {
        const double lw = scores[i] - norm;
        const double w = std::exp(lw);
        f.weights(j, i) = w;
        if (w <= 0.0) continue;
        mean += w * tm[i].mean;
        second += w * (tm[i].var + tm[i].mean * tm[i].mean);
        ent += w * (tm[i].entropy - lw);
        const Eigen::Index region = latent_region(i, k);
        for (Eigen::Index r = 1; r <= region; ++r) f.tail_prob(j, r - 1) += w;
    }
    for (Eigen::Index r = 0; r < k; ++r) f.tail_prob(j, r) = std::min(1.0, f.tail_prob(j, r));
    f.mean[j] = mean;
    f.second_moment[j] = second;
    f.entropy[j] = ent;
}

inline constexpr Eigen::Index kMaxGridSize = 255;

}  // namespace detail

/// p_j = E_q I(|alpha_j| > delta) = sum_k q(delta_k) P(|alpha_j| > d_k).
inline Eigen::VectorXd expected_inclusion(const VariationalState& s) {
    return s.alpha.tail_prob * s.delta_prob;
}

/// Per-vertex (P(alpha < -d*), P(|alpha| <= d*), P(alpha > d*)) at the modal grid value d*.
inline Eigen::MatrixXd three_region_weights(const VariationalState& s) {
    const Eigen::Index k = s.alpha.levels();
    Eigen::Index mode = 0;
    s.delta_prob.maxCoeff(&mode);
    const Eigen::Index m = s.alpha.weights.rows();
    Eigen::MatrixXd out(m, 3);
    for (Eigen::Index j = 0; j < m; ++j) {
        double lower = 0.0, inner = 0.0, upper = 0.0;
        for (Eigen::Index i = 0; i <= 2 * k; ++i) {
            const double w = s.alpha.weights(j, i);
            if (detail::latent_region(i, k) <= mode) inner += w;
            else if (i < k) lower += w;
            else upper += w;
        }
        const double total = lower + inner + upper;
        out(j, 0) = lower / total;
        out(j, 2) = upper / total;
        out(j, 1) = 1.0 - out(j, 0) - out(j, 2);
    }
    return out;
}

/// Structural invariants of a variational state.
inline void validate(const VariationalState& s) {
    const auto& a = s.alpha;
    const Eigen::Index m = a.center.size();
    detail::require(a.weights.rows() == m && a.weights.cols() == 2 * a.levels() + 1 && a.mean.size() == m &&
                        a.second_moment.size() == m && a.entropy.size() == m && a.tail_prob.rows() == m,
                    "VariationalState: latent arrays disagree in shape");
    detail::require(a.var > 0.0 && s.beta0_var > 0.0, "VariationalState: variances must be positive");
    for (Eigen::Index j = 0; j < m; ++j)
        detail::require((a.weights.row(j).array() >= 0.0).all() && std::abs(a.weights.row(j).sum() - 1.0) <= 1e-12,
                        "VariationalState: latent weights at vertex " + std::to_string(j) + " do not sum to 1");
    detail::require(s.delta_prob.size() == a.levels() && (s.delta_prob.array() >= 0.0).all() &&
                        std::abs(s.delta_prob.sum() - 1.0) <= 1e-12,
                    "VariationalState: threshold probabilities do not sum to 1");
    const Eigen::Index l = s.theta_mean.size();
    detail::require(s.theta_cov.rows() == l && s.theta_cov.cols() == l, "VariationalState: covariance shape");
    detail::require((s.theta_cov - s.theta_cov.transpose()).cwiseAbs().maxCoeff() <=
                        1e-10 * (1.0 + s.theta_cov.cwiseAbs().maxCoeff()),
                    "VariationalState: covariance is not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(s.theta_cov);
    detail::require(llt.info() == Eigen::Success, "VariationalState: covariance is not positive definite");
    for (const auto* ig : {&s.sigma_eps, &s.sigma_beta, &s.sigma_alpha, &s.a_eps, &s.a_beta, &s.a_alpha})
        detail::require(ig->shape > 0.0 && ig->rate > 0.0, "VariationalState: inverse-gamma parameters must be positive");
}

/// ELBO split by factor: each entry is the expected log prior (or likelihood) term of that
/// block plus the entropy of its q factor.
struct ElboTerms {
    double likelihood = 0.0;
    double beta0 = 0.0;
    double theta = 0.0;
    double alpha = 0.0;
    double delta = 0.0;
    double sigma_eps = 0.0;
    double sigma_beta = 0.0;
    double sigma_alpha = 0.0;
    double a_eps = 0.0;
    double a_beta = 0.0;
    double a_alpha = 0.0;

    double total() const {
        return likelihood + beta0 + theta + alpha + delta + sigma_eps + sigma_beta + sigma_alpha + a_eps + a_beta +
               a_alpha;
    }
    /// Throws NumericalError naming the first non-finite term.
    void check() const {
        const std::pair<const char*, double> terms[] = {
            {"likelihood", likelihood}, {"beta0", beta0},           {"theta", theta},
            {"alpha", alpha},           {"delta", delta},           {"sigma_eps", sigma_eps},
            {"sigma_beta", sigma_beta}, {"sigma_alpha", sigma_alpha}, {"a_eps", a_eps},
            {"a_beta", a_beta},         {"a_alpha", a_alpha}};
        for (const auto& [name, v] : terms)
            if (!std::isfinite(v)) throw NumericalError(std::string("ELBO term for factor ") + name + " is not finite");
    }
};

/// Wall-clock seconds spent in each update during one sweep.
struct SweepTiming {
    double theta = 0.0, alpha = 0.0, delta = 0.0, beta0 = 0.0, variances = 0.0, aux = 0.0, elbo = 0.0;
};

class CaviEngine {
public:
    /// The engine keeps references to the data and basis; both must outlive it.
    CaviEngine(Dataset&&, const BasisExpansion&, const Hyperparameters&, CaviConfig = {}) = delete;
    CaviEngine(const Dataset&, BasisExpansion&&, const Hyperparameters&, CaviConfig = {}) = delete;
    CaviEngine(const Dataset& data, const BasisExpansion& basis, const Hyperparameters& h, CaviConfig cfg = {})
        : data_(data), basis_(basis), h_(h), cfg_(std::move(cfg)), grid_(threshold_grid(h)) {
        cfg_.validate();
        detail::require(data.vertices() == basis.vertices(), "CaviEngine: data and basis disagree on vertex count");
        detail::require(static_cast<Eigen::Index>(grid_.size()) <= detail::kMaxGridSize,
                        "CaviEngine: threshold grid is too large");
        col_sq_ = data.x.colwise().squaredNorm().transpose();
        btb_ = basis.basis.transpose() * basis.basis;
        initialize();
    }

    const VariationalState& state() const noexcept { return st_; }
    const std::vector<double>& grid() const noexcept { return grid_; }
    const CaviConfig& config() const noexcept { return cfg_; }
    const std::vector<double>& elbo_trace() const noexcept { return trace_; }
    const std::vector<SweepTiming>& timings() const noexcept { return timings_; }

    /// Replace the state (e.g. for oracle checks). Latent moments are recomputed from the
    /// weights; the state must satisfy validate().
    void set_state(VariationalState s) {
        validate(s);
        detail::require(s.theta_mean.size() == basis_.size() && s.alpha.center.size() == basis_.vertices() &&
                            s.alpha.levels() == static_cast<Eigen::Index>(grid_.size()),
                        "CaviEngine::set_state: dimensions do not match the engine");
        st_ = std::move(s);
        refresh_latent_moments();
        invalidate();
    }

    // ---- coordinate updates ----------------------------------------------------------

    void update_theta() {
        const Eigen::Index l = basis_.size();
        const double s = inv_eps();
        const double ia = inv_alpha();
        Eigen::MatrixXd q = ia * btb_;
        q.diagonal().array() += inv_beta();
        const Eigen::VectorXd p = expected_inclusion(st_);
        Eigen::VectorXd rhs = ia * (basis_.basis.transpose() * st_.alpha.mean);
        if (data_.subjects() > 0) {
            ensure_stats();
            for (std::size_t k = 0; k < grid_.size(); ++k) {
                const double qk = st_.delta_prob[static_cast<Eigen::Index>(k)];
                if (qk > 0.0) q.noalias() += (s * qk) * ztz_[k];
            }
            Eigen::VectorXd vdiag = Eigen::VectorXd::Zero(basis_.vertices());
            for (std::size_t k = 0; k < grid_.size(); ++k) {
                const double qk = st_.delta_prob[static_cast<Eigen::Index>(k)];
                if (qk <= 0.0) continue;
                const auto pk = st_.alpha.tail_prob.col(static_cast<Eigen::Index>(k)).array();
                vdiag.array() += qk * pk * (1.0 - pk);
            }
            vdiag.array() *= col_sq_.array() * s;
            q.noalias() += basis_.basis.transpose() * vdiag.asDiagonal() * basis_.basis;
            const Eigen::VectorXd xr = data_.x.transpose() * centered_y();
            rhs.noalias() += s * (basis_.basis.transpose() * p.cwiseProduct(xr));
        }
        q = 0.5 * (q + q.transpose()).eval();
        Eigen::LLT<Eigen::MatrixXd> llt(q);
        if (llt.info() != Eigen::Success) throw NumericalError("q(theta) update: precision is not positive definite");
        st_.theta_mean = llt.solve(rhs);
        st_.theta_cov = llt.solve(Eigen::MatrixXd::Identity(l, l));
        st_.theta_cov = 0.5 * (st_.theta_cov + st_.theta_cov.transpose()).eval();
        theta_logdet_ = -2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
        field_fresh_ = false;
        stats_fresh_ = false;
    }

    void update_alpha() {
        ensure_field();
        const Eigen::Index m = basis_.vertices();
        const auto kk = static_cast<Eigen::Index>(grid_.size());
        const double s = inv_eps();
        auto& a = st_.alpha;
        a.var = 1.0 / inv_alpha();
        a.center = field_;
        const bool has_data = data_.subjects() > 0;
        std::vector<Eigen::Index> active;
        for (Eigen::Index k = 0; k < kk; ++k)
            if (st_.delta_prob[k] > 0.0) active.push_back(k);

        // e_j = mu b_j + Sigma B_j^T, so that e_j . B_l = E[beta_tilde_j beta_tilde_l].
        Eigen::MatrixXd e;
        Eigen::VectorXd xr;
        if (has_data) {
            ensure_z();
            e.noalias() = basis_.basis * st_.theta_cov;
            e.noalias() += field_ * st_.theta_mean.transpose();
            xr.noalias() = data_.x.transpose() * centered_y();
        }
        std::vector<double> tilt(static_cast<std::size_t>(kk) + 1, 0.0);
        std::vector<double> gain(static_cast<std::size_t>(kk), 0.0);
        const Eigen::Index block = cfg_.block_size;
        std::vector<Eigen::MatrixXd> y(static_cast<std::size_t>(kk));
        for (Eigen::Index start = 0; start < m; start += block) {
            const Eigen::Index t = std::min(block, m - start);
            Eigen::MatrixXd g, sjj;
            Eigen::MatrixXd dp = Eigen::MatrixXd::Zero(t, kk);
            if (has_data) {
                const auto xj = data_.x.middleCols(start, t);
                g.noalias() = xj.transpose() * xj;
                sjj.noalias() = e.middleRows(start, t) * basis_.basis.middleRows(start, t).transpose();
                for (Eigen::Index k : active) y[static_cast<std::size_t>(k)].noalias() = xj.transpose() * z_[static_cast<std::size_t>(k)];
            }
            for (Eigen::Index jj = 0; jj < t; ++jj) {
                const Eigen::Index j = start + jj;
                std::fill(gain.begin(), gain.end(), 0.0);
                if (has_data) {
                    const double cs = col_sq_[j] * sdiag_[j];
                    for (Eigen::Index k : active) {
                        double tj = y[static_cast<std::size_t>(k)].row(jj).dot(e.row(j));
                        for (Eigen::Index ll = 0; ll < jj; ++ll) tj += dp(ll, k) * g(jj, ll) * sjj(jj, ll);
                        tj -= cs * a.tail_prob(j, k);
                        gain[static_cast<std::size_t>(k)] = -0.5 * s * (cs - 2.0 * xr[j] * field_[j] + 2.0 * tj);
                    }
                }
                tilt[0] = 0.0;
                for (Eigen::Index k = 0; k < kk; ++k) {
                    const double qk = st_.delta_prob[k];
                    tilt[static_cast<std::size_t>(k) + 1] =
                        tilt[static_cast<std::size_t>(k)] + (qk > 0.0 ? qk * gain[static_cast<std::size_t>(k)] : 0.0);
                }
                const Eigen::RowVectorXd old = a.tail_prob.row(j);
                detail::set_latent(a, j, grid_, tilt.data());
                dp.row(jj) = a.tail_prob.row(j) - old;
            }
            if (has_data) {
                const auto xj = data_.x.middleCols(start, t);
                for (Eigen::Index k : active) {
                    Eigen::MatrixXd scaled = dp.col(k).asDiagonal() * basis_.basis.middleRows(start, t);
                    z_[static_cast<std::size_t>(k)].noalias() += xj * scaled;
                }
            }
        }
        z_fresh_ = false;
        stats_fresh_ = false;
    }

    void update_delta() {
        const auto kk = static_cast<Eigen::Index>(grid_.size());
        if (kk == 1 || data_.subjects() == 0) {
            st_.delta_prob = Eigen::VectorXd::Constant(kk, 1.0 / static_cast<double>(kk));
            return;
        }
        ensure_stats();
        const double s = inv_eps();
        std::vector<double> score(static_cast<std::size_t>(kk));
        for (Eigen::Index k = 0; k < kk; ++k) score[static_cast<std::size_t>(k)] = -0.5 * s * level_rss(k);
        const double norm = dist::log_sum_exp(score.data(), score.size());
        for (Eigen::Index k = 0; k < kk; ++k) st_.delta_prob[k] = std::exp(score[static_cast<std::size_t>(k)] - norm);
        st_.delta_prob /= st_.delta_prob.sum();
    }

    void update_beta0() {
        const Eigen::Index n = data_.subjects();
        const double s = inv_eps();
        const double prec = 1.0 / h_.sigma_beta0_sq + n * s;
        double sum = 0.0;
        if (n > 0) {
            ensure_stats();
            Eigen::VectorXd fitted = Eigen::VectorXd::Zero(n);
            for (std::size_t k = 0; k < grid_.size(); ++k) {
                const double qk = st_.delta_prob[static_cast<Eigen::Index>(k)];
                if (qk > 0.0) fitted.noalias() += qk * zmu_[k];
            }
            sum = (data_.y - fitted).sum();
        }
        st_.beta0_var = 1.0 / prec;
        st_.beta0_mean = s * sum / prec;
    }

    void update_variances() {
        if (cfg_.clamp) return;
        const Eigen::Index n = data_.subjects();
        const Eigen::Index l = basis_.size();
        const Eigen::Index m = basis_.vertices();
        st_.sigma_eps = {0.5 + 0.5 * n, st_.a_eps.mean_inv() + 0.5 * expected_rss()};
        st_.sigma_beta = {0.5 + 0.5 * l, st_.a_beta.mean_inv() + 0.5 * theta_second_moment()};
        st_.sigma_alpha = {0.5 + 0.5 * m, st_.a_alpha.mean_inv() + 0.5 * latent_deviation()};
    }

    void update_aux() {
        if (cfg_.clamp) return;
        auto aux = [](double inv_var, double scale) { return dist::InverseGamma{1.0, 1.0 / (scale * scale) + inv_var}; };
        st_.a_eps = aux(st_.sigma_eps.mean_inv(), h_.s_eps);
        st_.a_beta = aux(st_.sigma_beta.mean_inv(), h_.s_beta);
        st_.a_alpha = aux(st_.sigma_alpha.mean_inv(), h_.s_alpha);
    }

    /// One pass in the fixed order theta, alpha, delta, beta0, variances, auxiliaries.
    SweepTiming sweep() {
        SweepTiming t;
        auto timed = [](double& slot, auto&& fn) {
            const auto t0 = std::chrono::steady_clock::now();
            fn();
            slot = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        };
        timed(t.theta, [&] { update_theta(); });
        timed(t.alpha, [&] { update_alpha(); });
        timed(t.delta, [&] { update_delta(); });
        timed(t.beta0, [&] { update_beta0(); });
        timed(t.variances, [&] { update_variances(); });
        timed(t.aux, [&] { update_aux(); });
        return t;
    }

    /// Sweep until the relative ELBO change drops below tolerance or max_iter is reached.
    void run() {
        trace_.clear();
        timings_.clear();
        for (int it = 0; it < cfg_.max_iter; ++it) {
            SweepTiming t = sweep();
            const auto t0 = std::chrono::steady_clock::now();
            const ElboTerms terms = elbo_terms();
            terms.check();
            t.elbo = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            timings_.push_back(t);
            const double value = terms.total();
            trace_.push_back(value);
            if (trace_.size() >= 2) {
                const double prev = trace_[trace_.size() - 2];
                if (std::abs(value - prev) < cfg_.elbo_rel_tol * std::abs(prev)) break;
            }
        }
    }

    // ---- objective ---------------------------------------------------------------------

    ElboTerms elbo_terms() const {
        ElboTerms e;
        const Eigen::Index n = data_.subjects();
        const Eigen::Index l = basis_.size();
        const Eigen::Index m = basis_.vertices();
        ensure_field();
        if (n > 0) e.likelihood = -0.5 * n * (dist::kLog2Pi + log_eps()) - 0.5 * inv_eps() * expected_rss();

        e.beta0 = -0.5 * (dist::kLog2Pi + std::log(h_.sigma_beta0_sq)) -
                  0.5 * (st_.beta0_mean * st_.beta0_mean + st_.beta0_var) / h_.sigma_beta0_sq +
                  0.5 * (1.0 + dist::kLog2Pi + std::log(st_.beta0_var));

        e.theta = -0.5 * l * (dist::kLog2Pi + log_beta()) - 0.5 * inv_beta() * theta_second_moment() +
                  0.5 * l * (1.0 + dist::kLog2Pi) + 0.5 * theta_logdet();

        e.alpha = -0.5 * m * (dist::kLog2Pi + log_alpha()) - 0.5 * inv_alpha() * latent_deviation() +
                  st_.alpha.entropy.sum();

        const double kk = static_cast<double>(grid_.size());
        double ent = 0.0;
        for (Eigen::Index k = 0; k < st_.delta_prob.size(); ++k) {
            const double q = st_.delta_prob[k];
            if (q > 0.0) ent -= q * std::log(q);
        }
        e.delta = -std::log(kk) + ent;

        if (!cfg_.clamp) {
            auto var_term = [](const dist::InverseGamma& var, const dist::InverseGamma& aux) {
                // sigma^2 | a ~ IG(1/2, 1/a): rate is 1/a, so E[rate] = E[1/a], E[log rate] = -E[log a]
                return var.expected_log_density(0.5, aux.mean_inv(), -aux.mean_log()) + var.entropy();
            };
            auto aux_term = [](const dist::InverseGamma& aux, double scale) {
                const double rate = 1.0 / (scale * scale);
                return aux.expected_log_density(0.5, rate, std::log(rate)) + aux.entropy();
            };
            e.sigma_eps = var_term(st_.sigma_eps, st_.a_eps);
            e.sigma_beta = var_term(st_.sigma_beta, st_.a_beta);
            e.sigma_alpha = var_term(st_.sigma_alpha, st_.a_alpha);
            e.a_eps = aux_term(st_.a_eps, h_.s_eps);
            e.a_beta = aux_term(st_.a_beta, h_.s_beta);
            e.a_alpha = aux_term(st_.a_alpha, h_.s_alpha);
        }
        return e;
    }

    double elbo() const { return elbo_terms().total(); }

    /// E_q ||y - beta0 - X Gamma B theta||^2 with indicator moments under q.
    double expected_rss() const {
        if (data_.subjects() == 0) return 0.0;
        ensure_stats();
        double total = 0.0;
        for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(grid_.size()); ++k) {
            const double qk = st_.delta_prob[k];
            if (qk > 0.0) total += qk * level_rss(k);
        }
        return total;
    }

    /// Expected log-likelihood gain of switching vertex j on at grid level k, with every
    /// other vertex at its current tail probability.
    double inclusion_gain(Eigen::Index j, Eigen::Index k) const {
        detail::require(j >= 0 && j < basis_.vertices() && k >= 0 && k < static_cast<Eigen::Index>(grid_.size()),
                        "inclusion_gain: index out of range");
        if (data_.subjects() == 0) return 0.0;
        ensure_field();
        ensure_z();
        const Eigen::VectorXd ej = st_.theta_cov * basis_.basis.row(j).transpose() + st_.theta_mean * field_[j];
        const double cs = col_sq_[j] * sdiag_[j];
        const double tj = data_.x.col(j).dot(z_[static_cast<std::size_t>(k)] * ej) - cs * st_.alpha.tail_prob(j, k);
        const double xr = data_.x.col(j).dot(centered_y());
        return -0.5 * inv_eps() * (cs - 2.0 * xr * field_[j] + 2.0 * tj);
    }

    double inv_eps() const { return cfg_.clamp ? 1.0 / cfg_.clamp->sigma_eps_sq : st_.sigma_eps.mean_inv(); }
    double inv_beta() const { return cfg_.clamp ? 1.0 / cfg_.clamp->sigma_beta_sq : st_.sigma_beta.mean_inv(); }
    double inv_alpha() const { return cfg_.clamp ? 1.0 / cfg_.clamp->sigma_alpha_sq : st_.sigma_alpha.mean_inv(); }

    /// Posterior summaries in the engine-independent shape.
    FitResult result() const {
        ensure_field();
        FitResult f;
        f.engine = "vi";
        f.hyper = h_;
        f.beta_tilde_mean = field_;
        f.inclusion_prob = expected_inclusion(st_).cwiseMax(0.0).cwiseMin(1.0);
        f.selection_threshold = cfg_.selection_threshold;
        f.beta_map = Eigen::VectorXd::Zero(field_.size());
        for (Eigen::Index j = 0; j < field_.size(); ++j)
            if (f.inclusion_prob[j] >= cfg_.selection_threshold) f.beta_map[j] = field_[j];
        f.beta0_mean = st_.beta0_mean;
        if (cfg_.clamp)
            f.sigma_eps_sq_mean = cfg_.clamp->sigma_eps_sq;
        else
            f.sigma_eps_sq_mean = st_.sigma_eps.shape > 1.0 ? st_.sigma_eps.mean() : 1.0 / st_.sigma_eps.mean_inv();
        f.delta_grid = grid_;
        f.delta_prob = st_.delta_prob;
        f.theta_mean = st_.theta_mean;
        f.theta_cov = st_.theta_cov;
        f.region_weights = three_region_weights(st_);
        f.elbo_trace = trace_;
        return f;
    }

private:
    Eigen::VectorXd centered_y() const { return data_.y.array() - st_.beta0_mean; }

    double log_eps() const { return cfg_.clamp ? std::log(cfg_.clamp->sigma_eps_sq) : st_.sigma_eps.mean_log(); }
    double log_beta() const { return cfg_.clamp ? std::log(cfg_.clamp->sigma_beta_sq) : st_.sigma_beta.mean_log(); }
    double log_alpha() const { return cfg_.clamp ? std::log(cfg_.clamp->sigma_alpha_sq) : st_.sigma_alpha.mean_log(); }

    double theta_second_moment() const { return st_.theta_mean.squaredNorm() + st_.theta_cov.trace(); }

    double theta_logdet() const {
        if (!std::isnan(theta_logdet_)) return theta_logdet_;
        Eigen::LLT<Eigen::MatrixXd> llt(st_.theta_cov);
        if (llt.info() != Eigen::Success) throw NumericalError("q(theta) covariance is not positive definite");
        theta_logdet_ = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
        return theta_logdet_;
    }

    /// sum_j E[(alpha_j - beta_tilde_j)^2].
    double latent_deviation() const {
        ensure_field();
        const auto& a = st_.alpha;
        return (a.second_moment.array() - 2.0 * a.mean.array() * field_.array() + sdiag_.array()).sum();
    }

    double level_rss(Eigen::Index k) const {
        const auto ku = static_cast<std::size_t>(k);
        const Eigen::Index n = data_.subjects();
        return (centered_y() - zmu_[ku]).squaredNorm() + n * st_.beta0_var + level_trace_[ku] + spread_[ku];
    }

    void initialize() {
        const Eigen::Index m = basis_.vertices();
        const Eigen::Index l = basis_.size();
        const Eigen::Index n = data_.subjects();
        const auto kk = static_cast<Eigen::Index>(grid_.size());
        const RidgeStart rs = ridge_start(data_, basis_, cfg_.ridge_init_penalty);
        const ModelState s0 = initial_state(data_, basis_, h_, cfg_.ridge_init_penalty);

        const double eps0 = cfg_.clamp ? cfg_.clamp->sigma_eps_sq : s0.sigma_eps_sq;
        auto matched = [](double shape, double var) { return dist::InverseGamma{shape, shape * var}; };
        st_.sigma_eps = matched(0.5 + 0.5 * n, s0.sigma_eps_sq);
        st_.sigma_beta = matched(0.5 + 0.5 * l, s0.sigma_beta_sq);
        st_.sigma_alpha = matched(0.5 + 0.5 * m, s0.sigma_alpha_sq);
        st_.a_eps = {1.0, 1.0 / (h_.s_eps * h_.s_eps) + 1.0 / s0.sigma_eps_sq};
        st_.a_beta = {1.0, 1.0 / (h_.s_beta * h_.s_beta) + 1.0 / s0.sigma_beta_sq};
        st_.a_alpha = {1.0, 1.0 / (h_.s_alpha * h_.s_alpha) + 1.0 / s0.sigma_alpha_sq};

        st_.beta0_mean = rs.beta0;
        st_.beta0_var = 1.0 / (1.0 / h_.sigma_beta0_sq + n / eps0);
        st_.theta_mean = rs.theta;
        st_.theta_cov = 0.5 * (rs.theta_cov + rs.theta_cov.transpose());
        if (n == 0) st_.theta_cov = Eigen::MatrixXd::Identity(l, l) * (cfg_.clamp ? cfg_.clamp->sigma_beta_sq : 1.0);

        auto& a = st_.alpha;
        a.center = field_from_coeffs(basis_, st_.theta_mean);
        a.var = 1.0 / inv_alpha();
        a.weights.resize(m, 2 * kk + 1);
        a.mean.resize(m);
        a.second_moment.resize(m);
        a.entropy.resize(m);
        a.tail_prob.resize(m, kk);
        const std::vector<double> flat(static_cast<std::size_t>(kk) + 1, 0.0);
        for (Eigen::Index j = 0; j < m; ++j) detail::set_latent(a, j, grid_, flat.data());
        st_.delta_prob = Eigen::VectorXd::Constant(kk, 1.0 / static_cast<double>(kk));
        invalidate();
    }

    /// Recompute moments from stored weights (after set_state).
    void refresh_latent_moments() {
        auto& a = st_.alpha;
        const auto kk = static_cast<Eigen::Index>(grid_.size());
        const double sd = std::sqrt(a.var);
        for (Eigen::Index j = 0; j < a.center.size(); ++j) {
            double mean = 0.0, second = 0.0, ent = 0.0;
            a.tail_prob.row(j).setZero();
            for (Eigen::Index i = 0; i <= 2 * kk; ++i) {
                const double w = a.weights(j, i);
                if (w <= 0.0) continue;
                const auto [lo, hi] = detail::latent_interval(grid_, i);
                const auto tm = dist::truncated_moments(a.center[j], sd, lo, hi);
                detail::require(tm.log_mass > -dist::kInf, "set_state: weight on an empty interval");
                mean += w * tm.mean;
                second += w * (tm.var + tm.mean * tm.mean);
                ent += w * (tm.entropy - std::log(w));
                for (Eigen::Index r = 1; r <= detail::latent_region(i, kk); ++r) a.tail_prob(j, r - 1) += w;
            }
            a.mean[j] = mean;
            a.second_moment[j] = second;
            a.entropy[j] = ent;
        }
    }

    void invalidate() {
        z_fresh_ = false;
        stats_fresh_ = false;
        field_fresh_ = false;
        theta_logdet_ = std::nan("");
    }

    void ensure_field() const {
        if (field_fresh_) return;
        field_ = basis_.basis * st_.theta_mean;
        const Eigen::MatrixXd bs = basis_.basis * st_.theta_cov;
        sdiag_ = field_.array().square() + (bs.array() * basis_.basis.array()).rowwise().sum();
        field_fresh_ = true;
    }

    void ensure_z() const {
        if (z_fresh_) return;
        const auto kk = grid_.size();
        z_.resize(kk);
        for (std::size_t k = 0; k < kk; ++k) {
            const Eigen::MatrixXd scaled =
                st_.alpha.tail_prob.col(static_cast<Eigen::Index>(k)).asDiagonal() * basis_.basis;
            z_[k].noalias() = data_.x * scaled;
        }
        z_fresh_ = true;
        stats_fresh_ = false;
    }

    void ensure_stats() const {
        if (stats_fresh_ && z_fresh_) return;
        ensure_z();
        ensure_field();
        const auto kk = grid_.size();
        zmu_.resize(kk);
        ztz_.resize(kk);
        level_trace_.assign(kk, 0.0);
        spread_.assign(kk, 0.0);
        for (std::size_t k = 0; k < kk; ++k) {
            zmu_[k].noalias() = z_[k] * st_.theta_mean;
            ztz_[k].noalias() = z_[k].transpose() * z_[k];
            level_trace_[k] = (st_.theta_cov.array() * ztz_[k].array()).sum();
            const auto pk = st_.alpha.tail_prob.col(static_cast<Eigen::Index>(k)).array();
            spread_[k] = (col_sq_.array() * sdiag_.array() * pk * (1.0 - pk)).sum();
        }
        stats_fresh_ = true;
    }

    const Dataset& data_;
    const BasisExpansion& basis_;
    Hyperparameters h_;
    CaviConfig cfg_;
    std::vector<double> grid_;
    Eigen::VectorXd col_sq_;
    Eigen::MatrixXd btb_;
    VariationalState st_;
    std::vector<double> trace_;
    std::vector<SweepTiming> timings_;

    mutable bool z_fresh_ = false, stats_fresh_ = false, field_fresh_ = false;
    mutable double theta_logdet_ = std::nan("");
    mutable Eigen::VectorXd field_, sdiag_;
    mutable std::vector<Eigen::MatrixXd> z_, ztz_;
    mutable std::vector<Eigen::VectorXd> zmu_;
    mutable std::vector<double> level_trace_, spread_;
};

/// Fit by CAVI from the ridge warm start.
inline FitResult fit_vi(const Dataset& data, const BasisExpansion& basis, const Hyperparameters& h,
                        const CaviConfig& cfg = {}) {
    CaviEngine engine(data, basis, h, cfg);
    engine.run();
    return engine.result();
}

}  // namespace rtgp
