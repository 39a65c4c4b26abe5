#pragma once

// Systematic-scan Gibbs sampler over the full parameter set. Every block is drawn from its
// exact full conditional; each conditional is exposed as an object with log_density() and
// sample() so that the transition ratios can be checked against log_joint().

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rtgp/distributions.hpp"
#include "rtgp/errors.hpp"
#include "rtgp/initialize.hpp"
#include "rtgp/model.hpp"
#include "rtgp/rng.hpp"

namespace rtgp {

struct ChainConfig {
    long n_iter = 10000;
    long burn_in = 1000;
    long thin = 1;
    std::uint64_t seed = 1;
    double ridge_init_penalty = 1.0;

    void validate() const {
        detail::require(n_iter > burn_in && burn_in >= 0, "ChainConfig: need n_iter > burn_in >= 0");
        detail::require(thin >= 1, "ChainConfig: thin must be >= 1");
    }
    long stored() const { return (n_iter - burn_in) / thin; }
};

/// Stored draws, one row per retained sweep. Column layout:
/// beta0, theta[0..L), alpha[0..M), delta, sigma_eps_sq, sigma_beta_sq, sigma_alpha_sq, a_eps, a_beta, a_alpha.
struct ChainOutput {
    Eigen::Index n_basis = 0;
    Eigen::Index n_vertices = 0;
    Eigen::MatrixXd samples;

    Eigen::Index col_theta() const { return 1; }
    Eigen::Index col_alpha() const { return 1 + n_basis; }
    Eigen::Index col_delta() const { return 1 + n_basis + n_vertices; }
    Eigen::Index col_sigma_eps_sq() const { return col_delta() + 1; }
    Eigen::Index col_sigma_beta_sq() const { return col_delta() + 2; }
    Eigen::Index col_sigma_alpha_sq() const { return col_delta() + 3; }
    Eigen::Index col_a_eps() const { return col_delta() + 4; }
    Eigen::Index col_a_beta() const { return col_delta() + 5; }
    Eigen::Index col_a_alpha() const { return col_delta() + 6; }
    Eigen::Index parameters() const { return col_delta() + 7; }
    Eigen::Index size() const { return samples.rows(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out{"beta0"};
        for (Eigen::Index l = 0; l < n_basis; ++l) out.push_back("theta_" + std::to_string(l));
        for (Eigen::Index j = 0; j < n_vertices; ++j) out.push_back("alpha_" + std::to_string(j));
        for (const char* n : {"delta", "sigma_eps_sq", "sigma_beta_sq", "sigma_alpha_sq", "a_eps", "a_beta", "a_alpha"})
            out.emplace_back(n);
        return out;
    }
};

struct NormalConditional {
    double mean = 0.0;
    double var = 1.0;

    double log_density(double x) const { return dist::log_normal_pdf(x, mean, var); }
    double sample(Rng& rng) const { return std::normal_distribution<double>(mean, std::sqrt(var))(rng); }
};

/// Multivariate normal held through the Cholesky factor of its precision.
struct GaussianConditional {
    Eigen::VectorXd mean;
    Eigen::LLT<Eigen::MatrixXd> precision;

    double log_density(const Eigen::VectorXd& t) const {
        const Eigen::MatrixXd& lf = precision.matrixLLT();
        const Eigen::VectorXd w = precision.matrixU() * (t - mean);
        return lf.diagonal().array().log().sum() - 0.5 * mean.size() * dist::kLog2Pi - 0.5 * w.squaredNorm();
    }
    Eigen::VectorXd sample(Rng& rng) const {
        std::normal_distribution<double> normal;
        Eigen::VectorXd z(mean.size());
        for (Eigen::Index l = 0; l < z.size(); ++l) z[l] = normal(rng);
        return mean + precision.matrixU().solve(z);
    }
};

/// Two-region mixture for one latent: |alpha| <= delta (coefficient excluded) or
/// |alpha| > delta (included), each a truncated N(center, sd^2).
struct LatentConditional {
    double center = 0.0;
    double sd = 1.0;
    double delta = 0.0;
    double log_w_inner = 0.0;  ///< normalized region log-weights
    double log_w_outer = 0.0;
    double log_mass_inner = 0.0;  ///< prior masses of the regions under N(center, sd^2)
    double log_mass_lower = 0.0;
    double log_mass_upper = 0.0;

    double log_density(double a) const {
        const double base = dist::log_normal_pdf(a, center, sd * sd);
        if (std::abs(a) > delta) {
            const double lm = log_outer_mass();
            return log_w_outer + base - lm;
        }
        return log_w_inner + base - log_mass_inner;
    }
    double log_outer_mass() const {
        const double v[2] = {log_mass_lower, log_mass_upper};
        return dist::log_sum_exp(v, 2);
    }
    double sample(Rng& rng) const {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        if (std::log(unif(rng)) < log_w_inner)
            return dist::sample_truncated_normal(center, sd, -delta, delta, rng);
        const double p_lower = std::exp(log_mass_lower - log_outer_mass());
        if (unif(rng) < p_lower) return dist::sample_truncated_normal(center, sd, -dist::kInf, -delta, rng);
        return dist::sample_truncated_normal(center, sd, delta, dist::kInf, rng);
    }
};

struct CategoricalConditional {
    std::vector<double> values;
    std::vector<double> log_prob;  ///< normalized

    double log_density(double v) const {
        for (std::size_t k = 0; k < values.size(); ++k)
            if (values[k] == v) return log_prob[k];
        return -dist::kInf;
    }
    double sample(Rng& rng) const {
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        double acc = 0.0;
        for (std::size_t k = 0; k < values.size(); ++k) {
            acc += std::exp(log_prob[k]);
            if (u < acc) return values[k];
        }
        return values.back();
    }
};

class GibbsSampler {
public:
    /// The sampler keeps references to the data and basis; both must outlive it.
    GibbsSampler(Dataset&&, const BasisExpansion&, const Hyperparameters&) = delete;
    GibbsSampler(const Dataset&, BasisExpansion&&, const Hyperparameters&) = delete;
    GibbsSampler(const Dataset& data, const BasisExpansion& basis, const Hyperparameters& h)
        : data_(data), basis_(basis), h_(h), grid_(threshold_grid(h)) {
        detail::require(data.vertices() == basis.vertices(), "GibbsSampler: data and basis disagree on vertex count");
        btb_ = basis.basis.transpose() * basis.basis;
        col_sq_ = data.x.colwise().squaredNorm().transpose();
    }

    const std::vector<double>& grid() const noexcept { return grid_; }

    // ---- full conditionals -------------------------------------------------------------

    GaussianConditional theta_conditional(const ModelState& s) const {
        const Eigen::Index l = basis_.size();
        Eigen::MatrixXd z = Eigen::MatrixXd::Zero(data_.subjects(), l);
        for (Eigen::Index j = 0; j < data_.vertices(); ++j)
            if (std::abs(s.alpha[j]) > s.delta) z.noalias() += data_.x.col(j) * basis_.basis.row(j);
        Eigen::MatrixXd q = btb_ / s.sigma_alpha_sq;
        q.diagonal().array() += 1.0 / s.sigma_beta_sq;
        Eigen::VectorXd rhs = basis_.basis.transpose() * s.alpha / s.sigma_alpha_sq;
        if (data_.subjects() > 0) {
            q.noalias() += z.transpose() * z / s.sigma_eps_sq;
            rhs.noalias() += z.transpose() * (data_.y.array() - s.beta0).matrix() / s.sigma_eps_sq;
        }
        GaussianConditional out;
        out.precision.compute(q);
        if (out.precision.info() != Eigen::Success) {
            const Eigen::VectorXd d = q.diagonal();
            throw NumericalError("theta conditional: precision not positive definite (diagonal range [" +
                                 std::to_string(d.minCoeff()) + ", " + std::to_string(d.maxCoeff()) + "])");
        }
        out.mean = out.precision.solve(rhs);
        return out;
    }

    /// Conditional of alpha_j; `resid_without_j` is y - beta0 - sum_{k != j} x_k beta_k.
    LatentConditional alpha_conditional(const ModelState& s, Eigen::Index j, const Eigen::VectorXd& field,
                                        const Eigen::VectorXd& resid_without_j) const {
        LatentConditional c;
        c.center = field[j];
        c.sd = std::sqrt(s.sigma_alpha_sq);
        c.delta = s.delta;
        // log-likelihood gain of including vertex j
        double gain = 0.0;
        if (data_.subjects() > 0) {
            const double bj = field[j];
            gain = (bj * data_.x.col(j).dot(resid_without_j) - 0.5 * bj * bj * col_sq_[j]) / s.sigma_eps_sq;
        }
        const double lo = (-s.delta - c.center) / c.sd;
        const double hi = (s.delta - c.center) / c.sd;
        c.log_mass_inner = dist::log_interval_mass(lo, hi);
        c.log_mass_lower = dist::log_interval_mass(-dist::kInf, lo);
        c.log_mass_upper = dist::log_interval_mass(hi, dist::kInf);
        const double scores[2] = {c.log_mass_inner, gain + c.log_outer_mass()};
        const double norm = dist::log_sum_exp(scores, 2);
        c.log_w_inner = scores[0] - norm;
        c.log_w_outer = scores[1] - norm;
        return c;
    }

    LatentConditional alpha_conditional(const ModelState& s, Eigen::Index j) const {
        const Eigen::VectorXd field = field_from_coeffs(basis_, s.theta);
        Eigen::VectorXd resid = residual(s, field);
        if (std::abs(s.alpha[j]) > s.delta) resid += data_.x.col(j) * field[j];
        return alpha_conditional(s, j, field, resid);
    }

    CategoricalConditional delta_conditional(const ModelState& s) const {
        CategoricalConditional c;
        c.values = grid_;
        c.log_prob.resize(grid_.size());
        const Eigen::VectorXd field = field_from_coeffs(basis_, s.theta);
        for (std::size_t k = 0; k < grid_.size(); ++k) {
            if (data_.subjects() == 0) {
                c.log_prob[k] = 0.0;
                continue;
            }
            const Eigen::VectorXd resid =
                (data_.y - data_.x * apply_relaxed_field(field, s.alpha, grid_[k])).array() - s.beta0;
            c.log_prob[k] = -0.5 * resid.squaredNorm() / s.sigma_eps_sq;
        }
        const double norm = dist::log_sum_exp(c.log_prob.data(), c.log_prob.size());
        for (double& v : c.log_prob) v -= norm;
        return c;
    }

    NormalConditional beta0_conditional(const ModelState& s) const {
        const Eigen::Index n = data_.subjects();
        const double prec = 1.0 / h_.sigma_beta0_sq + n / s.sigma_eps_sq;
        double sum = 0.0;
        if (n > 0) sum = (data_.y - data_.x * coefficient_map(s, basis_)).sum();
        return {sum / s.sigma_eps_sq / prec, 1.0 / prec};
    }

    dist::InverseGamma sigma_eps_conditional(const ModelState& s) const {
        const Eigen::Index n = data_.subjects();
        double rss = 0.0;
        if (n > 0) rss = residual(s, field_from_coeffs(basis_, s.theta)).squaredNorm();
        return {0.5 + 0.5 * n, 1.0 / s.a_eps + 0.5 * rss};
    }
    dist::InverseGamma sigma_beta_conditional(const ModelState& s) const {
        return {0.5 + 0.5 * static_cast<double>(s.theta.size()), 1.0 / s.a_beta + 0.5 * s.theta.squaredNorm()};
    }
    dist::InverseGamma sigma_alpha_conditional(const ModelState& s) const {
        const double ss = (s.alpha - field_from_coeffs(basis_, s.theta)).squaredNorm();
        return {0.5 + 0.5 * static_cast<double>(s.alpha.size()), 1.0 / s.a_alpha + 0.5 * ss};
    }
    static dist::InverseGamma aux_conditional(double var, double scale) {
        return {1.0, 1.0 / (scale * scale) + 1.0 / var};
    }

    // ---- steps -------------------------------------------------------------------------

    void step_theta(ModelState& s, Rng& rng) const { s.theta = theta_conditional(s).sample(rng); }

    void step_alpha(ModelState& s, Rng& rng) const {
        const Eigen::VectorXd field = field_from_coeffs(basis_, s.theta);
        Eigen::VectorXd resid = residual(s, field);
        const bool has_data = data_.subjects() > 0;
        for (Eigen::Index j = 0; j < data_.vertices(); ++j) {
            if (has_data && std::abs(s.alpha[j]) > s.delta) resid.noalias() += data_.x.col(j) * field[j];
            s.alpha[j] = alpha_conditional(s, j, field, resid).sample(rng);
            if (has_data && std::abs(s.alpha[j]) > s.delta) resid.noalias() -= data_.x.col(j) * field[j];
        }
    }

    void step_delta(ModelState& s, Rng& rng) const {
        if (grid_.size() == 1) {
            s.delta = grid_.front();
            return;
        }
        s.delta = delta_conditional(s).sample(rng);
    }

    void step_beta0(ModelState& s, Rng& rng) const { s.beta0 = beta0_conditional(s).sample(rng); }

    void step_variances_and_aux(ModelState& s, Rng& rng) const {
        s.sigma_eps_sq = checked(sigma_eps_conditional(s).sample(rng), "sigma_eps_sq");
        s.sigma_beta_sq = checked(sigma_beta_conditional(s).sample(rng), "sigma_beta_sq");
        s.sigma_alpha_sq = checked(sigma_alpha_conditional(s).sample(rng), "sigma_alpha_sq");
        s.a_eps = checked(aux_conditional(s.sigma_eps_sq, h_.s_eps).sample(rng), "a_eps");
        s.a_beta = checked(aux_conditional(s.sigma_beta_sq, h_.s_beta).sample(rng), "a_beta");
        s.a_alpha = checked(aux_conditional(s.sigma_alpha_sq, h_.s_alpha).sample(rng), "a_alpha");
    }

    /// One systematic scan: theta, alpha, delta, beta0, variances, auxiliaries.
    void sweep(ModelState& s, Rng& rng) const {
        step_theta(s, rng);
        step_alpha(s, rng);
        step_delta(s, rng);
        step_beta0(s, rng);
        step_variances_and_aux(s, rng);
    }

    ChainOutput run(const ChainConfig& cfg, ModelState s) const {
        cfg.validate();
        Rng rng = make_stream(cfg.seed, "chain");
        ChainOutput out;
        out.n_basis = basis_.size();
        out.n_vertices = basis_.vertices();
        out.samples.resize(cfg.stored(), out.parameters());
        Eigen::Index row = 0;
        for (long it = 1; it <= cfg.n_iter; ++it) {
            sweep(s, rng);
            if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 && row < out.samples.rows()) {
                auto r = out.samples.row(row++);
                r[0] = s.beta0;
                r.segment(out.col_theta(), out.n_basis) = s.theta.transpose();
                r.segment(out.col_alpha(), out.n_vertices) = s.alpha.transpose();
                r[out.col_delta()] = s.delta;
                r[out.col_sigma_eps_sq()] = s.sigma_eps_sq;
                r[out.col_sigma_beta_sq()] = s.sigma_beta_sq;
                r[out.col_sigma_alpha_sq()] = s.sigma_alpha_sq;
                r[out.col_a_eps()] = s.a_eps;
                r[out.col_a_beta()] = s.a_beta;
                r[out.col_a_alpha()] = s.a_alpha;
            }
        }
        return out;
    }

private:
    Eigen::VectorXd residual(const ModelState& s, const Eigen::VectorXd& field) const {
        Eigen::VectorXd r = data_.y - data_.x * apply_relaxed_field(field, s.alpha, s.delta);
        r.array() -= s.beta0;
        return r;
    }

    static double checked(double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw NumericalError(std::string("Gibbs draw for ") + name + " is not a positive finite number");
        return v;
    }

    const Dataset& data_;
    const BasisExpansion& basis_;
    Hyperparameters h_;
    std::vector<double> grid_;
    Eigen::MatrixXd btb_;
    Eigen::VectorXd col_sq_;
};

/// Run a chain from the shared ridge warm start.
inline ChainOutput run_chain(const Dataset& data, const BasisExpansion& basis, const Hyperparameters& h,
                             const ChainConfig& cfg) {
    GibbsSampler sampler(data, basis, h);
    return sampler.run(cfg, initial_state(data, basis, h, cfg.ridge_init_penalty));
}

/// Posterior summaries of a chain in the same shape as a variational fit.
inline FitResult summarize_chain(const ChainOutput& chain, const BasisExpansion& basis, const Hyperparameters& h,
                                 double selection_threshold = 0.5) {
    detail::require(chain.size() >= 1, "summarize_chain: chain has no stored samples");
    const Eigen::Index m = chain.n_vertices, l = chain.n_basis, t = chain.size();
    const auto grid = threshold_grid(h);
    FitResult f;
    f.engine = "gibbs";
    f.hyper = h;
    f.delta_grid = grid;
    f.delta_prob = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
    f.selection_threshold = selection_threshold;
    f.chain_samples = static_cast<std::size_t>(t);

    const Eigen::MatrixXd thetas = chain.samples.middleCols(chain.col_theta(), l);
    f.theta_mean = thetas.colwise().mean().transpose();
    const Eigen::MatrixXd centered = thetas.rowwise() - f.theta_mean.transpose();
    f.theta_cov = t > 1 ? Eigen::MatrixXd(centered.transpose() * centered / static_cast<double>(t - 1))
                        : Eigen::MatrixXd::Zero(l, l);
    f.beta_tilde_mean = basis.basis * f.theta_mean;

    for (Eigen::Index i = 0; i < t; ++i) {
        const double d = chain.samples(i, chain.col_delta());
        for (std::size_t k = 0; k < grid.size(); ++k)
            if (grid[k] == d) f.delta_prob[static_cast<Eigen::Index>(k)] += 1.0;
    }
    f.delta_prob /= static_cast<double>(t);
    Eigen::Index mode = 0;
    f.delta_prob.maxCoeff(&mode);
    const double dstar = grid[static_cast<std::size_t>(mode)];

    f.inclusion_prob = Eigen::VectorXd::Zero(m);
    f.region_weights = Eigen::MatrixXd::Zero(m, 3);
    for (Eigen::Index i = 0; i < t; ++i) {
        const double d = chain.samples(i, chain.col_delta());
        for (Eigen::Index j = 0; j < m; ++j) {
            const double a = chain.samples(i, chain.col_alpha() + j);
            if (std::abs(a) > d) f.inclusion_prob[j] += 1.0;
            f.region_weights(j, a < -dstar ? 0 : (a > dstar ? 2 : 1)) += 1.0;
        }
    }
    f.inclusion_prob /= static_cast<double>(t);
    f.region_weights /= static_cast<double>(t);
    f.beta0_mean = chain.samples.col(0).mean();
    f.sigma_eps_sq_mean = chain.samples.col(chain.col_sigma_eps_sq()).mean();
    f.beta_map = Eigen::VectorXd::Zero(m);
    for (Eigen::Index j = 0; j < m; ++j)
        if (f.inclusion_prob[j] >= selection_threshold) f.beta_map[j] = f.beta_tilde_mean[j];
    return f;
}

}  // namespace rtgp
