#pragma once

// Synthetic scalar-on-image data with a known sparse, piecewise-smooth truth: a GP draw
// hard-thresholded so that an exact fraction of vertices is active, GP-distributed input
// images, and Gaussian outcomes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rtgp/errors.hpp"
#include "rtgp/kernel_basis.hpp"
#include "rtgp/model.hpp"
#include "rtgp/rng.hpp"

namespace rtgp {

struct SimManifest {
    std::uint64_t seed = 0;
    double sigma_beta_sq = 1.0;
    double sparsity = 0.1;
    Eigen::Index basis_size = 0;
};

struct SimTruth {
    Eigen::VectorXd beta_true;
    std::vector<bool> support_mask;
    double beta0_true = 2.0;
    double sigma_eps_sq_true = 0.2;
    SimManifest manifest;

    Eigen::Index active() const {
        return static_cast<Eigen::Index>(std::count(support_mask.begin(), support_mask.end(), true));
    }
};

/// Smooth field B theta with theta ~ N(0, sigma_beta_sq), hard-thresholded so exactly
/// ceil(sparsity * M) vertices with the largest |field| stay active. Ties in |field| are
/// broken by vertex index.
inline SimTruth make_truth(const BasisExpansion& basis, double sigma_beta_sq, double sparsity, std::uint64_t seed,
                           double beta0 = 2.0, double sigma_eps_sq = 0.2) {
    detail::require(sparsity > 0.0 && sparsity <= 1.0, "make_truth: sparsity must lie in (0, 1]");
    detail::require(sigma_eps_sq > 0.0, "make_truth: noise variance must be positive");
    Rng rng = make_stream(seed, "truth");
    const Eigen::VectorXd field = sample_field(basis, sigma_beta_sq, rng);
    const Eigen::Index m = field.size();
    const auto count = std::min<Eigen::Index>(m, static_cast<Eigen::Index>(std::ceil(sparsity * m - 1e-9)));

    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return std::abs(field[a]) > std::abs(field[b]); });
    SimTruth t;
    t.beta_true = Eigen::VectorXd::Zero(m);
    t.support_mask.assign(static_cast<std::size_t>(m), false);
    for (Eigen::Index i = 0; i < count; ++i) {
        const Eigen::Index j = order[static_cast<std::size_t>(i)];
        t.beta_true[j] = field[j];
        t.support_mask[static_cast<std::size_t>(j)] = true;
    }
    t.beta0_true = beta0;
    t.sigma_eps_sq_true = sigma_eps_sq;
    t.manifest = {seed, sigma_beta_sq, sparsity, basis.size()};
    return t;
}

/// N images, each an independent field draw with coefficient variance sigma_x_sq.
inline Eigen::MatrixXd make_inputs(const BasisExpansion& basis, Eigen::Index n, double sigma_x_sq,
                                   std::uint64_t seed, std::uint64_t index = 0) {
    detail::require(n >= 1, "make_inputs: need at least one subject");
    detail::require(sigma_x_sq > 0.0, "make_inputs: variance must be positive");
    Rng rng = make_stream(seed, "inputs", index);
    std::normal_distribution<double> normal(0.0, std::sqrt(sigma_x_sq));
    Eigen::MatrixXd coeffs(n, basis.size());
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index l = 0; l < basis.size(); ++l) coeffs(i, l) = normal(rng);
    return coeffs * basis.basis.transpose();
}

/// y_i = beta0 + x_i' beta + eps_i, eps_i ~ N(0, sigma_eps_sq).
inline Eigen::VectorXd make_outputs(const Eigen::MatrixXd& x, const SimTruth& truth, std::uint64_t seed,
                                    std::uint64_t index = 0) {
    detail::require(x.cols() == truth.beta_true.size(), "make_outputs: X and truth disagree on vertex count");
    Rng rng = make_stream(seed, "noise", index);
    std::normal_distribution<double> normal(0.0, std::sqrt(truth.sigma_eps_sq_true));
    Eigen::VectorXd y = x * truth.beta_true;
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += truth.beta0_true + normal(rng);
    return y;
}

struct StudyConfig {
    Eigen::Index n_train = 500;
    Eigen::Index n_test = 1000;
    int reps = 10;
    double sigma_beta_sq = 1.0;
    double sparsity = 0.1;
    double sigma_x_sq = 1.0;
    double beta0 = 2.0;
    double sigma_eps_sq = 0.2;
    std::uint64_t seed = 1;

    void validate() const {
        detail::require(reps >= 1, "StudyConfig: reps must be >= 1");
        detail::require(n_train >= 1 && n_test >= 1, "StudyConfig: sample sizes must be >= 1");
    }
};

struct Replicate {
    Dataset train;
    Dataset test;
};

struct Study {
    SimTruth truth;
    std::vector<Replicate> replicates;
};

/// One fixed truth drawn from truth_basis; images drawn from input_basis, with inputs and
/// noise redrawn per replicate from indexed substreams.
inline Study replicate_study(const BasisExpansion& truth_basis, const BasisExpansion& basis, const StudyConfig& cfg) {
    cfg.validate();
    detail::require(truth_basis.vertices() == basis.vertices(), "replicate_study: bases disagree on vertex count");
    Study s;
    s.truth = make_truth(truth_basis, cfg.sigma_beta_sq, cfg.sparsity, cfg.seed, cfg.beta0, cfg.sigma_eps_sq);
    for (int r = 0; r < cfg.reps; ++r) {
        const auto train_idx = static_cast<std::uint64_t>(2 * r);
        const auto test_idx = train_idx + 1;
        Eigen::MatrixXd xtr = make_inputs(basis, cfg.n_train, cfg.sigma_x_sq, cfg.seed, train_idx);
        Eigen::VectorXd ytr = make_outputs(xtr, s.truth, cfg.seed, train_idx);
        Eigen::MatrixXd xte = make_inputs(basis, cfg.n_test, cfg.sigma_x_sq, cfg.seed, test_idx);
        Eigen::VectorXd yte = make_outputs(xte, s.truth, cfg.seed, test_idx);
        s.replicates.push_back({Dataset::make(std::move(ytr), std::move(xtr)), Dataset::make(std::move(yte), std::move(xte))});
    }
    return s;
}

/// Truth and images share one basis.
inline Study replicate_study(const BasisExpansion& basis, const StudyConfig& cfg) {
    return replicate_study(basis, basis, cfg);
}

}  // namespace rtgp
