#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "rtgp/errors.hpp"
#include "rtgp/geometry.hpp"
#include "rtgp/kernel_basis.hpp"
#include "rtgp/rng.hpp"

namespace {

using namespace rtgp;

TEST(Correlation, HandEvaluations) {
    EXPECT_EQ(correlation(0.0, {3.0, 1.5}), 1.0);
    EXPECT_NEAR(correlation(1.0, {1.0, 2.0}), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(correlation(2.0, {0.5, 1.0}), std::exp(-1.0), 1e-15);
    EXPECT_THROW(correlation(-0.1, {1.0, 1.0}), InvalidArgument);
}

TEST(Correlation, MonotoneInDistanceAndDecay) {
    for (double nu : {0.5, 1.0, 2.0}) {
        double prev = 1.0;
        for (double d = 0.05; d < 3.2; d += 0.05) {
            const double c = correlation(d, {1.3, nu});
            EXPECT_LT(c, prev);
            EXPECT_LE(correlation(d, {2.0, nu}), c);
            prev = c;
        }
    }
}

TEST(KernelParams, RejectsInvalidParameters) {
    EXPECT_THROW((KernelParams{0.0, 1.0}.validate()), InvalidArgument);
    EXPECT_THROW((KernelParams{1.0, 2.5}.validate()), InvalidArgument);
    EXPECT_THROW((KernelParams{1.0, 0.0}.validate()), InvalidArgument);
}

TEST(Gram, SingleVertexAndDecayLimit) {
    const Eigen::MatrixXd k1 = gram(fibonacci_sphere(1, 1.0), {1.0, 2.0}, 1e-8);
    EXPECT_DOUBLE_EQ(k1(0, 0), 1.0 + 1e-8);
    const Eigen::MatrixXd k = gram(fibonacci_sphere(20, 1.0), {1e4, 1.0}, 0.0);
    EXPECT_LT((k - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff(), 1e-100);
}

TEST(Gram, AntipodalPairAndDistanceMatrixPath) {
    Eigen::MatrixXd d(2, 2);
    d << 0, std::numbers::pi, std::numbers::pi, 0;
    const Eigen::MatrixXd k = gram(d, {1.0, 1.0}, 0.0);
    EXPECT_NEAR(k(0, 1), std::exp(-std::numbers::pi), 1e-15);
    EXPECT_NEAR(k(0, 1), 0.0432139, 1e-7);
    Eigen::MatrixXd bad = d;
    bad(0, 1) = 1.0;
    EXPECT_THROW(gram(bad, {1.0, 1.0}), InvalidArgument);
}

TEST(Gram, VertexPathMatchesDistancePathAndIsPositiveDefinite) {
    const VertexSet v = fibonacci_sphere(300, 1.0);
    const KernelParams kp{2.0, 2.0};
    const Eigen::MatrixXd a = gram(v, kp), b = gram(pairwise_distance_matrix(v), kp);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ((a - a.transpose()).cwiseAbs().maxCoeff(), 0.0);
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    EXPECT_EQ(llt.info(), Eigen::Success);
}

TEST(Truncation, IdentityAndRankOne) {
    const BasisExpansion b = truncate_basis(Eigen::MatrixXd::Identity(5, 5), KappaTarget{0.6});
    EXPECT_EQ(b.size(), 3);
    EXPECT_TRUE(b.eigenvalues.isApproxToConstant(1.0));
    EXPECT_NEAR(b.kappa_achieved, 0.6, 1e-15);

    Eigen::VectorXd v(4);
    v << 1, 2, -1, 0.5;
    const Eigen::MatrixXd r1 = v * v.transpose();
    for (double kappa : {0.1, 0.5, 0.999}) EXPECT_EQ(truncate_basis(r1, KappaTarget{kappa}).size(), 1);
    EXPECT_THROW(truncate_basis(r1, FixedCount{2}), InvalidArgument);
}

TEST(Truncation, RejectsBadSelectors) {
    const Eigen::MatrixXd k = Eigen::MatrixXd::Identity(4, 4);
    EXPECT_THROW(truncate_basis(k, KappaTarget{0.0}), InvalidArgument);
    EXPECT_THROW(truncate_basis(k, KappaTarget{1.0}), InvalidArgument);
    EXPECT_THROW(truncate_basis(k, FixedCount{5}), InvalidArgument);
    EXPECT_THROW(truncate_basis(k, FixedCount{0}), InvalidArgument);
}

TEST(Truncation, FixedHundredOnSimulatedSphere) {
    const Eigen::MatrixXd k = gram(fibonacci_sphere(2000, 1.0), {8.0, 2.0});
    const BasisExpansion b = truncate_basis(k, FixedCount{100});
    EXPECT_EQ(b.size(), 100);
    EXPECT_EQ(b.vertices(), 2000);
    EXPECT_GT(b.kappa_achieved, 0.0);
    EXPECT_LT(b.kappa_achieved, 1.0);
    EXPECT_NEAR(b.kappa_achieved, b.eigenvalues.sum() / k.trace(), 1e-14);
}

TEST(Truncation, ReconstructionBoundAndMinimality) {
    const Eigen::MatrixXd k = gram(fibonacci_sphere(150, 1.0), {3.0, 1.0});
    const Eigenpairs full = dense_eigenpairs(k);
    const double total = k.trace();
    for (double kappa : {0.3, 0.6, 0.9, 0.99}) {
        const BasisExpansion b = truncate_basis(k, KappaTarget{kappa});
        const Eigen::Index l = b.size();
        const Eigen::MatrixXd approx = b.eigenvectors * b.eigenvalues.asDiagonal() * b.eigenvectors.transpose();
        const double err = (k - approx).squaredNorm();
        const double tail = full.values.tail(full.values.size() - l).squaredNorm();
        EXPECT_LE(err, tail * (1.0 + 1e-8) + 1e-20) << kappa;
        EXPECT_GE(b.kappa_achieved, kappa);
        if (l > 1) {
            EXPECT_LT(full.values.head(l - 1).sum() / total, kappa) << kappa;
        }
    }
}

TEST(Truncation, EigenvaluesDescendingWithSignConvention) {
    const BasisExpansion b = truncate_basis(gram(fibonacci_sphere(120, 1.0), {2.0, 2.0}), FixedCount{30});
    for (Eigen::Index l = 1; l < b.size(); ++l) EXPECT_LE(b.eigenvalues[l], b.eigenvalues[l - 1]);
    for (Eigen::Index c = 0; c < b.size(); ++c) {
        Eigen::Index idx;
        b.eigenvectors.col(c).cwiseAbs().maxCoeff(&idx);
        EXPECT_GT(b.eigenvectors(idx, c), 0.0);
    }
}

TEST(Truncation, DenseAndIterativeSolversAgree) {
    const Eigen::MatrixXd k = gram(fibonacci_sphere(400, 1.0), {4.0, 2.0});
    const BasisExpansion d = truncate_basis(k, FixedCount{40}, EigenSolverKind::Dense);
    const BasisExpansion it = truncate_basis(k, FixedCount{40}, EigenSolverKind::Iterative);
    EXPECT_LT((d.eigenvalues - it.eigenvalues).cwiseAbs().maxCoeff(), 1e-6);
    const Eigen::MatrixXd kd = d.basis * d.basis.transpose(), ki = it.basis * it.basis.transpose();
    EXPECT_LT((kd - ki).cwiseAbs().maxCoeff(), 1e-6);
    // Well-separated leading eigenvectors must also match under the sign convention.
    EXPECT_LT((d.eigenvectors.col(0) - it.eigenvectors.col(0)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(MakeBasis, ValidatesInputs) {
    Eigen::VectorXd vals(2);
    vals << 1.0, 2.0;
    EXPECT_THROW(make_basis(vals, Eigen::MatrixXd::Identity(3, 2), 3.0), InvalidArgument);
    vals << 2.0, 1.0;
    EXPECT_THROW(make_basis(vals, Eigen::MatrixXd::Constant(3, 2, 1.0), 3.0), InvalidArgument);
    const BasisExpansion b = make_basis(vals, Eigen::MatrixXd::Identity(3, 2), 4.0);
    EXPECT_DOUBLE_EQ(b.kappa_achieved, 0.75);
    EXPECT_THROW(b.leading(3), InvalidArgument);
    EXPECT_EQ(b.leading(1).size(), 1);
}

TEST(FieldFromCoeffs, ZeroUnitAndRoundTrip) {
    const Eigen::MatrixXd k = gram(fibonacci_sphere(30, 1.0), {8.0, 1.0});
    const BasisExpansion b = truncate_basis(k, FixedCount{30});
    EXPECT_EQ(field_from_coeffs(b, Eigen::VectorXd::Zero(30)).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(field_from_coeffs(b, Eigen::VectorXd::Unit(30, 0)), b.basis.col(0));
    EXPECT_THROW(field_from_coeffs(b, Eigen::VectorXd::Zero(29)), InvalidArgument);

    Rng rng = make_stream(2, "field-test");
    std::normal_distribution<double> n;
    Eigen::VectorXd f(30);
    for (auto& x : f) x = n(rng);
    const Eigen::VectorXd theta = b.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal() * (b.eigenvectors.transpose() * f);
    EXPECT_LT((field_from_coeffs(b, theta) - f).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SampleField, DeterministicAndValidated) {
    const BasisExpansion b = truncate_basis(gram(fibonacci_sphere(40, 1.0), {2.0, 2.0}), FixedCount{10});
    EXPECT_EQ(sample_field(b, 1.0, std::uint64_t{5}), sample_field(b, 1.0, std::uint64_t{5}));
    EXPECT_NE(sample_field(b, 1.0, std::uint64_t{5}), sample_field(b, 1.0, std::uint64_t{6}));
    EXPECT_LT(sample_field(b, 1e-20, std::uint64_t{5}).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_THROW(sample_field(b, 0.0, std::uint64_t{5}), InvalidArgument);
    EXPECT_THROW(sample_field(b, -1.0, std::uint64_t{5}), InvalidArgument);
}

TEST(SampleField, EmpiricalCovarianceMatchesKernel) {
    const BasisExpansion b = truncate_basis(gram(fibonacci_sphere(50, 1.0), {2.0, 2.0}), FixedCount{50});
    const double s2 = 0.7;
    const int n = 10000;
    Rng rng = make_stream(8, "field-cov");
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(50, 50);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd f = sample_field(b, s2, rng);
        acc.noalias() += f * f.transpose();
    }
    acc /= n;
    const Eigen::MatrixXd target = s2 * b.basis * b.basis.transpose();
    for (int j = 0; j < 50; ++j)
        for (int k = 0; k < 50; ++k) {
            const double se = std::sqrt((target(j, j) * target(k, k) + target(j, k) * target(j, k)) / n);
            EXPECT_NEAR(acc(j, k), target(j, k), 5.0 * se) << j << "," << k;
        }
}

}  // namespace
