#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "rtgp/errors.hpp"
#include "rtgp/geometry.hpp"
#include "rtgp/rng.hpp"

namespace {

using namespace rtgp;
constexpr double kPi = std::numbers::pi;

Point3 random_unit(Rng& rng) {
    std::normal_distribution<double> n;
    Point3 p(n(rng), n(rng), n(rng));
    return p.normalized();
}

TEST(GreatCircle, IdenticalAntipodalAndScaled) {
    EXPECT_EQ(great_circle_distance({0, 0, 1}, {0, 0, 1}, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(great_circle_distance({0, 0, 1}, {0, 0, -1}, 1.0), kPi);
    EXPECT_DOUBLE_EQ(great_circle_distance({2, 0, 0}, {0, 2, 0}, 2.0), kPi);
}

TEST(GreatCircle, KeepsPrecisionForNearlyCoincidentPoints) {
    const double eps = 1e-9;
    const Point3 a(1, 0, 0), b(std::cos(eps), std::sin(eps), 0);
    EXPECT_NEAR(great_circle_distance(a, b, 1.0), eps, 1e-20);
}

TEST(GreatCircle, RejectsBadInput) {
    EXPECT_THROW(great_circle_distance({0, 0, 1}, {0, 1, 0}, 0.0), InvalidArgument);
    EXPECT_THROW(great_circle_distance({0, 0, 1}, {0, 1, 0}, -1.0), InvalidArgument);
    EXPECT_THROW(great_circle_distance({NAN, 0, 1}, {0, 1, 0}, 1.0), InvalidArgument);
    EXPECT_THROW(great_circle_distance({0, 0, 1}, {0, 1, 0}, INFINITY), InvalidArgument);
}

TEST(GreatCircle, TriangleInequalityOnRandomTriples) {
    Rng rng = make_stream(3, "geometry");
    for (int t = 0; t < 2000; ++t) {
        const Point3 a = random_unit(rng), b = random_unit(rng), c = random_unit(rng);
        const double ab = great_circle_distance(a, b, 1.0), bc = great_circle_distance(b, c, 1.0),
                     ac = great_circle_distance(a, c, 1.0);
        EXPECT_LE(ac, ab + bc + 1e-12);
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, kPi);
    }
}

TEST(GreatCircle, InvariantUnderCommonRotation) {
    Rng rng = make_stream(4, "geometry");
    std::uniform_real_distribution<double> ang(0.0, 2.0 * kPi);
    const double r = 3.0;
    for (int t = 0; t < 500; ++t) {
        const Point3 a = r * random_unit(rng), b = r * random_unit(rng);
        const Eigen::Matrix3d rot = Eigen::AngleAxisd(ang(rng), random_unit(rng)).toRotationMatrix();
        EXPECT_NEAR(great_circle_distance(rot * a, rot * b, r), great_circle_distance(a, b, r), 1e-9 * r);
    }
}

TEST(VertexSet, ProjectsNearlyOnSpherePointsAndRejectsOthers) {
    PointMatrix p(2, 3);
    p << 1.0 + 1e-8, 0, 0, 0, 1, 0;
    const VertexSet v = VertexSet::from_points(p, 1.0);
    EXPECT_NEAR(v.point(0).norm(), 1.0, 1e-15);
    p(1, 1) = 1.1;
    EXPECT_THROW(VertexSet::from_points(p, 1.0), InvalidArgument);
    EXPECT_THROW(VertexSet::from_points(PointMatrix(0, 3), 1.0), InvalidArgument);
    EXPECT_THROW(VertexSet::from_points(p, 0.0), InvalidArgument);
}

TEST(DistanceMatrix, SmallHandCases) {
    const Eigen::MatrixXd one = pairwise_distance_matrix(fibonacci_sphere(1, 1.0));
    ASSERT_EQ(one.rows(), 1);
    EXPECT_EQ(one(0, 0), 0.0);

    PointMatrix anti(2, 3);
    anti << 0, 0, 1, 0, 0, -1;
    const Eigen::MatrixXd d2 = pairwise_distance_matrix(VertexSet::from_points(anti, 1.0));
    EXPECT_DOUBLE_EQ(d2(0, 1), kPi);
    EXPECT_EQ(d2(0, 0), 0.0);

    PointMatrix axes = PointMatrix::Identity(3, 3);
    const Eigen::MatrixXd d3 = pairwise_distance_matrix(VertexSet::from_points(axes, 1.0));
    for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(d3(j, k), j == k ? 0.0 : kPi / 2, 1e-15);
}

TEST(DistanceMatrix, ExactlySymmetricAndBounded) {
    const VertexSet v = fibonacci_sphere(200, 2.5);
    const Eigen::MatrixXd d = pairwise_distance_matrix(v);
    EXPECT_EQ((d - d.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(d.diagonal().cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GE(d.minCoeff(), 0.0);
    EXPECT_LE(d.maxCoeff(), kPi * 2.5);
}

TEST(Fibonacci, SinglePointHasRadiusNorm) {
    const VertexSet v = fibonacci_sphere(1, 4.0);
    EXPECT_NEAR(v.point(0).norm(), 4.0, 1e-12);
    EXPECT_THROW(fibonacci_sphere(0, 1.0), InvalidArgument);
}

TEST(Fibonacci, PointsAreDistinctAndDeterministic) {
    const VertexSet a = fibonacci_sphere(2000, 1.0), b = fibonacci_sphere(2000, 1.0);
    EXPECT_EQ((a.coords() - b.coords()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(nearest_neighbor_distances(a).minCoeff(), 0.0);
}

TEST(Fibonacci, NearestNeighbourSpacingIsUniform) {
    // Frozen from an independent numpy evaluation of the same lattice: CV = 0.02071.
    const Eigen::VectorXd nn = nearest_neighbor_distances(fibonacci_sphere(500, 1.0));
    const double mean = nn.mean();
    const double sd = std::sqrt((nn.array() - mean).square().mean());
    EXPECT_NEAR(sd / mean, 0.0207104873711268, 1e-6);
    EXPECT_LT(sd / mean, 0.25);
}

}  // namespace
