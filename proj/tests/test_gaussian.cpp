#include "gsalign/error.hpp"
#include "gsalign/gaussian.hpp"
#include "oracles.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

using namespace gsalign;

namespace {

Eigen::Matrix3d dense_cov(const Vec3& s, const Quat& q) {
    const Eigen::Matrix3d r = Eigen::Quaterniond(q.w, q.x, q.y, q.z).normalized().toRotationMatrix();
    const Eigen::Matrix3d sm = Eigen::Vector3d(s[0], s[1], s[2]).asDiagonal();
    return r * sm * sm.transpose() * r.transpose();
}

GaussianCloud opacities(std::initializer_list<double> ops) {
    GaussianCloud c;
    double x = 0.0;
    for (double o : ops) {
        GaussianPrimitive g;
        g.opacity = o;
        g.mu = {x, 0.0, 0.0};
        x += 1.0;
        c.primitives.push_back(g);
    }
    return c;
}

} // namespace

TEST(Covariance, IdentityCases) {
    const auto c = covariance({1, 1, 1}, Quat{});
    const auto d = covariance({2, 3, 4}, Quat{});
    const double diag[3] = {4.0, 9.0, 16.0};
    for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 3; ++k) {
            EXPECT_EQ(c(r, k), r == k ? 1.0 : 0.0);
            EXPECT_EQ(d(r, k), r == k ? diag[r] : 0.0);
        }
    }
}

TEST(Covariance, MatchesDenseProductOracle) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> su(0.01, 3.0);
    for (int t = 0; t < 100; ++t) {
        const Vec3 s{su(rng), su(rng), su(rng)};
        const Quat q = oracle::random_unit_quat(rng);
        const auto c = covariance(s, q);
        const auto ref = dense_cov(s, q);
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) EXPECT_NEAR(c(r, k), ref(r, k), 1e-10);
    }
}

TEST(Covariance, DoubleCoverSymmetricPsd) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> su(0.01, 2.0);
    for (int t = 0; t < 100; ++t) {
        const Vec3 s{su(rng), su(rng), su(rng)};
        const Quat q = oracle::random_unit_quat(rng);
        const auto a = covariance(s, q), b = covariance(s, -q);
        Eigen::Matrix3d m;
        for (int r = 0; r < 3; ++r) {
            for (int k = 0; k < 3; ++k) {
                EXPECT_NEAR(a(r, k), b(r, k), 1e-12);
                EXPECT_NEAR(a(r, k), a(k, r), 1e-12);
                m(r, k) = a(r, k);
            }
        }
        const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(m).eigenvalues();
        EXPECT_GE(ev.minCoeff(), -1e-9);
    }
}

TEST(Covariance, EigenvaluesAreSquaredScales) {
    const auto c = covariance({0.5, 2.0, 1.5}, Quat{});
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) m(r, k) = c(r, k);
    const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(m).eigenvalues();
    EXPECT_NEAR(ev[0], 0.25, 1e-10);
    EXPECT_NEAR(ev[1], 2.25, 1e-10);
    EXPECT_NEAR(ev[2], 4.0, 1e-10);
}

TEST(Covariance, RotationNormalization) {
    EXPECT_THROW(covariance({1, 1, 1}, Quat{0, 0, 0, 0}), InvalidRotationError);
    EXPECT_THROW(covariance({1, 1, 1}, Quat{2, 0, 0, 0}), InvalidRotationError);
    const Quat near{1.0 + 5e-7, 0, 0, 0};
    EXPECT_NEAR(normalized_rotation(near).w, 1.0, 1e-15);
}

TEST(Prune, DistinctValues) {
    const auto out = prune_top_n(opacities({0.9, 0.1, 0.5, 0.7}), 2);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out.primitives[0].opacity, 0.9);
    EXPECT_EQ(out.primitives[1].opacity, 0.7);
}

TEST(Prune, TiesKeepInputOrder) {
    const auto out = prune_top_n(opacities({0.5, 0.5, 0.5}), 2);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out.primitives[0].mu[0], 0.0);
    EXPECT_EQ(out.primitives[1].mu[0], 1.0);
}

TEST(Prune, NoOpWhenLarge) {
    std::mt19937_64 rng(13);
    const auto c = oracle::random_cloud(20, rng);
    const auto out = prune_top_n(c, 20);
    EXPECT_EQ(out.primitives, c.primitives);
    EXPECT_EQ(prune_top_n(c, 100).primitives, c.primitives);
    EXPECT_THROW(prune_top_n(c, 0), InputError);
}

TEST(Prune, MatchesOracleAndIsIdempotent) {
    std::mt19937_64 rng(14);
    std::uniform_int_distribution<int> level(0, 4);
    for (int t = 0; t < 50; ++t) {
        auto c = oracle::random_cloud(1 + t % 32, rng);
        std::vector<double> ops;
        for (auto& g : c.primitives) {
            g.opacity = 0.2 * level(rng);  // many ties
            ops.push_back(g.opacity);
        }
        const std::size_t n = 1 + t % 7;
        const auto out = prune_top_n(c, n);
        const auto keep = oracle::prune_indices(ops, n);
        ASSERT_EQ(out.size(), keep.size());
        for (std::size_t i = 0; i < keep.size(); ++i) EXPECT_EQ(out.primitives[i], c.primitives[keep[i]]);
        EXPECT_EQ(prune_top_n(out, n).primitives, out.primitives);
    }
}

TEST(FromPointCloud, PaperSettings) {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 2, 3}, {-1, 0, 1}};
    const std::vector<Vec3> cols{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    const auto c = from_point_cloud(pts, cols, 0.4, 0.4);
    ASSERT_EQ(c.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(c.primitives[i].mu, pts[i]);
        EXPECT_EQ(c.primitives[i].color, cols[i]);
        EXPECT_EQ(c.primitives[i].opacity, 0.4);
        EXPECT_EQ(c.primitives[i].scale, (Vec3{0.4, 0.4, 0.4}));
        EXPECT_EQ(c.primitives[i].rotation, Quat{});
    }
    const auto z = from_point_cloud(pts, cols, 0.0, 0.0);
    EXPECT_EQ(z.primitives[0].opacity, 0.0);
    EXPECT_EQ(z.primitives[0].scale, (Vec3{1e-6, 1e-6, 1e-6}));
    EXPECT_TRUE(from_point_cloud({}, {}, 0.4, 0.4).empty());
    EXPECT_THROW(from_point_cloud(pts, std::vector<Vec3>(2), 0.4, 0.4), InputError);
}

TEST(Normalize, FixedPointAndDegenerate) {
    GaussianCloud c = opacities({0.5, 0.5});
    c.primitives[0].mu = {1, 0, 0};
    c.primitives[1].mu = {-1, 0, 0};
    const auto n = normalize_cloud(c);
    EXPECT_EQ(n.radius, 1.0);
    EXPECT_EQ(n.centroid, (Vec3{0, 0, 0}));
    EXPECT_EQ(n.cloud.primitives, c.primitives);

    GaussianCloud one = opacities({0.3});
    one.primitives[0].mu = {5, 5, 5};
    const auto d = normalize_cloud(one);
    EXPECT_EQ(d.radius, 1.0);
    EXPECT_EQ(d.cloud.primitives[0].mu, (Vec3{0, 0, 0}));
}

TEST(Normalize, UnitBallIdempotentTranslationInvariant) {
    std::mt19937_64 rng(15);
    for (int t = 0; t < 20; ++t) {
        auto c = oracle::random_cloud(30, rng, 3.0);
        const auto n = normalize_cloud(c);
        double maxr = 0.0;
        Vec3 mean{};
        for (const auto& g : n.cloud.primitives) {
            maxr = std::max(maxr, std::sqrt(oracle::dist2(g.mu, {0, 0, 0})));
            for (int k = 0; k < 3; ++k) mean[k] += g.mu[k] / 30.0;
        }
        EXPECT_NEAR(maxr, 1.0, 1e-12);
        for (double m : mean) EXPECT_NEAR(m, 0.0, 1e-12);
        for (std::size_t i = 0; i < c.size(); ++i) {
            EXPECT_NEAR(n.cloud.primitives[i].scale[0], c.primitives[i].scale[0] / n.radius, 1e-15);
            EXPECT_EQ(n.cloud.primitives[i].opacity, c.primitives[i].opacity);
        }
        const auto nn = normalize_cloud(n.cloud);
        for (std::size_t i = 0; i < c.size(); ++i)
            for (int k = 0; k < 3; ++k) EXPECT_NEAR(nn.cloud.primitives[i].mu[k], n.cloud.primitives[i].mu[k], 1e-12);

        auto moved = c;
        for (auto& g : moved.primitives)
            for (int k = 0; k < 3; ++k) g.mu[k] += 7.5 * (k + 1);
        const auto nm = normalize_cloud(moved);
        for (std::size_t i = 0; i < c.size(); ++i)
            for (int k = 0; k < 3; ++k) EXPECT_NEAR(nm.cloud.primitives[i].mu[k], n.cloud.primitives[i].mu[k], 1e-12);
    }
}

TEST(Validate, RejectsOutOfRange) {
    GaussianPrimitive g;
    g.opacity = 0.5;
    EXPECT_NO_THROW(validate(g));
    g.opacity = 1.5;
    EXPECT_THROW(validate(g), InputError);
    g.opacity = 0.5;
    g.scale = {1, 0, 1};
    EXPECT_THROW(validate(g), InputError);
}
