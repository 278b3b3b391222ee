#include "gsalign/error.hpp"
#include "gsalign/grouping.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace gsalign;

namespace {

GaussianCloud cloud_at(const std::vector<Vec3>& pts) {
    GaussianCloud c;
    for (const auto& p : pts) {
        GaussianPrimitive g;
        g.mu = p;
        c.primitives.push_back(g);
    }
    return c;
}

std::vector<Vec3> positions(const GaussianCloud& c) {
    std::vector<Vec3> out;
    for (const auto& g : c.primitives) out.push_back(g.mu);
    return out;
}

} // namespace

TEST(Fps, CollinearStartsAtLowestIndexTie) {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
    EXPECT_EQ(farthest_point_sample(pts, 2), (std::vector<std::size_t>{0, 3}));
}

TEST(Fps, FullCountVisitsEveryPoint) {
    std::mt19937_64 rng(5);
    const auto c = oracle::random_cloud(13, rng);
    const auto idx = farthest_point_sample(positions(c), 13);
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 13u);
    const auto wrap = farthest_point_sample(positions(c), 20);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(wrap[i], idx[i % 13]);
}

TEST(Knn, SizeOneIsNearest) {
    const std::vector<Vec3> pts{{5, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {2, 2, 2}};
    EXPECT_EQ(k_nearest(pts, {0, 0, 0}, 1), (std::vector<std::size_t>{1}));
    EXPECT_EQ(k_nearest(pts, {0, 0, 0}, 3), (std::vector<std::size_t>{1, 2, 3}));
    EXPECT_EQ(k_nearest(pts, {0, 0, 0}, 6), (std::vector<std::size_t>{1, 2, 3, 0, 1, 2}));
}

TEST(Grouping, MatchesOraclesOnRandomInstances) {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<std::size_t> size(1, 32), gk(1, 12);
    for (int t = 0; t < 50; ++t) {
        auto c = oracle::random_cloud(size(rng), rng);
        // snap to a coarse lattice on some instances so distance ties occur
        if (t % 3 == 0)
            for (auto& g : c.primitives)
                for (auto& x : g.mu) x = std::round(x * 2.0) / 2.0;
        const auto pts = positions(c);
        const std::size_t g = gk(rng), k = gk(rng);
        EXPECT_EQ(farthest_point_sample(pts, g), oracle::fps(pts, g)) << "instance " << t;
        for (std::size_t i = 0; i < pts.size(); i += 3)
            EXPECT_EQ(k_nearest(pts, pts[i], k), oracle::knn(pts, pts[i], k)) << "instance " << t;
    }
}

TEST(Grouping, GroupDivideLayout) {
    std::mt19937_64 rng(7);
    const auto c = normalize_cloud(oracle::random_cloud(30, rng)).cloud;
    const GroupingConfig cfg{4, 5};
    const auto gc = group_divide(c, cfg);
    ASSERT_EQ(gc.centers.size(), 4u);
    ASSERT_EQ(gc.members.size(), 20u);
    ASSERT_EQ(gc.relative.size(), 20u);
    const auto pts = positions(c);
    EXPECT_EQ(gc.center_index, oracle::fps(pts, 4));
    for (std::size_t g = 0; g < 4; ++g) {
        EXPECT_EQ(gc.centers[g], pts[gc.center_index[g]]);
        // a center is its own nearest neighbor
        EXPECT_EQ(gc.members[g * 5], gc.center_index[g]);
        for (std::size_t j = 0; j < 5; ++j) {
            const auto m = gc.members[g * 5 + j];
            for (int k = 0; k < 3; ++k) EXPECT_EQ(gc.relative[g * 5 + j][k], pts[m][k] - gc.centers[g][k]);
        }
    }
}

TEST(Grouping, GEqualsCloudSizeMakesEveryPointACenter) {
    std::mt19937_64 rng(8);
    const auto c = normalize_cloud(oracle::random_cloud(9, rng)).cloud;
    const auto gc = group_divide(c, {9, 3});
    EXPECT_EQ(std::set<std::size_t>(gc.center_index.begin(), gc.center_index.end()).size(), 9u);
}

TEST(Grouping, InvalidInputs) {
    EXPECT_THROW(group_divide(GaussianCloud{}, {}), InputError);
    EXPECT_THROW(group_divide(cloud_at({{0, 0, 0}}), {0, 4}), ConfigError);
    EXPECT_THROW(group_divide(cloud_at({{0, 0, 0}}), {4, 0}), ConfigError);
    EXPECT_THROW(farthest_point_sample({}, 2), InputError);
}
