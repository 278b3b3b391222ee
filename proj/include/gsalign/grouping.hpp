#pragma once

#include "gsalign/gaussian.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace gsalign {

struct GroupingConfig {
    std::size_t num_groups = 16;
    std::size_t group_size = 16;

    void validate() const;
};

/// Farthest-point sampling. The first pick is the point farthest from the
/// centroid; each later pick maximizes the distance to the chosen set.
/// Ties go to the lowest index. When `count` exceeds the number of points
/// the full sampling order repeats cyclically.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count);

/// The k nearest points to `center`, nearest first, ties to the lowest
/// index. With fewer than k points the sorted list repeats cyclically.
std::vector<std::size_t> k_nearest(std::span<const Vec3> points, const Vec3& center, std::size_t k);

struct GroupedCloud {
    std::size_t num_groups = 0;
    std::size_t group_size = 0;
    std::vector<Vec3> centers;              // num_groups
    std::vector<std::size_t> center_index;  // num_groups, into the cloud
    std::vector<std::size_t> members;       // num_groups * group_size, into the cloud
    std::vector<Vec3> relative;             // member position minus its center
};

/// Expects a normalized cloud (see normalize_cloud).
GroupedCloud group_divide(const GaussianCloud& cloud, const GroupingConfig& cfg);

} // namespace gsalign
