#include "gsalign/grouping.hpp"

#include "gsalign/error.hpp"
#include "gsalign/simd.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace gsalign {
namespace {

struct Soa {
    std::vector<double> x, y, z;
    explicit Soa(std::span<const Vec3> pts) : x(pts.size()), y(pts.size()), z(pts.size()) {
        for (std::size_t i = 0; i < pts.size(); ++i) {
            x[i] = pts[i][0];
            y[i] = pts[i][1];
            z[i] = pts[i][2];
        }
    }
    void distances(const Vec3& p, double* out) const {
        simd::active().sq_dist3(x.data(), y.data(), z.data(), x.size(), p[0], p[1], p[2], out);
    }
};

std::size_t first_argmax(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

} // namespace

void GroupingConfig::validate() const {
    if (num_groups < 1) throw ConfigError("num_groups must be >= 1");
    if (group_size < 1) throw ConfigError("group_size must be >= 1");
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count) {
    const std::size_t n = points.size();
    if (n == 0) throw InputError("farthest_point_sample: empty point set");
    Vec3 centroid{0, 0, 0};
    for (const Vec3& p : points) {
        for (std::size_t k = 0; k < 3; ++k) centroid[k] += p[k];
    }
    for (double& c : centroid) c /= static_cast<double>(n);

    const Soa soa(points);
    std::vector<double> tmp(n);
    soa.distances(centroid, tmp.data());
    std::size_t current = first_argmax(tmp);

    const std::size_t picks = std::min(count, n);
    std::vector<std::size_t> order;
    order.reserve(count);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < picks; ++i) {
        order.push_back(current);
        soa.distances(points[current], tmp.data());
        simd::active().min_inplace(tmp.data(), min_dist.data(), n);
        current = first_argmax(min_dist);
    }
    for (std::size_t i = picks; i < count; ++i) order.push_back(order[i % picks]);
    return order;
}

std::vector<std::size_t> k_nearest(std::span<const Vec3> points, const Vec3& center, std::size_t k) {
    const std::size_t n = points.size();
    if (n == 0) throw InputError("k_nearest: empty point set");
    const Soa soa(points);
    std::vector<double> dist(n);
    soa.distances(center, dist.data());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t take = std::min(k, n);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
                      });
    idx.resize(take);
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(idx[i % take]);
    return out;
}

GroupedCloud group_divide(const GaussianCloud& cloud, const GroupingConfig& cfg) {
    cfg.validate();
    if (cloud.empty()) throw InputError("group_divide: empty cloud");
    std::vector<Vec3> pts;
    pts.reserve(cloud.size());
    for (const auto& g : cloud.primitives) pts.push_back(g.mu);

    GroupedCloud out;
    out.num_groups = cfg.num_groups;
    out.group_size = cfg.group_size;
    out.center_index = farthest_point_sample(pts, cfg.num_groups);
    out.centers.reserve(cfg.num_groups);
    out.members.reserve(cfg.num_groups * cfg.group_size);
    out.relative.reserve(cfg.num_groups * cfg.group_size);
    for (std::size_t c : out.center_index) {
        const Vec3 center = pts[c];
        out.centers.push_back(center);
        for (std::size_t m : k_nearest(pts, center, cfg.group_size)) {
            out.members.push_back(m);
            out.relative.push_back({pts[m][0] - center[0], pts[m][1] - center[1], pts[m][2] - center[2]});
        }
    }
    return out;
}

} // namespace gsalign
