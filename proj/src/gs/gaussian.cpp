#include "gsalign/gaussian.hpp"

#include "gsalign/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace gsalign {

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

void validate(const GaussianPrimitive& g) {
    for (double v : g.mu) {
        if (!std::isfinite(v)) throw InputError("primitive position is not finite");
    }
    if (!(g.opacity >= 0.0 && g.opacity <= 1.0)) {
        throw InputError("opacity " + std::to_string(g.opacity) + " outside [0,1]");
    }
    for (double s : g.scale) {
        if (!(s > 0.0) || !std::isfinite(s)) throw InputError("scale components must be > 0");
    }
    for (double c : g.color) {
        if (!(c >= 0.0 && c <= 1.0)) throw InputError("color components must lie in [0,1]");
    }
    if (std::abs(g.rotation.norm() - 1.0) > 1e-9) {
        throw InputError("rotation quaternion is not unit length");
    }
}

Quat normalized_rotation(const Quat& q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw InvalidRotationError("zero-norm rotation quaternion");
    if (std::abs(n - 1.0) >= 1e-6) {
        throw InvalidRotationError("rotation quaternion norm " + std::to_string(n) +
                                   " is not unit length");
    }
    return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Mat3 rotation_matrix(const Quat& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    return {{{1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)},
             {2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)},
             {2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)}}};
}

Covariance3 covariance(const Vec3& scale, const Quat& rotation) {
    for (double s : scale) {
        if (!(s > 0.0)) throw InputError("scale components must be > 0");
    }
    const Mat3 r = rotation_matrix(normalized_rotation(rotation));
    const Vec3 s2{scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]};
    Covariance3 out;
    // Sigma_ij = sum_k R_ik s_k^2 R_jk; filling the upper triangle and
    // mirroring keeps the result exactly symmetric.
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = i; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 3; ++k) acc += r[i][k] * s2[k] * r[j][k];
            out.m[i][j] = acc;
            out.m[j][i] = acc;
        }
    }
    return out;
}

GaussianCloud prune_top_n(const GaussianCloud& cloud, std::size_t n) {
    if (n == 0) throw InputError("prune_top_n requires n >= 1");
    if (n >= cloud.size()) return cloud;
    std::vector<std::size_t> order(cloud.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return cloud.primitives[a].opacity > cloud.primitives[b].opacity;
    });
    order.resize(n);
    std::sort(order.begin(), order.end());
    GaussianCloud out;
    out.id = cloud.id;
    out.primitives.reserve(n);
    for (std::size_t idx : order) out.primitives.push_back(cloud.primitives[idx]);
    return out;
}

GaussianCloud from_point_cloud(std::span<const Vec3> points, std::span<const Vec3> colors,
                               double opacity_init, double scale_init, std::string id) {
    if (points.size() != colors.size()) {
        throw InputError("point cloud has " + std::to_string(points.size()) + " points but " +
                         std::to_string(colors.size()) + " colors");
    }
    if (!(opacity_init >= 0.0 && opacity_init <= 1.0)) {
        throw InputError("opacity_init must lie in [0,1]");
    }
    if (!(scale_init >= 0.0)) throw InputError("scale_init must be >= 0");
    const double s = std::max(scale_init, kMinScale);
    GaussianCloud out;
    out.id = std::move(id);
    out.primitives.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        GaussianPrimitive g;
        g.mu = points[i];
        g.color = colors[i];
        g.opacity = opacity_init;
        g.scale = {s, s, s};
        g.rotation = Quat{};
        out.primitives.push_back(g);
    }
    return out;
}

NormalizedCloud normalize_cloud(const GaussianCloud& cloud) {
    if (cloud.empty()) throw InputError("cannot normalize an empty cloud");
    Vec3 c{0.0, 0.0, 0.0};
    for (const auto& g : cloud.primitives) {
        for (std::size_t k = 0; k < 3; ++k) c[k] += g.mu[k];
    }
    const double inv_n = 1.0 / static_cast<double>(cloud.size());
    for (double& v : c) v *= inv_n;

    double radius = 0.0;
    for (const auto& g : cloud.primitives) {
        const double dx = g.mu[0] - c[0], dy = g.mu[1] - c[1], dz = g.mu[2] - c[2];
        radius = std::max(radius, std::sqrt(dx * dx + dy * dy + dz * dz));
    }

    NormalizedCloud out;
    out.centroid = c;
    out.cloud = cloud;
    if (radius == 0.0) {
        out.radius = 1.0;
        for (auto& g : out.cloud.primitives) g.mu = {0.0, 0.0, 0.0};
        return out;
    }
    out.radius = radius;
    for (auto& g : out.cloud.primitives) {
        for (std::size_t k = 0; k < 3; ++k) {
            g.mu[k] = (g.mu[k] - c[k]) / radius;
            g.scale[k] /= radius;
        }
    }
    return out;
}

} // namespace gsalign
