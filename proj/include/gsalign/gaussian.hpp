#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gsalign {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Rotation quaternion, scalar first.
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const;
    Quat operator-() const { return {-w, -x, -y, -z}; }
    friend bool operator==(const Quat&, const Quat&) = default;
};

/// One 3D Gaussian with spherical-harmonics degree 0. All attributes are
/// post-activation: opacity in [0,1], positive scale, unit quaternion.
struct GaussianPrimitive {
    Vec3 mu{};
    Vec3 color{};
    double opacity = 0.0;
    Vec3 scale{1.0, 1.0, 1.0};
    Quat rotation{};

    friend bool operator==(const GaussianPrimitive&, const GaussianPrimitive&) = default;
};

struct GaussianCloud {
    std::string id;
    std::vector<GaussianPrimitive> primitives;

    std::size_t size() const { return primitives.size(); }
    bool empty() const { return primitives.empty(); }
};

/// Symmetric positive semi-definite 3x3 matrix, scene units squared.
struct Covariance3 {
    Mat3 m{};
    double operator()(std::size_t r, std::size_t c) const { return m[r][c]; }
};

/// Throws InputError describing the first violated invariant.
void validate(const GaussianPrimitive& g);

/// Returns q / |q|. Deviations from unit length below 1e-6 are corrected;
/// larger ones and zero-norm quaternions raise InvalidRotationError.
Quat normalized_rotation(const Quat& q);

Mat3 rotation_matrix(const Quat& unit_q);

/// R diag(s) diag(s) R^T.
Covariance3 covariance(const Vec3& scale, const Quat& rotation);

/// Keeps the n most opaque primitives. Ties go to the earlier primitive and
/// survivors keep their input order.
GaussianCloud prune_top_n(const GaussianCloud& cloud, std::size_t n);

/// One isotropic, axis-aligned primitive per point. Scales below 1e-6 are
/// raised to 1e-6.
GaussianCloud from_point_cloud(std::span<const Vec3> points, std::span<const Vec3> colors,
                               double opacity_init, double scale_init, std::string id = {});

inline constexpr double kMinScale = 1e-6;

struct NormalizedCloud {
    GaussianCloud cloud;
    Vec3 centroid{};
    double radius = 1.0;
};

/// Centers the cloud at the origin and scales it into the unit ball. Scales
/// shrink by the same radius. All-coincident clouds get radius 1.
NormalizedCloud normalize_cloud(const GaussianCloud& cloud);

} // namespace gsalign
