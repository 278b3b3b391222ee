#pragma once

#include "gsalign/gaussian.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace gsalign {

/// DC spherical-harmonics band constant: color = 0.5 + kSHC0 * f_dc.
inline constexpr double kSHC0 = 0.28209479177387814;

/// Every scalar property of the `vertex` element, widened to double.
/// Supports `ascii` and `binary_little_endian` files with any property
/// order and extra properties; list properties and other elements after
/// `vertex` are skipped.
struct PlyVertexTable {
    std::size_t count = 0;
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;

    // Null if absent.
    const std::vector<double>* find(const std::string& name) const;
    // Throws FormatError naming the property if absent.
    const std::vector<double>& require(const std::string& name) const;
};

PlyVertexTable read_ply_vertices(const std::filesystem::path& path);

/// Reads a 3DGS checkpoint laid out as x y z, f_dc_0..2, opacity (logit),
/// scale_0..2 (log), rot_0..3 (w x y z). Applies sigmoid/exp, maps the DC
/// term to RGB clamped to [0,1], and normalizes quaternions.
GaussianCloud load_ply(const std::filesystem::path& path);

/// Writes binary little-endian float32 with the same layout. Opacity is
/// clamped to [1e-7, 1 - 1e-7] before taking the logit.
void save_ply(const GaussianCloud& cloud, const std::filesystem::path& path);

/// Plain colored point cloud: x y z plus red/green/blue (uchar 0-255 or
/// float 0-1). Missing colors default to mid gray.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> colors;
};

PointCloud load_point_cloud_ply(const std::filesystem::path& path);
void save_point_cloud_ply(const PointCloud& cloud, const std::filesystem::path& path);

} // namespace gsalign
