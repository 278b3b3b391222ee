#pragma once

#include "gsalign/gaussian.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace gsalign {

enum class Projection { Orthographic, Pinhole };

using Mat34 = std::array<std::array<double, 4>, 3>;
using Mat2 = std::array<std::array<double, 2>, 2>;

/// World-to-camera transform plus intrinsics. The camera looks down +z.
/// Pixel (col,row) has its center at (col,row) and the principal point is
/// the image center ((W-1)/2, (H-1)/2). For orthographic cameras `focal`
/// is the pixels-per-scene-unit scale.
struct Camera {
    Projection mode = Projection::Orthographic;
    Mat34 view{{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
    double focal = 1.0;
    int width = 1;
    int height = 1;

    /// Throws InputError on a non-orthonormal rotation or empty image.
    void validate() const;

    /// Frames the cloud's bounding sphere, looking along +z.
    static Camera fit(const GaussianCloud& cloud, Projection mode, int width, int height);
};

struct ProjectedSplat {
    std::array<double, 2> mean{};
    Mat2 cov{};
    double depth = 0.0;
};

inline constexpr double kCov2dFloor = 1e-6;

/// EWA projection of one primitive. Returns nullopt for pinhole cameras
/// when the primitive sits at camera-space z <= 1e-6.
std::optional<ProjectedSplat> project(const GaussianPrimitive& g, const Camera& camera);

struct Contribution {
    Vec3 color{};
    double alpha = 0.0;
};

/// Front-to-back compositing with transmittance.
class Compositor {
public:
    void add(const Vec3& color, double alpha);
    double transmittance() const { return transmittance_; }
    Vec3 resolve(const Vec3& background) const;

private:
    Vec3 accum_{};
    double transmittance_ = 1.0;
};

/// Contributions must already be sorted front to back. Throws InputError
/// if any alpha falls outside [0,1].
Vec3 alpha_blend(std::span<const Contribution> contributions, const Vec3& background = {});

/// w_i = alpha_i * prod_{j<i} (1 - alpha_j).
std::vector<double> blend_weights(std::span<const Contribution> contributions);

struct RenderedImage {
    int width = 0;
    int height = 0;
    std::vector<Vec3> pixels;  // row-major

    const Vec3& at(int col, int row) const {
        return pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(col)];
    }
};

RenderedImage render(const GaussianCloud& cloud, const Camera& camera,
                     const Vec3& background = {});

/// Binary P6, maxval 255, channel = floor(255 * c + 0.5).
void write_ppm(const RenderedImage& image, const std::filesystem::path& path);

} // namespace gsalign
