#include "gsalign/render.hpp"

#include "gsalign/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>
#include <tuple>

namespace gsalign {

void Camera::validate() const {
    if (width < 1 || height < 1) throw InputError("camera image size must be at least 1x1");
    if (mode == Projection::Pinhole && !(focal > 0.0)) {
        throw InputError("pinhole focal length must be positive");
    }
    if (mode == Projection::Orthographic && !(focal > 0.0)) {
        throw InputError("orthographic pixel scale must be positive");
    }
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < 3; ++k) d += view[i][k] * view[j][k];
            if (std::abs(d - (i == j ? 1.0 : 0.0)) > 1e-9) {
                throw InputError("camera view rotation is not orthonormal");
            }
        }
    }
}

Camera Camera::fit(const GaussianCloud& cloud, Projection mode, int width, int height) {
    Camera cam;
    cam.mode = mode;
    cam.width = width;
    cam.height = height;
    Vec3 center{0, 0, 0};
    double radius = 1.0;
    if (!cloud.empty()) {
        const NormalizedCloud n = normalize_cloud(cloud);
        center = n.centroid;
        radius = n.radius;
    }
    const double half = 0.5 * static_cast<double>(std::min(width, height));
    if (mode == Projection::Orthographic) {
        cam.focal = 0.9 * half / radius;
        cam.view[0][3] = -center[0];
        cam.view[1][3] = -center[1];
        cam.view[2][3] = -center[2] + 2.0 * radius;
    } else {
        const double distance = 3.0 * radius;
        cam.focal = 0.9 * half * distance / radius;
        cam.view[0][3] = -center[0];
        cam.view[1][3] = -center[1];
        cam.view[2][3] = -center[2] + distance;
    }
    return cam;
}

std::optional<ProjectedSplat> project(const GaussianPrimitive& g, const Camera& camera) {
    const auto& v = camera.view;
    Vec3 pc{};
    for (std::size_t i = 0; i < 3; ++i) {
        pc[i] = v[i][0] * g.mu[0] + v[i][1] * g.mu[1] + v[i][2] * g.mu[2] + v[i][3];
    }
    const double cx = 0.5 * static_cast<double>(camera.width - 1);
    const double cy = 0.5 * static_cast<double>(camera.height - 1);
    const double f = camera.focal;

    std::array<std::array<double, 3>, 2> jac{};
    ProjectedSplat out;
    out.depth = pc[2];
    if (camera.mode == Projection::Pinhole) {
        if (!(pc[2] > 1e-6)) return std::nullopt;
        const double iz = 1.0 / pc[2];
        out.mean = {f * pc[0] * iz + cx, f * pc[1] * iz + cy};
        jac = {{{f * iz, 0.0, -f * pc[0] * iz * iz}, {0.0, f * iz, -f * pc[1] * iz * iz}}};
    } else {
        out.mean = {f * pc[0] + cx, f * pc[1] + cy};
        jac = {{{f, 0.0, 0.0}, {0.0, f, 0.0}}};
    }

    const Covariance3 sigma = covariance(g.scale, g.rotation);
    // T = J W, cov2d = T Sigma T^T
    std::array<std::array<double, 3>, 2> t{};
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            t[r][c] = jac[r][0] * v[0][c] + jac[r][1] * v[1][c] + jac[r][2] * v[2][c];
        }
    }
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = r; c < 2; ++c) {
            double acc = 0.0;
            for (std::size_t a = 0; a < 3; ++a) {
                for (std::size_t b = 0; b < 3; ++b) acc += t[r][a] * sigma.m[a][b] * t[c][b];
            }
            out.cov[r][c] = acc;
            out.cov[c][r] = acc;
        }
    }
    out.cov[0][0] += kCov2dFloor;
    out.cov[1][1] += kCov2dFloor;
    return out;
}

void Compositor::add(const Vec3& color, double alpha) {
    const double w = alpha * transmittance_;
    for (std::size_t k = 0; k < 3; ++k) accum_[k] += color[k] * w;
    transmittance_ *= 1.0 - alpha;
}

Vec3 Compositor::resolve(const Vec3& background) const {
    Vec3 out{};
    for (std::size_t k = 0; k < 3; ++k) out[k] = accum_[k] + transmittance_ * background[k];
    return out;
}

Vec3 alpha_blend(std::span<const Contribution> contributions, const Vec3& background) {
    Compositor comp;
    for (const Contribution& c : contributions) {
        if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw InputError("alpha outside [0,1]");
        comp.add(c.color, c.alpha);
    }
    return comp.resolve(background);
}

std::vector<double> blend_weights(std::span<const Contribution> contributions) {
    std::vector<double> w;
    w.reserve(contributions.size());
    double t = 1.0;
    for (const Contribution& c : contributions) {
        if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw InputError("alpha outside [0,1]");
        w.push_back(c.alpha * t);
        t *= 1.0 - c.alpha;
    }
    return w;
}

namespace {

struct RasterSplat {
    ProjectedSplat p;
    Mat2 inv{};
    Vec3 color{};
    double opacity = 0.0;
    double extent = 0.0;  // 3 sigma along the major axis, pixels
};

auto sort_key(const RasterSplat& s) {
    return std::tie(s.p.depth, s.p.mean[0], s.p.mean[1], s.p.cov[0][0], s.p.cov[0][1],
                    s.p.cov[1][1], s.opacity, s.color[0], s.color[1], s.color[2]);
}

} // namespace

RenderedImage render(const GaussianCloud& cloud, const Camera& camera, const Vec3& background) {
    camera.validate();
    std::vector<RasterSplat> splats;
    splats.reserve(cloud.size());
    for (const GaussianPrimitive& g : cloud.primitives) {
        if (!(g.opacity >= 0.0 && g.opacity <= 1.0)) throw InputError("opacity outside [0,1]");
        auto p = project(g, camera);
        if (!p) continue;
        RasterSplat s;
        s.p = *p;
        const double a = p->cov[0][0], b = p->cov[0][1], d = p->cov[1][1];
        const double det = a * d - b * b;
        s.inv = {{{d / det, -b / det}, {-b / det, a / det}}};
        const double mid = 0.5 * (a + d);
        const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
        s.extent = 3.0 * std::sqrt(lambda_max);
        s.color = g.color;
        s.opacity = g.opacity;
        splats.push_back(s);
    }
    std::sort(splats.begin(), splats.end(),
              [](const RasterSplat& x, const RasterSplat& y) { return sort_key(x) < sort_key(y); });

    RenderedImage img;
    img.width = camera.width;
    img.height = camera.height;
    img.pixels.assign(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height),
                      Vec3{});

    auto shade_rows = [&](int row_begin, int row_end) {
        for (int row = row_begin; row < row_end; ++row) {
            for (int col = 0; col < img.width; ++col) {
                Compositor comp;
                const double px = col, py = row;
                for (const RasterSplat& s : splats) {
                    const double dx = px - s.p.mean[0];
                    const double dy = py - s.p.mean[1];
                    if (std::abs(dx) > s.extent || std::abs(dy) > s.extent) continue;
                    const double q = dx * (s.inv[0][0] * dx + s.inv[0][1] * dy) +
                                     dy * (s.inv[1][0] * dx + s.inv[1][1] * dy);
                    const double alpha = s.opacity * std::exp(-0.5 * q);
                    comp.add(s.color, alpha);
                }
                Vec3 c = comp.resolve(background);
                for (double& ch : c) ch = std::clamp(ch, 0.0, 1.0);
                img.pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(img.width) +
                           static_cast<std::size_t>(col)] = c;
            }
        }
    };

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(img.height)));
    if (workers <= 1) {
        shade_rows(0, img.height);
    } else {
        std::vector<std::jthread> pool;
        const int chunk = (img.height + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const int begin = w * chunk;
            const int end = std::min(img.height, begin + chunk);
            if (begin < end) pool.emplace_back(shade_rows, begin, end);
        }
    }
    return img;
}

void write_ppm(const RenderedImage& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write image " + path.string());
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    for (const Vec3& p : image.pixels) {
        for (double c : p) {
            const double v = std::floor(std::clamp(c, 0.0, 1.0) * 255.0 + 0.5);
            out.put(static_cast<char>(static_cast<unsigned char>(v)));
        }
    }
    if (!out) throw FormatError("failed writing image " + path.string());
}

} // namespace gsalign
