#include "gsalign/simd.hpp"

namespace gsalign::simd {
namespace {

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add_scalar(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void sq_dist3_scalar(const double* xs, const double* ys, const double* zs, std::size_t n,
                     double px, double py, double pz, double* out) {
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - px;
        const double dy = ys[i] - py;
        const double dz = zs[i] - pz;
        out[i] = dx * dx + dy * dy + dz * dz;
    }
}

void min_scalar(const double* src, double* dst, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (src[i] < dst[i]) dst[i] = src[i];
    }
}

} // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{Backend::Scalar, axpy_scalar, add_scalar, dot_scalar,
                                   sq_dist3_scalar, min_scalar};
    return table;
}

} // namespace gsalign::simd
