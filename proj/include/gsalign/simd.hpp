#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Data-parallel inner loops used by the tensor engine and the group divider.
//
// Every kernel has a portable scalar reference and, where the CPU allows it,
// an AVX2 variant selected once at startup. Lane-wise kernels (axpy, add,
// sq_dist3, min) perform the same IEEE operations per element as the scalar
// code, so both backends produce bitwise-identical results. `dot` is a
// reduction and only agrees up to rounding.

namespace gsalign::simd {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
    Backend backend;
    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // y[i] += x[i]
    void (*add)(const double* x, double* y, std::size_t n);
    double (*dot)(const double* x, const double* y, std::size_t n);
    // out[i] = (xs[i]-px)^2 + (ys[i]-py)^2 + (zs[i]-pz)^2, summed left to right
    void (*sq_dist3)(const double* xs, const double* ys, const double* zs, std::size_t n,
                     double px, double py, double pz, double* out);
    // dst[i] = min(dst[i], src[i])
    void (*min_inplace)(const double* src, double* dst, std::size_t n);
};

const KernelTable& scalar_kernels();
// Null when the binary was built without AVX2 support.
const KernelTable* avx2_kernels();

bool cpu_supports(Backend backend);

// The table used by the library. Defaults to the best supported backend;
// the GSALIGN_SIMD environment variable ("scalar" or "avx2") overrides it.
const KernelTable& active();

// Not thread-safe with respect to concurrent kernel use; call at startup or
// from tests only. Throws ConfigError if the backend is unavailable.
void set_backend(Backend backend);

std::string_view backend_name(Backend backend);

} // namespace gsalign::simd
