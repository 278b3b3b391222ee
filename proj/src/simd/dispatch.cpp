#include "gsalign/error.hpp"
#include "gsalign/simd.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace gsalign::simd {
namespace {

const KernelTable* pick_default() {
    if (const char* env = std::getenv("GSALIGN_SIMD")) {
        const std::string want(env);
        if (want == "scalar") return &scalar_kernels();
        if (want == "avx2" && cpu_supports(Backend::Avx2)) return avx2_kernels();
    }
    if (cpu_supports(Backend::Avx2)) return avx2_kernels();
    return &scalar_kernels();
}

std::atomic<const KernelTable*>& current() {
    static std::atomic<const KernelTable*> table{pick_default()};
    return table;
}

} // namespace

bool cpu_supports(Backend backend) {
    switch (backend) {
    case Backend::Scalar:
        return true;
    case Backend::Avx2:
#if defined(__x86_64__) || defined(__i386__)
        return avx2_kernels() != nullptr && __builtin_cpu_supports("avx2");
#else
        return false;
#endif
    }
    return false;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
    if (!cpu_supports(backend)) {
        throw ConfigError("SIMD backend '" + std::string(backend_name(backend)) +
                          "' is not supported on this CPU");
    }
    current().store(backend == Backend::Scalar ? &scalar_kernels() : avx2_kernels(),
                    std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) {
    return backend == Backend::Scalar ? "scalar" : "avx2";
}

} // namespace gsalign::simd
