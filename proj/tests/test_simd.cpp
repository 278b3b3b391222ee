#include "gsalign/error.hpp"
#include "gsalign/simd.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <vector>

using namespace gsalign;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-10.0, 10.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

class SimdEquivalence : public ::testing::Test {
protected:
    void SetUp() override {
        if (!simd::avx2_kernels() || !simd::cpu_supports(simd::Backend::Avx2)) GTEST_SKIP() << "AVX2 unavailable";
    }
    const simd::KernelTable& s = simd::scalar_kernels();
    const simd::KernelTable& v = *simd::avx2_kernels();
};

} // namespace

TEST(Simd, ScalarAlwaysAvailable) {
    EXPECT_TRUE(simd::cpu_supports(simd::Backend::Scalar));
    EXPECT_EQ(simd::scalar_kernels().backend, simd::Backend::Scalar);
    EXPECT_EQ(simd::backend_name(simd::Backend::Scalar), "scalar");
}

TEST(Simd, SetBackendRoundTrip) {
    const auto before = simd::active().backend;
    simd::set_backend(simd::Backend::Scalar);
    EXPECT_EQ(simd::active().backend, simd::Backend::Scalar);
    if (simd::cpu_supports(simd::Backend::Avx2)) {
        simd::set_backend(simd::Backend::Avx2);
        EXPECT_EQ(simd::active().backend, simd::Backend::Avx2);
    } else {
        EXPECT_THROW(simd::set_backend(simd::Backend::Avx2), ConfigError);
    }
    simd::set_backend(before);
}

TEST_F(SimdEquivalence, AxpyBitwise) {
    std::mt19937_64 rng(1);
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 17u, 64u, 1001u}) {
        const auto x = random_vec(n, rng);
        auto y1 = random_vec(n, rng);
        auto y2 = y1;
        s.axpy(0.37, x.data(), y1.data(), n);
        v.axpy(0.37, x.data(), y2.data(), n);
        EXPECT_TRUE(bitwise_equal(y1, y2)) << "n=" << n;
    }
}

TEST_F(SimdEquivalence, AddBitwise) {
    std::mt19937_64 rng(2);
    for (std::size_t n : {0u, 1u, 3u, 4u, 9u, 33u, 500u}) {
        const auto x = random_vec(n, rng);
        auto y1 = random_vec(n, rng);
        auto y2 = y1;
        s.add(x.data(), y1.data(), n);
        v.add(x.data(), y2.data(), n);
        EXPECT_TRUE(bitwise_equal(y1, y2)) << "n=" << n;
    }
}

TEST_F(SimdEquivalence, SqDist3Bitwise) {
    std::mt19937_64 rng(3);
    for (std::size_t n : {1u, 2u, 4u, 6u, 13u, 256u}) {
        const auto xs = random_vec(n, rng), ys = random_vec(n, rng), zs = random_vec(n, rng);
        std::vector<double> o1(n), o2(n);
        s.sq_dist3(xs.data(), ys.data(), zs.data(), n, 0.5, -1.25, 3.0, o1.data());
        v.sq_dist3(xs.data(), ys.data(), zs.data(), n, 0.5, -1.25, 3.0, o2.data());
        EXPECT_TRUE(bitwise_equal(o1, o2)) << "n=" << n;
    }
}

TEST_F(SimdEquivalence, MinBitwise) {
    std::mt19937_64 rng(4);
    for (std::size_t n : {1u, 3u, 4u, 10u, 99u}) {
        const auto src = random_vec(n, rng);
        auto d1 = random_vec(n, rng);
        auto d2 = d1;
        s.min_inplace(src.data(), d1.data(), n);
        v.min_inplace(src.data(), d2.data(), n);
        EXPECT_TRUE(bitwise_equal(d1, d2)) << "n=" << n;
    }
}

TEST_F(SimdEquivalence, DotWithinRounding) {
    std::mt19937_64 rng(5);
    for (std::size_t n : {0u, 1u, 3u, 8u, 31u, 1000u}) {
        const auto x = random_vec(n, rng), y = random_vec(n, rng);
        double mag = 0.0;
        for (std::size_t i = 0; i < n; ++i) mag += std::abs(x[i] * y[i]);
        EXPECT_NEAR(s.dot(x.data(), y.data(), n), v.dot(x.data(), y.data(), n), 1e-14 * (mag + 1.0)) << "n=" << n;
    }
}
