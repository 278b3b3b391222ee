#include "gsalign/autodiff.hpp"
#include "gsalign/error.hpp"
#include "gsalign/gradcheck.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace gsalign;
using namespace gsalign::ad;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> d(element_count(s));
    for (auto& x : d) x = n(rng);
    return Tensor(std::move(s), std::move(d));
}

// Reverse-mode gradient of a scalar function compared against the test-side
// finite-difference helper.
double fd_error(const std::function<Var(Graph&, Var)>& f, const Tensor& x0) {
    Graph g;
    Var x = g.leaf(x0);
    g.backward(f(g, x));
    const auto analytic = g.grad(x);
    const auto numeric = oracle::numeric_gradient(
        [&](const std::vector<double>& v) {
            Graph h;
            return f(h, h.leaf(Tensor(x0.shape(), v))).value()[0];
        },
        std::vector<double>(x0.data().begin(), x0.data().end()));
    return oracle::max_rel_error(std::vector<double>(analytic.data().begin(), analytic.data().end()), numeric);
}

} // namespace

TEST(Tensor, ShapeValidation) {
    EXPECT_THROW(Tensor({2, 0}, {}), ShapeError);
    EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_THROW(Tensor({}, {}), ShapeError);
}

TEST(Ops, AttentionIdenticalKeysAveragesValues) {
    Graph g;
    Var q = g.leaf(Tensor({2, 2}, {1, -3, 0.5, 2}));
    Var k = g.leaf(Tensor({3, 2}, {0.7, 0.1, 0.7, 0.1, 0.7, 0.1}));
    Var v = g.leaf(Tensor({3, 2}, {1, 2, 3, 4, 5, 9}));
    const auto out = scaled_dot_attention(q, k, v).value();
    for (int r = 0; r < 2; ++r) {
        EXPECT_NEAR(out[r * 2 + 0], 3.0, 1e-15);
        EXPECT_NEAR(out[r * 2 + 1], 5.0, 1e-15);
    }
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
    Graph g;
    const auto out = softmax(g.leaf(Tensor::zeros({2, 4}))).value();
    for (double x : out.data()) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(Ops, MatmulMatchesNaive) {
    std::mt19937_64 rng(1);
    const Tensor a = random_tensor({2, 3, 5}, rng), b = random_tensor({5, 4}, rng);
    Graph g;
    const auto c = matmul(g.leaf(a), g.leaf(b)).value();
    ASSERT_EQ(c.shape(), (Shape{2, 3, 4}));
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t j = 0; j < 4; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 5; ++k) s += a[r * 5 + k] * b[k * 4 + j];
            EXPECT_NEAR(c[r * 4 + j], s, 1e-12);
        }
    EXPECT_THROW(matmul(g.leaf(a), g.leaf(a)), ShapeError);
}

TEST(Ops, TanhDerivativeAtZero) {
    Graph g;
    Var x = g.leaf(Tensor::scalar(0.0));
    g.backward(tanh(x));
    EXPECT_DOUBLE_EQ(g.grad(x)[0], 1.0);
}

TEST(Ops, LayerNormGradientOrthogonalToOnes) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
        Graph g;
        Var x = g.leaf(random_tensor({1, 7}, rng));
        Var w = g.constant(random_tensor({1, 7}, rng));
        g.backward(sum(mul(layer_norm(x, 1e-5), w)));
        const auto gr = g.grad(x);
        double s = 0.0;
        for (double v : gr.data()) s += v;
        EXPECT_NEAR(s, 0.0, 1e-12);
    }
}

TEST(Ops, MaxPoolTiesGoToFirstIndex) {
    Graph g;
    Var x = g.leaf(Tensor({3, 2}, {1, 4, 5, 4, 5, 0}));
    g.backward(sum(max_pool(x, 0)));
    const auto gr = g.grad(x);
    EXPECT_EQ(std::vector<double>(gr.data().begin(), gr.data().end()), (std::vector<double>{0, 1, 1, 0, 0, 0}));
}

TEST(Ops, AddBroadcastsBias) {
    Graph g;
    Var a = g.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    Var b = g.leaf(Tensor({2}, {10, 20}));
    g.backward(sum(add(a, b)));
    EXPECT_EQ(g.grad(b), Tensor({2}, {2, 2}));
    EXPECT_THROW(add(a, g.leaf(Tensor({3}, {1, 2, 3}))), ShapeError);
}

TEST(Ops, ShapeErrors) {
    Graph g;
    Var a = g.leaf(Tensor::zeros({2, 3}));
    EXPECT_THROW(reshape(a, {4}), ShapeError);
    EXPECT_THROW(mean_pool(a, 2), ShapeError);
    EXPECT_THROW(mul(a, g.leaf(Tensor::zeros({3, 2}))), ShapeError);
    EXPECT_THROW(scaled_dot_attention(a, a, a, 2), ShapeError);
    EXPECT_THROW(transpose(g.leaf(Tensor::zeros({3}))), ShapeError);
    EXPECT_THROW(concat({}), ShapeError);
}

TEST(Graph, NonScalarBackwardIsUsageError) {
    Graph g;
    Var a = g.leaf(Tensor::zeros({2}));
    EXPECT_THROW(g.backward(a), UsageError);
    Graph other;
    EXPECT_THROW(other.backward(sum(a)), UsageError);
}

TEST(Graph, NonFiniteValuesRaise) {
    Graph g;
    EXPECT_THROW(g.leaf(Tensor::scalar(std::nan(""))), NumericError);
    Var big = g.leaf(Tensor::scalar(1e200));
    EXPECT_THROW(mul(big, big), NumericError);
    EXPECT_THROW(l2_normalize(g.leaf(Tensor::zeros({1, 3}))), NumericError);
}

TEST(Graph, BackwardTwiceIsIdentical) {
    std::mt19937_64 rng(3);
    Graph g;
    Var x = g.leaf(random_tensor({3, 4}, rng));
    Var w = g.leaf(random_tensor({4, 2}, rng));
    Var y = sum(gelu(matmul(x, w)));
    g.backward(y);
    const auto gx = g.grad(x), gw = g.grad(w);
    g.backward(y);
    EXPECT_EQ(g.grad(x), gx);
    EXPECT_EQ(g.grad(w), gw);
}

TEST(Graph, ConstantHasZeroGrad) {
    Graph g;
    Var c = g.constant(Tensor({2}, {1, 2}));
    Var x = g.leaf(Tensor({2}, {3, 4}));
    g.backward(sum(mul(c, x)));
    EXPECT_EQ(g.grad(c), Tensor::zeros({2}));
    EXPECT_EQ(g.grad(x), Tensor({2}, {1, 2}));
}

// Test-side finite differences, independent of the library's gradcheck.
TEST(Gradients, MatchOracleFiniteDifferences) {
    std::mt19937_64 rng(4);
    const Tensor wts = random_tensor({3, 4}, rng);
    auto weighted = [&](Graph& g, Var y) { return sum(mul(y, g.constant(wts))); };
    const Tensor x0 = random_tensor({3, 4}, rng);
    EXPECT_LT(fd_error([&](Graph& g, Var x) { return weighted(g, softmax(x)); }, x0), 1e-6);
    EXPECT_LT(fd_error([&](Graph& g, Var x) { return weighted(g, gelu(x)); }, x0), 1e-6);
    EXPECT_LT(fd_error([&](Graph& g, Var x) { return weighted(g, layer_norm(x, 1e-5)); }, x0), 1e-6);
    EXPECT_LT(fd_error([&](Graph& g, Var x) { return weighted(g, l2_normalize(x)); }, x0), 1e-6);
    EXPECT_LT(fd_error([&](Graph& g, Var x) {
                  return weighted(g, scaled_dot_attention(x, mul_scalar(x, 0.5), tanh(x), 2));
              }, x0), 1e-6);
    EXPECT_LT(fd_error([&](Graph&, Var x) { return sum(mul(mean_pool(x, 0), mean_pool(x, 0))); }, x0), 1e-6);
}

TEST(Gradcheck, DetectsWrongGradient) {
    // An op with a deliberately wrong backward must fail.
    auto fn = [](Graph& g, const std::vector<Var>& in) {
        Var x = in[0];
        Tensor v = x.value();
        for (auto& e : v.data()) e = e * e;
        Var y = g.make("bad_square", std::move(v), {x},
                       [x](const Tensor&, std::span<const double> og, std::span<std::vector<double>* const> ig) {
                           for (std::size_t i = 0; i < og.size(); ++i) (*ig[0])[i] += og[i] * x.value()[i];
                       });
        return sum(y);
    };
    const auto r = gradcheck("bad_square", fn, {Tensor({3}, {0.5, -1.0, 2.0})}, 1e-4, 1);
    EXPECT_FALSE(r.passed);
    EXPECT_GT(r.rel_error, 0.1);
}

TEST(Gradcheck, LibrarySuitePasses) {
    const auto results = run_gradcheck_suite(7);
    ASSERT_GT(results.size(), 15u);
    bool saw_end_to_end = false;
    for (const auto& r : results) {
        EXPECT_TRUE(r.passed) << r.name << " " << r.rel_error;
        if (r.name.find("encode_combined_loss") != std::string::npos) saw_end_to_end = true;
    }
    EXPECT_TRUE(saw_end_to_end);
}
