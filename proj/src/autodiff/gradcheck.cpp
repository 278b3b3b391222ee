#include "gsalign/gradcheck.hpp"

#include "gsalign/alignment.hpp"
#include "gsalign/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace gsalign {

using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(ad::element_count(shape));
    for (double& x : v) x = d(rng);
    return Tensor(std::move(shape), std::move(v));
}

double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(n[i]), 1e-8});
        worst = std::max(worst, std::abs(a[i] - n[i]) / denom);
    }
    return worst;
}

} // namespace

GradcheckResult gradcheck(const std::string& name, const GradcheckFn& fn, const std::vector<Tensor>& inputs, double tolerance,
                          std::uint64_t seed, double h) {
    std::mt19937_64 rng(seed);
    Tensor weights;
    auto evaluate = [&](const std::vector<Tensor>& xs, std::vector<double>* grads) {
        Graph g;
        std::vector<Var> leaves;
        for (const auto& x : xs) leaves.push_back(g.leaf(x, true));
        Var out = fn(g, leaves);
        if (out.value().size() != 1) {
            if (weights.size() == 0) weights = random_tensor(out.shape(), rng);
            out = ad::sum(ad::mul(out, g.constant(weights)));
        }
        if (grads) {
            g.backward(out);
            for (const auto& l : leaves) {
                const Tensor gr = g.grad(l);
                grads->insert(grads->end(), gr.data().begin(), gr.data().end());
            }
        }
        return out.value()[0];
    };
    std::vector<double> analytic;
    evaluate(inputs, &analytic);
    std::vector<double> numeric;
    std::vector<Tensor> xs = inputs;
    for (auto& x : xs) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double orig = x[i];
            x[i] = orig + h;
            const double up = evaluate(xs, nullptr);
            x[i] = orig - h;
            const double down = evaluate(xs, nullptr);
            x[i] = orig;
            numeric.push_back((up - down) / (2.0 * h));
        }
    }
    GradcheckResult r{name, relative_error(analytic, numeric), tolerance, false};
    r.passed = std::isfinite(r.rel_error) && r.rel_error <= tolerance;
    return r;
}

namespace {

GaussianCloud random_cloud(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.05, 0.95), sc(0.02, 0.2);
    GaussianCloud c;
    for (std::size_t i = 0; i < n; ++i) {
        GaussianPrimitive g;
        g.mu = {u(rng), u(rng), u(rng)};
        g.color = {pos(rng), pos(rng), pos(rng)};
        g.opacity = pos(rng);
        g.scale = {sc(rng), sc(rng), sc(rng)};
        Quat q{u(rng) + 2.0, u(rng), u(rng), u(rng)};
        const double qn = q.norm();
        g.rotation = {q.w / qn, q.x / qn, q.y / qn, q.z / qn};
        c.primitives.push_back(g);
    }
    return c;
}

Tensor unit_rows(std::size_t n, std::size_t e, std::mt19937_64& rng) {
    Tensor t = random_tensor({n, e}, rng);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < e; ++k) s += t[i * e + k] * t[i * e + k];
        for (std::size_t k = 0; k < e; ++k) t[i * e + k] /= std::sqrt(s);
    }
    return t;
}

GradcheckResult end_to_end(const std::string& name, EncoderConfig cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 3;
    std::vector<PreparedCloud> prepared;
    for (std::size_t i = 0; i < n; ++i) prepared.push_back(prepare_cloud(random_cloud(10, rng), cfg));
    TripletBatch batch;
    batch.ids = {"a", "b", "c"};
    batch.captions = {"x", "y", "x"};
    batch.text = unit_rows(n, cfg.embed_dim, rng);
    batch.image = unit_rows(n, cfg.embed_dim, rng);
    const LossConfig loss_cfg{0.5, 0.5, 0.5, false};
    const ParameterSet base = init_weights(cfg, seed);
    auto fn = [&](Graph&, const std::vector<Var>& leaves) {
        const BoundWeights bw(base, leaves);
        return combined_loss(batch, encode_batch(prepared, bw, cfg), loss_cfg);
    };
    return gradcheck(name, fn, base.values(), 1e-3, seed);
}

} // namespace

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<GradcheckResult> out;
    const double tol = 1e-4;
    auto s = [&] { return rng(); };
    auto R = [&](ad::Shape shape) { return random_tensor(std::move(shape), rng); };
    auto dim = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };

    // Each op runs on several random shapes; the worst trial is reported.
    const int trials = 10;
    auto op = [&](const std::string& name, const GradcheckFn& fn, const std::function<std::vector<Tensor>()>& make) {
        GradcheckResult worst{name, 0.0, tol, true};
        for (int t = 0; t < trials; ++t) {
            const GradcheckResult r = gradcheck(name, fn, make(), tol, s());
            worst.rel_error = std::max(worst.rel_error, r.rel_error);
            worst.passed = worst.passed && r.passed;
        }
        out.push_back(worst);
    };
    using Vars = std::vector<Var>;

    op("matmul", [](Graph&, const Vars& x) { return ad::matmul(x[0], x[1]); }, [&] {
        const auto m = dim(1, 4), k = dim(1, 5), n = dim(1, 4);
        return std::vector{R({m, k}), R({k, n})};
    });
    op("matmul_rank3_shared", [](Graph&, const Vars& x) { return ad::matmul(x[0], x[1]); }, [&] {
        const auto b = dim(1, 3), m = dim(1, 4), k = dim(1, 4), n = dim(1, 3);
        return std::vector{R({b, m, k}), R({k, n})};
    });
    op("matmul_batched", [](Graph&, const Vars& x) { return ad::matmul(x[0], x[1]); }, [&] {
        const auto b = dim(1, 3), m = dim(1, 4), k = dim(1, 4), n = dim(1, 3);
        return std::vector{R({b, m, k}), R({b, k, n})};
    });
    op("add", [](Graph&, const Vars& x) { return ad::add(x[0], x[1]); }, [&] {
        const ad::Shape sh{dim(1, 4), dim(1, 4)};
        return std::vector{R(sh), R(sh)};
    });
    op("add_bias", [](Graph&, const Vars& x) { return ad::add(x[0], x[1]); }, [&] {
        const auto n = dim(1, 5);
        return std::vector{R({dim(1, 3), dim(1, 3), n}), R({n})};
    });
    op("mul", [](Graph&, const Vars& x) { return ad::mul(x[0], x[1]); }, [&] {
        const ad::Shape sh{dim(1, 4), dim(1, 4)};
        return std::vector{R(sh), R(sh)};
    });
    op("mul_scalar", [](Graph&, const Vars& x) { return ad::mul_scalar(x[0], -1.7); }, [&] {
        return std::vector{R({dim(1, 6)})};
    });
    op("concat", [](Graph&, const Vars& x) { return ad::concat({x[0], x[1], x[2]}); }, [&] {
        const auto m = dim(1, 3);
        return std::vector{R({m, dim(1, 4)}), R({m, dim(1, 4)}), R({m, dim(1, 4)})};
    });
    op("transpose", [](Graph&, const Vars& x) { return ad::transpose(x[0]); }, [&] {
        return std::vector{R({dim(1, 3), dim(1, 4), dim(1, 4)})};
    });
    op("reshape", [](Graph&, const Vars& x) { return ad::reshape(x[0], {x[0].value().size()}); }, [&] {
        return std::vector{R({dim(1, 3), dim(1, 4)})};
    });
    op("mean_pool", [](Graph&, const Vars& x) { return ad::mean_pool(x[0], 1); }, [&] {
        return std::vector{R({dim(1, 3), dim(1, 5), dim(1, 4)})};
    });
    op("max_pool", [](Graph&, const Vars& x) { return ad::max_pool(x[0], 1); }, [&] {
        return std::vector{R({dim(1, 3), dim(1, 5), dim(1, 4)})};
    });
    op("softmax", [](Graph&, const Vars& x) { return ad::softmax(x[0]); }, [&] {
        return std::vector{R({dim(1, 4), dim(1, 6)})};
    });
    op("layer_norm", [](Graph&, const Vars& x) { return ad::layer_norm(x[0], 1e-5); }, [&] {
        return std::vector{R({dim(1, 4), dim(2, 7)})};
    });
    op("layer_norm_affine", [](Graph&, const Vars& x) { return ad::layer_norm(x[0], x[1], x[2], 1e-5); }, [&] {
        const auto n = dim(2, 7);
        return std::vector{R({dim(1, 3), dim(1, 3), n}), R({n}), R({n})};
    });
    op("gelu", [](Graph&, const Vars& x) { return ad::gelu(x[0]); }, [&] {
        return std::vector{random_tensor({dim(1, 4), dim(1, 4)}, rng, -3.0, 3.0)};
    });
    op("tanh", [](Graph&, const Vars& x) { return ad::tanh(x[0]); }, [&] {
        return std::vector{random_tensor({dim(1, 4), dim(1, 4)}, rng, -3.0, 3.0)};
    });
    op("linear", [](Graph&, const Vars& x) { return ad::linear(x[0], x[1], x[2]); }, [&] {
        const auto k = dim(1, 5), n = dim(1, 4);
        return std::vector{R({dim(1, 3), dim(1, 3), k}), R({k, n}), R({n})};
    });
    op("linear_nobias", [](Graph&, const Vars& x) { return ad::linear(x[0], x[1]); }, [&] {
        const auto k = dim(1, 5);
        return std::vector{R({dim(1, 4), k}), R({k, dim(1, 4)})};
    });
    op("attention", [](Graph&, const Vars& x) { return ad::scaled_dot_attention(x[0], x[1], x[2]); }, [&] {
        const auto d = dim(1, 6), l = dim(1, 5);
        return std::vector{R({dim(1, 5), d}), R({l, d}), R({l, dim(1, 4)})};
    });
    op("attention_multihead_batched",
       [](Graph&, const Vars& x) { return ad::scaled_dot_attention(x[0], x[1], x[2], 2); }, [&] {
           const auto b = dim(1, 3), d = 2 * dim(1, 3), l = dim(1, 4);
           return std::vector{R({b, dim(1, 4), d}), R({b, l, d}), R({b, l, d})};
       });
    op("sum", [](Graph&, const Vars& x) { return ad::sum(x[0]); }, [&] { return std::vector{R({dim(1, 4), dim(1, 4)})}; });
    op("l2_normalize", [](Graph&, const Vars& x) { return ad::l2_normalize(x[0]); }, [&] {
        return std::vector{random_tensor({dim(1, 4), dim(2, 6)}, rng, 0.2, 1.0)};
    });

    // Contrastive objectives with respect to the 3D side.
    const std::size_t n = 4, e = 6;
    TripletBatch batch;
    batch.ids = {"a", "b", "c", "d"};
    batch.captions = {"cat", "dog", " cat ", "bird"};
    batch.text = unit_rows(n, e, rng);
    batch.image = unit_rows(n, e, rng);
    const Tensor gs = unit_rows(n, e, rng);
    for (bool symmetric : {false, true}) {
        const LossConfig cfg{0.2, 0.5, 0.5, symmetric};
        const std::string suffix = symmetric ? "_symmetric" : "";
        out.push_back(gradcheck("text_gs_loss" + suffix,
                                [&](Graph&, const std::vector<Var>& x) { return text_gs_loss(batch, x[0], cfg); }, {gs}, tol, s()));
        out.push_back(gradcheck("image_gs_loss" + suffix,
                                [&](Graph&, const std::vector<Var>& x) { return image_gs_loss(batch, x[0], cfg); }, {gs}, tol, s()));
        out.push_back(gradcheck("combined_loss" + suffix,
                                [&](Graph&, const std::vector<Var>& x) { return combined_loss(batch, x[0], cfg); }, {gs}, tol, s()));
    }

    EncoderConfig enc;
    enc.preset = "custom";
    enc.dim = 8, enc.depth = 1, enc.heads = 2, enc.embed_dim = 8, enc.mlp_ratio = 2, enc.lift_hidden = 8;
    enc.grouping = {2, 4};
    out.push_back(end_to_end("encode_combined_loss", enc, s()));
    EncoderConfig adv_q = enc;
    adv_q.cross_direction = CrossDirection::AdvQueries;
    out.push_back(end_to_end("encode_combined_loss_adv_queries", adv_q, s()));
    return out;
}

} // namespace gsalign
