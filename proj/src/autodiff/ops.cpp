#include "gsalign/autodiff.hpp"

#include "gsalign/error.hpp"
#include "gsalign/simd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace gsalign::ad {
namespace {

std::size_t outer_count(const Shape& s) { return element_count(s) / s.back(); }

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    const auto& kt = simd::active();
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) kt.axpy(arow[p], b + p * n, crow, n);
    }
}

// C[m,k] += G[m,n] B^T for B[k,n]
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> bt(n * k);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
    }
    const auto& kt = simd::active();
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * k;
        const double* grow = g + i * n;
        for (std::size_t j = 0; j < n; ++j) kt.axpy(grow[j], bt.data() + j * k, crow, k);
    }
}

// D[k,n] += A[m,k]^T G[m,n]
void gemm_tn(const double* a, const double* g, double* d, std::size_t m, std::size_t k, std::size_t n) {
    const auto& kt = simd::active();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) kt.axpy(arow[p], grow, d + p * n, n);
    }
}

template <typename Fn>
Tensor map_values(const Tensor& x, Fn fn) {
    std::vector<double> out(x.size());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(in[i]);
    return Tensor(x.shape(), std::move(out));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

} // namespace

Var matmul(Var a, Var b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const Tensor* pa = &a.value();
    const Tensor* pb = &b.value();
    if (bs.size() == 2 && as.size() >= 2 && as.back() == bs[0]) {
        const std::size_t m = outer_count(as), k = bs[0], n = bs[1];
        Shape os = as;
        os.back() = n;
        std::vector<double> out(m * n, 0.0);
        gemm_nn(pa->data().data(), pb->data().data(), out.data(), m, k, n);
        return a.graph().make("matmul", Tensor(std::move(os), std::move(out)), {a, b},
                              [pa, pb, m, k, n](const Tensor&, std::span<const double> g,
                                                std::span<std::vector<double>* const> in) {
                                  if (in[0]) gemm_nt(g.data(), pb->data().data(), in[0]->data(), m, k, n);
                                  if (in[1]) gemm_tn(pa->data().data(), g.data(), in[1]->data(), m, k, n);
                              });
    }
    if (as.size() == 3 && bs.size() == 3 && as[0] == bs[0] && as[2] == bs[1]) {
        const std::size_t batch = as[0], m = as[1], k = as[2], n = bs[2];
        std::vector<double> out(batch * m * n, 0.0);
        for (std::size_t t = 0; t < batch; ++t) {
            gemm_nn(pa->data().data() + t * m * k, pb->data().data() + t * k * n, out.data() + t * m * n,
                    m, k, n);
        }
        return a.graph().make(
            "matmul", Tensor({batch, m, n}, std::move(out)), {a, b},
            [pa, pb, batch, m, k, n](const Tensor&, std::span<const double> g,
                                     std::span<std::vector<double>* const> in) {
                for (std::size_t t = 0; t < batch; ++t) {
                    const double* gt = g.data() + t * m * n;
                    if (in[0]) gemm_nt(gt, pb->data().data() + t * k * n, in[0]->data() + t * m * k, m, k, n);
                    if (in[1]) gemm_tn(pa->data().data() + t * m * k, gt, in[1]->data() + t * k * n, m, k, n);
                }
            });
    }
    shape_error("matmul", as, bs);
}

Var add(Var a, Var b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (as == bs) {
        std::vector<double> out(av.data().begin(), av.data().end());
        simd::active().add(bv.data().data(), out.data(), out.size());
        return a.graph().make("add", Tensor(as, std::move(out)), {a, b},
                              [](const Tensor&, std::span<const double> g,
                                 std::span<std::vector<double>* const> in) {
                                  for (auto* dst : in) {
                                      if (dst) simd::active().add(g.data(), dst->data(), g.size());
                                  }
                              });
    }
    if (bs.size() == 1 && bs[0] == as.back()) {
        const std::size_t rows = outer_count(as), n = bs[0];
        std::vector<double> out(av.data().begin(), av.data().end());
        for (std::size_t r = 0; r < rows; ++r) simd::active().add(bv.data().data(), out.data() + r * n, n);
        return a.graph().make("add", Tensor(as, std::move(out)), {a, b},
                              [rows, n](const Tensor&, std::span<const double> g,
                                        std::span<std::vector<double>* const> in) {
                                  const auto& kt = simd::active();
                                  if (in[0]) kt.add(g.data(), in[0]->data(), g.size());
                                  if (in[1]) {
                                      for (std::size_t r = 0; r < rows; ++r) kt.add(g.data() + r * n, in[1]->data(), n);
                                  }
                              });
    }
    shape_error("add", as, bs);
}

Var mul(Var a, Var b) {
    if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
    const Tensor* pa = &a.value();
    const Tensor* pb = &b.value();
    std::vector<double> out(pa->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*pa)[i] * (*pb)[i];
    return a.graph().make("mul", Tensor(a.shape(), std::move(out)), {a, b},
                          [pa, pb](const Tensor&, std::span<const double> g,
                                   std::span<std::vector<double>* const> in) {
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                  if (in[0]) (*in[0])[i] += g[i] * (*pb)[i];
                                  if (in[1]) (*in[1])[i] += g[i] * (*pa)[i];
                              }
                          });
}

Var mul_scalar(Var a, double s) {
    Tensor out = map_values(a.value(), [s](double x) { return x * s; });
    return a.graph().make("mul_scalar", std::move(out), {a},
                          [s](const Tensor&, std::span<const double> g, std::span<std::vector<double>* const> in) {
                              simd::active().axpy(s, g.data(), in[0]->data(), g.size());
                          });
}

Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts.front().shape();
    const std::size_t rows = outer_count(first);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
            shape_error("concat", first, s);
        }
        widths.push_back(s.back());
        total += s.back();
    }
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto src = parts[p].value().data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(src.data() + r * widths[p], widths[p], out.data() + r * total + offset);
        }
        offset += widths[p];
    }
    Shape os = first;
    os.back() = total;
    return parts.front().graph().make(
        "concat", Tensor(std::move(os), std::move(out)), parts,
        [rows, total, widths](const Tensor&, std::span<const double> g, std::span<std::vector<double>* const> in) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < widths.size(); ++p) {
                if (in[p]) {
                    for (std::size_t r = 0; r < rows; ++r) {
                        simd::active().add(g.data() + r * total + off, in[p]->data() + r * widths[p], widths[p]);
                    }
                }
                off += widths[p];
            }
        });
}

Var transpose(Var a) {
    const Shape& s = a.shape();
    if (s.size() < 2) throw ShapeError("transpose: needs rank >= 2, got " + to_string(s));
    const std::size_t m = s[s.size() - 2], n = s.back();
    const std::size_t batch = element_count(s) / (m * n);
    const auto src = a.value().data();
    std::vector<double> out(src.size());
    for (std::size_t t = 0; t < batch; ++t) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) out[t * m * n + j * m + i] = src[t * m * n + i * n + j];
        }
    }
    Shape os = s;
    std::swap(os[os.size() - 2], os.back());
    return a.graph().make("transpose", Tensor(std::move(os), std::move(out)), {a},
                          [batch, m, n](const Tensor&, std::span<const double> g,
                                        std::span<std::vector<double>* const> in) {
                              auto& dst = *in[0];
                              for (std::size_t t = 0; t < batch; ++t) {
                                  for (std::size_t i = 0; i < m; ++i) {
                                      for (std::size_t j = 0; j < n; ++j) {
                                          dst[t * m * n + i * n + j] += g[t * m * n + j * m + i];
                                      }
                                  }
                              }
                          });
}

Var reshape(Var a, Shape shape) {
    if (element_count(shape) != a.value().size()) shape_error("reshape", a.shape(), shape);
    const auto src = a.value().data();
    Tensor out(std::move(shape), std::vector<double>(src.begin(), src.end()));
    return a.graph().make("reshape", std::move(out), {a},
                          [](const Tensor&, std::span<const double> g, std::span<std::vector<double>* const> in) {
                              simd::active().add(g.data(), in[0]->data(), g.size());
                          });
}

namespace {

struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
    Shape reduced;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, std::string_view op) {
    if (axis >= s.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + to_string(s));
    }
    AxisSplit out;
    for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
    out.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) out.reduced.push_back(s[i]);
    }
    if (out.reduced.empty()) out.reduced.push_back(1);
    return out;
}

} // namespace

Var mean_pool(Var a, std::size_t axis) {
    const AxisSplit sp = split_axis(a.shape(), axis, "mean_pool");
    const auto src = a.value().data();
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    const double inv = 1.0 / static_cast<double>(sp.len);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        double* dst = out.data() + o * sp.inner;
        for (std::size_t l = 0; l < sp.len; ++l) simd::active().add(src.data() + (o * sp.len + l) * sp.inner, dst, sp.inner);
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] *= inv;
    }
    return a.graph().make("mean_pool", Tensor(sp.reduced, std::move(out)), {a},
                          [sp, inv](const Tensor&, std::span<const double> g, std::span<std::vector<double>* const> in) {
                              for (std::size_t o = 0; o < sp.outer; ++o) {
                                  for (std::size_t l = 0; l < sp.len; ++l) {
                                      simd::active().axpy(inv, g.data() + o * sp.inner,
                                                          in[0]->data() + (o * sp.len + l) * sp.inner, sp.inner);
                                  }
                              }
                          });
}

Var max_pool(Var a, std::size_t axis) {
    const AxisSplit sp = split_axis(a.shape(), axis, "max_pool");
    const auto src = a.value().data();
    std::vector<double> out(sp.outer * sp.inner);
    std::vector<std::size_t> arg(sp.outer * sp.inner, 0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            std::size_t best = 0;
            double best_v = src[o * sp.len * sp.inner + i];
            for (std::size_t l = 1; l < sp.len; ++l) {
                const double v = src[(o * sp.len + l) * sp.inner + i];
                if (v > best_v) {
                    best_v = v;
                    best = l;
                }
            }
            out[o * sp.inner + i] = best_v;
            arg[o * sp.inner + i] = (o * sp.len + best) * sp.inner + i;
        }
    }
    return a.graph().make("max_pool", Tensor(sp.reduced, std::move(out)), {a},
                          [arg = std::move(arg)](const Tensor&, std::span<const double> g,
                                                 std::span<std::vector<double>* const> in) {
                              for (std::size_t j = 0; j < g.size(); ++j) (*in[0])[arg[j]] += g[j];
                          });
}

Var softmax(Var a) {
    const Shape& s = a.shape();
    const std::size_t n = s.back(), rows = outer_count(s);
    const auto src = a.value().data();
    std::vector<double> out(src.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = src.data() + r * n;
        double* y = out.data() + r * n;
        const double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    return a.graph().make("softmax", Tensor(s, std::move(out)), {a},
                          [rows, n](const Tensor& y, std::span<const double> g, std::span<std::vector<double>* const> in) {
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const double* yr = y.data().data() + r * n;
                                  const double* gr = g.data() + r * n;
                                  double dotv = 0.0;
                                  for (std::size_t j = 0; j < n; ++j) dotv += gr[j] * yr[j];
                                  double* dst = in[0]->data() + r * n;
                                  for (std::size_t j = 0; j < n; ++j) dst[j] += yr[j] * (gr[j] - dotv);
                              }
                          });
}

namespace {

struct NormStats {
    std::vector<double> xhat;
    std::vector<double> rstd;
};

std::shared_ptr<NormStats> normalize_rows(std::span<const double> x, std::size_t rows, std::size_t n, double eps) {
    auto st = std::make_shared<NormStats>();
    st->xhat.resize(x.size());
    st->rstd.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += xr[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(var + eps);
        st->rstd[r] = rstd;
        for (std::size_t j = 0; j < n; ++j) st->xhat[r * n + j] = (xr[j] - mean) * rstd;
    }
    return st;
}

// dx += rstd * (g - mean(g) - xhat * mean(g * xhat)) for one row.
void norm_backward_row(const double* g, const double* xhat, double rstd, std::size_t n, double* dx) {
    double mg = 0.0, mgx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        mg += g[j];
        mgx += g[j] * xhat[j];
    }
    mg /= static_cast<double>(n);
    mgx /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) dx[j] += rstd * (g[j] - mg - xhat[j] * mgx);
}

} // namespace

Var layer_norm(Var x, double eps) {
    const Shape& s = x.shape();
    const std::size_t n = s.back(), rows = outer_count(s);
    auto st = normalize_rows(x.value().data(), rows, n, eps);
    Tensor out(s, st->xhat);
    return x.graph().make("layer_norm", std::move(out), {x},
                          [st, rows, n](const Tensor&, std::span<const double> g, std::span<std::vector<double>* const> in) {
                              for (std::size_t r = 0; r < rows; ++r) {
                                  norm_backward_row(g.data() + r * n, st->xhat.data() + r * n, st->rstd[r], n,
                                                    in[0]->data() + r * n);
                              }
                          });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Shape& s = x.shape();
    const std::size_t n = s.back(), rows = outer_count(s);
    if (gamma.shape() != Shape{n}) shape_error("layer_norm", s, gamma.shape());
    if (beta.shape() != Shape{n}) shape_error("layer_norm", s, beta.shape());
    auto st = normalize_rows(x.value().data(), rows, n, eps);
    const Tensor* pg = &gamma.value();
    const auto gv = pg->data();
    const auto bv = beta.value().data();
    std::vector<double> out(st->xhat.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = st->xhat[r * n + j] * gv[j] + bv[j];
    }
    return x.graph().make(
        "layer_norm", Tensor(s, std::move(out)), {x, gamma, beta},
        [st, pg, rows, n](const Tensor&, std::span<const double> g, std::span<std::vector<double>* const> in) {
            const auto gam = pg->data();
            std::vector<double> scaled(n);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * n;
                const double* xh = st->xhat.data() + r * n;
                if (in[0]) {
                    for (std::size_t j = 0; j < n; ++j) scaled[j] = gr[j] * gam[j];
                    norm_backward_row(scaled.data(), xh, st->rstd[r], n, in[0]->data() + r * n);
                }
                if (in[1]) {
                    for (std::size_t j = 0; j < n; ++j) (*in[1])[j] += gr[j] * xh[j];
                }
                if (in[2]) simd::active().add(gr, in[2]->data(), n);
            }
        });
}

Var gelu(Var a) {
    const Tensor* pa = &a.value();
    Tensor out = map_values(*pa, [](double x) {
        return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    });
    return a.graph().make("gelu", std::move(out), {a},
                          [pa](const Tensor&, std::span<const double> g, std::span<std::vector<double>* const> in) {
                              const auto x = pa->data();
                              auto& dst = *in[0];
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                  const double xi = x[i];
                                  const double t = std::tanh(kGeluC * (xi + kGeluA * xi * xi * xi));
                                  const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * xi * xi);
                                  dst[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * xi * dt);
                              }
                          });
}

Var tanh(Var a) {
    Tensor out = map_values(a.value(), [](double x) { return std::tanh(x); });
    return a.graph().make("tanh", std::move(out), {a},
                          [](const Tensor& y, std::span<const double> g, std::span<std::vector<double>* const> in) {
                              const auto yv = y.data();
                              for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * (1.0 - yv[i] * yv[i]);
                          });
}

Var linear(Var x, Var w) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (ws.size() != 2 || xs.back() != ws[0]) shape_error("linear", xs, ws);
    return matmul(x, w);
}

Var linear(Var x, Var w, Var b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (ws.size() != 2 || xs.back() != ws[0]) shape_error("linear", xs, ws);
    if (b.shape() != Shape{ws[1]}) shape_error("linear", ws, b.shape());
    const std::size_t m = outer_count(xs), k = ws[0], n = ws[1];
    const Tensor* px = &x.value();
    const Tensor* pw = &w.value();
    const auto bias = b.value().data();
    std::vector<double> out(m * n);
    for (std::size_t r = 0; r < m; ++r) std::copy(bias.begin(), bias.end(), out.begin() + static_cast<std::ptrdiff_t>(r * n));
    gemm_nn(px->data().data(), pw->data().data(), out.data(), m, k, n);
    Shape os = xs;
    os.back() = n;
    return x.graph().make("linear", Tensor(std::move(os), std::move(out)), {x, w, b},
                          [px, pw, m, k, n](const Tensor&, std::span<const double> g,
                                            std::span<std::vector<double>* const> in) {
                              if (in[0]) gemm_nt(g.data(), pw->data().data(), in[0]->data(), m, k, n);
                              if (in[1]) gemm_tn(px->data().data(), g.data(), in[1]->data(), m, k, n);
                              if (in[2]) {
                                  for (std::size_t r = 0; r < m; ++r) simd::active().add(g.data() + r * n, in[2]->data(), n);
                              }
                          });
}

Var scaled_dot_attention(Var q, Var k, Var v, std::size_t heads) {
    const Shape& qs = q.shape();
    const Shape& ks = k.shape();
    const Shape& vs = v.shape();
    const bool ranks_ok = (qs.size() == 2 || qs.size() == 3) && ks.size() == qs.size() && vs.size() == qs.size();
    if (!ranks_ok) shape_error("scaled_dot_attention", qs, ks);
    const std::size_t r = qs.size();
    const std::size_t batch = r == 3 ? qs[0] : 1;
    if (r == 3 && (ks[0] != batch || vs[0] != batch)) shape_error("scaled_dot_attention", qs, vs);
    const std::size_t tq = qs[r - 2], d = qs[r - 1];
    const std::size_t tk = ks[r - 2];
    if (ks[r - 1] != d) shape_error("scaled_dot_attention", qs, ks);
    if (vs[r - 2] != tk) shape_error("scaled_dot_attention", ks, vs);
    const std::size_t dv_total = vs[r - 1];
    if (heads == 0 || d % heads != 0 || dv_total % heads != 0) {
        throw ShapeError("scaled_dot_attention: head count " + std::to_string(heads) + " does not divide " +
                         to_string(qs) + " and " + to_string(vs));
    }
    const std::size_t dk = d / heads, dv = dv_total / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    const Tensor* pq = &q.value();
    const Tensor* pk = &k.value();
    const Tensor* pv = &v.value();
    auto probs = std::make_shared<std::vector<double>>(batch * heads * tq * tk);
    std::vector<double> out(batch * tq * dv_total, 0.0);
    const auto& kt = simd::active();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* qb = pq->data().data() + b * tq * d;
        const double* kb = pk->data().data() + b * tk * d;
        const double* vb = pv->data().data() + b * tk * dv_total;
        double* ob = out.data() + b * tq * dv_total;
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < tq; ++i) {
                double* p = probs->data() + ((b * heads + h) * tq + i) * tk;
                const double* qi = qb + i * d + h * dk;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < tk; ++j) {
                    const double* kj = kb + j * d + h * dk;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
                    p[j] = s * scale;
                    mx = std::max(mx, p[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < tk; ++j) {
                    p[j] = std::exp(p[j] - mx);
                    z += p[j];
                }
                for (std::size_t j = 0; j < tk; ++j) p[j] /= z;
                double* oi = ob + i * dv_total + h * dv;
                for (std::size_t j = 0; j < tk; ++j) kt.axpy(p[j], vb + j * dv_total + h * dv, oi, dv);
            }
        }
    }
    Shape os = qs;
    os.back() = dv_total;
    return q.graph().make(
        "scaled_dot_attention", Tensor(std::move(os), std::move(out)), {q, k, v},
        [=](const Tensor&, std::span<const double> g, std::span<std::vector<double>* const> in) {
            const auto& kt2 = simd::active();
            std::vector<double> ds(tk);
            for (std::size_t b = 0; b < batch; ++b) {
                const double* qb = pq->data().data() + b * tq * d;
                const double* kb = pk->data().data() + b * tk * d;
                const double* vb = pv->data().data() + b * tk * dv_total;
                const double* gb = g.data() + b * tq * dv_total;
                for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t i = 0; i < tq; ++i) {
                        const double* p = probs->data() + ((b * heads + h) * tq + i) * tk;
                        const double* gi = gb + i * dv_total + h * dv;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < tk; ++j) {
                            const double* vj = vb + j * dv_total + h * dv;
                            double dp = 0.0;
                            for (std::size_t c = 0; c < dv; ++c) dp += gi[c] * vj[c];
                            ds[j] = dp;
                            acc += p[j] * dp;
                            if (in[2]) kt2.axpy(p[j], gi, in[2]->data() + (b * tk + j) * dv_total + h * dv, dv);
                        }
                        for (std::size_t j = 0; j < tk; ++j) ds[j] = p[j] * (ds[j] - acc) * scale;
                        if (in[0]) {
                            double* dq = in[0]->data() + (b * tq + i) * d + h * dk;
                            for (std::size_t j = 0; j < tk; ++j) kt2.axpy(ds[j], kb + j * d + h * dk, dq, dk);
                        }
                        if (in[1]) {
                            const double* qi = qb + i * d + h * dk;
                            for (std::size_t j = 0; j < tk; ++j) {
                                kt2.axpy(ds[j], qi, in[1]->data() + (b * tk + j) * d + h * dk, dk);
                            }
                        }
                    }
                }
            }
        });
}

Var sum(Var a) {
    double total = 0.0;
    for (double x : a.value().data()) total += x;
    return a.graph().make("sum", Tensor::scalar(total), {a},
                          [](const Tensor&, std::span<const double> g, std::span<std::vector<double>* const> in) {
                              for (double& x : *in[0]) x += g[0];
                          });
}

Var l2_normalize(Var a) {
    const Shape& s = a.shape();
    const std::size_t n = s.back(), rows = outer_count(s);
    const auto src = a.value().data();
    std::vector<double> out(src.size());
    auto norms = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t j = 0; j < n; ++j) ss += src[r * n + j] * src[r * n + j];
        const double nr = std::sqrt(ss);
        if (!(nr > 0.0)) throw NumericError("l2_normalize: zero-norm row " + std::to_string(r));
        (*norms)[r] = nr;
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = src[r * n + j] / nr;
    }
    return a.graph().make("l2_normalize", Tensor(s, std::move(out)), {a},
                          [norms, rows, n](const Tensor& y, std::span<const double> g,
                                           std::span<std::vector<double>* const> in) {
                              const auto yv = y.data();
                              for (std::size_t r = 0; r < rows; ++r) {
                                  double dotv = 0.0;
                                  for (std::size_t j = 0; j < n; ++j) dotv += yv[r * n + j] * g[r * n + j];
                                  const double inv = 1.0 / (*norms)[r];
                                  for (std::size_t j = 0; j < n; ++j) {
                                      (*in[0])[r * n + j] += (g[r * n + j] - yv[r * n + j] * dotv) * inv;
                                  }
                              }
                          });
}

} // namespace gsalign::ad
