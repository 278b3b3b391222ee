#include "gsalign/alignment.hpp"

#include "gsalign/error.hpp"

#include <algorithm>
#include <cmath>

namespace gsalign {

using ad::Tensor;
using ad::Var;

void LossConfig::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("lambda1 and lambda2 must be nonnegative");
}

void TripletBatch::validate() const {
    const std::size_t n = ids.size();
    if (n == 0) throw ShapeError("empty triplet batch");
    if (captions.size() != n) throw ShapeError("triplet batch has " + std::to_string(captions.size()) + " captions for " + std::to_string(n) + " ids");
    for (const Tensor* t : {&text, &image}) {
        if (t->rank() != 2 || t->dim(0) != n) {
            throw ShapeError("triplet batch embeddings have shape " + ad::to_string(t->shape()) + ", expected [" +
                             std::to_string(n) + ", E]");
        }
    }
    if (!clouds.empty() && clouds.size() != n) throw ShapeError("triplet batch cloud count mismatch");
}

Var masked_row_contrastive(Var logits, std::vector<char> mask) {
    const Tensor& l = logits.value();
    if (l.rank() != 2 || l.dim(0) != l.dim(1)) throw ShapeError("contrastive logits must be square, got " + ad::to_string(l.shape()));
    const std::size_t n = l.dim(0);
    if (mask.size() != n * n) throw ShapeError("contrastive mask size mismatch");
    auto probs = std::make_shared<std::vector<double>>(n * n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = l.data().subspan(i * n, n);
        auto allowed = [&](std::size_t j) { return j == i || mask[i * n + j]; };
        double m = row[i];
        for (std::size_t j = 0; j < n; ++j) {
            if (allowed(j)) m = std::max(m, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (allowed(j)) z += std::exp(row[j] - m);
        }
        total += m + std::log(z) - row[i];
        for (std::size_t j = 0; j < n; ++j) {
            if (allowed(j)) (*probs)[i * n + j] = std::exp(row[j] - m) / z;
        }
    }
    Tensor value = Tensor::scalar(total / static_cast<double>(n));
    return logits.graph().make("contrastive", std::move(value), {logits},
                               [probs, n](const Tensor&, std::span<const double> g, std::span<std::vector<double>* const> in) {
                                   if (!in[0]) return;
                                   const double s = g[0] / static_cast<double>(n);
                                   auto& dl = *in[0];
                                   for (std::size_t i = 0; i < n; ++i) {
                                       for (std::size_t j = 0; j < n; ++j) dl[i * n + j] += s * (*probs)[i * n + j];
                                       dl[i * n + i] -= s;
                                   }
                               });
}

namespace {

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

Var directional_loss(const Tensor& anchors, Var gs, const std::vector<char>& mask, const LossConfig& cfg) {
    cfg.validate();
    const Tensor& g = gs.value();
    if (g.rank() != 2 || g.dim(0) != anchors.dim(0)) {
        throw ShapeError("3D embeddings have shape " + ad::to_string(g.shape()) + ", expected [" +
                         std::to_string(anchors.dim(0)) + ", E]");
    }
    if (g.dim(1) != anchors.dim(1)) {
        throw ShapeError("3D embedding dim " + std::to_string(g.dim(1)) + " does not match frozen embedding dim " +
                         std::to_string(anchors.dim(1)));
    }
    ad::Graph& graph = gs.graph();
    Var logits = ad::mul_scalar(ad::matmul(graph.constant(anchors), ad::transpose(gs)), 1.0 / cfg.tau);
    Var loss = masked_row_contrastive(logits, mask);
    if (!cfg.symmetric) return loss;
    // mask is symmetric for both negative rules
    Var reverse = masked_row_contrastive(ad::transpose(logits), mask);
    return ad::mul_scalar(ad::add(loss, reverse), 0.5);
}

std::vector<char> caption_mask(const TripletBatch& b) {
    const std::size_t n = b.size();
    std::vector<char> mask(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) mask[i * n + j] = i != j && trim(b.captions[i]) != trim(b.captions[j]);
    }
    return mask;
}

std::vector<char> offdiag_mask(std::size_t n) {
    std::vector<char> mask(n * n, 1);
    for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0;
    return mask;
}

template <class F>
double evaluate(const Tensor& gs, F&& f) {
    ad::Graph graph;
    return f(graph.constant(gs)).value()[0];
}

} // namespace

Var text_gs_loss(const TripletBatch& batch, Var gs, const LossConfig& cfg) {
    batch.validate();
    return directional_loss(batch.text, gs, caption_mask(batch), cfg);
}

Var image_gs_loss(const TripletBatch& batch, Var gs, const LossConfig& cfg) {
    batch.validate();
    return directional_loss(batch.image, gs, offdiag_mask(batch.size()), cfg);
}

Var combined_loss(const TripletBatch& batch, Var gs, const LossConfig& cfg) {
    Var t = ad::mul_scalar(text_gs_loss(batch, gs, cfg), cfg.lambda1);
    Var i = ad::mul_scalar(image_gs_loss(batch, gs, cfg), cfg.lambda2);
    return ad::add(t, i);
}

double text_gs_loss(const TripletBatch& batch, const Tensor& gs, const LossConfig& cfg) {
    return evaluate(gs, [&](Var v) { return text_gs_loss(batch, v, cfg); });
}

double image_gs_loss(const TripletBatch& batch, const Tensor& gs, const LossConfig& cfg) {
    return evaluate(gs, [&](Var v) { return image_gs_loss(batch, v, cfg); });
}

double combined_loss(const TripletBatch& batch, const Tensor& gs, const LossConfig& cfg) {
    return evaluate(gs, [&](Var v) { return combined_loss(batch, v, cfg); });
}

} // namespace gsalign
