#include "gsalign/autodiff.hpp"

#include "gsalign/error.hpp"

#include <cmath>
#include <sstream>

namespace gsalign::ad {

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << "]";
    return os.str();
}

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
    }
    if (shape_.empty()) throw ShapeError("tensor must have at least one dimension");
    if (element_count(shape_) != data_.size()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + to_string(shape_));
    }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
    const std::size_t n = element_count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

const Tensor& Var::value() const { return graph_->node(*this).value; }
bool Var::requires_grad() const { return graph_->node(*this).requires_grad; }

const Graph::Node& Graph::node(Var v) const {
    if (v.graph_ != this || v.id_ >= nodes_.size()) throw UsageError("variable does not belong to this graph");
    return *nodes_[v.id_];
}

Var Graph::leaf(Tensor value, bool requires_grad) {
    for (double x : value.data()) {
        if (!std::isfinite(x)) throw NumericError("leaf tensor contains a non-finite value");
    }
    auto n = std::make_unique<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Graph::make(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                BackwardFn backward) {
    return make(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Graph::make(std::string_view op, Tensor value, const std::vector<Var>& inputs,
                BackwardFn backward) {
    for (double x : value.data()) {
        if (!std::isfinite(x)) throw NumericError(std::string(op) + " produced a non-finite value");
    }
    auto n = std::make_unique<Node>();
    n->value = std::move(value);
    for (const Var& in : inputs) {
        const Node& src = node(in);
        n->inputs.push_back(in.id_);
        n->requires_grad = n->requires_grad || src.requires_grad;
    }
    if (n->requires_grad) n->backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var output) {
    const Node& out = node(output);
    if (out.value.size() != 1) {
        throw UsageError("backward requires a scalar output, got shape " + to_string(out.value.shape()));
    }
    for (auto& n : nodes_) {
        if (n->requires_grad) n->grad.assign(n->value.size(), 0.0);
        else n->grad.clear();
    }
    if (!out.requires_grad) return;
    nodes_[output.id_]->grad[0] = 1.0;

    std::vector<std::vector<double>*> in_grads;
    for (std::size_t i = output.id_ + 1; i-- > 0;) {
        Node& n = *nodes_[i];
        if (!n.requires_grad || !n.backward) continue;
        in_grads.clear();
        for (std::size_t src : n.inputs) {
            Node& in = *nodes_[src];
            in_grads.push_back(in.requires_grad ? &in.grad : nullptr);
        }
        n.backward(n.value, n.grad, in_grads);
    }
}

Tensor Graph::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() != n.value.size()) return Tensor::zeros(n.value.shape());
    return Tensor(n.value.shape(), n.grad);
}

} // namespace gsalign::ad
