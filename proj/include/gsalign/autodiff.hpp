#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Graph is a tape: nodes are appended in creation order, which is a
// topological order, and backward() walks it in reverse exactly once.
// Broadcasting is limited to adding a rank-1 bias over the last axis.

namespace gsalign::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor filled(Shape shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

class Graph;

/// Handle to a node on a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

/// Receives the node's forward value and output gradient and accumulates
/// into the inputs' gradient buffers. A buffer pointer is null when that
/// input does not require a gradient.
using BackwardFn = std::function<void(const Tensor& out, std::span<const double> out_grad,
                                      std::span<std::vector<double>* const> in_grads)>;

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends an op node. Validates that `value` is finite (NumericError
    /// naming `op` otherwise). `backward` may be empty for ops whose inputs
    /// never need gradients.
    Var make(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);
    Var make(std::string_view op, Tensor value, const std::vector<Var>& inputs,
             BackwardFn backward);

    /// Resets all gradients and backpropagates from a single-element output.
    void backward(Var output);

    /// Gradient of the last backward() pass; zeros for nodes that did not
    /// require one.
    Tensor grad(Var v) const;

    std::size_t size() const { return nodes_.size(); }

private:
    friend class Var;
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };
    const Node& node(Var v) const;

    std::vector<std::unique_ptr<Node>> nodes_;
};

// ---- operators ---------------------------------------------------------

/// [..., m, k] x [k, n] -> [..., m, n], or batched [b, m, k] x [b, k, n].
Var matmul(Var a, Var b);
/// Same shape, or rank-1 `b` matching the last axis of `a`.
Var add(Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
Var mul_scalar(Var a, double s);
Var concat(const std::vector<Var>& parts);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var mean_pool(Var a, std::size_t axis);
/// Gradient goes to the first maximal entry along the axis.
Var max_pool(Var a, std::size_t axis);
Var softmax(Var a);
Var layer_norm(Var x, double eps);
Var layer_norm(Var x, Var gamma, Var beta, double eps);
/// tanh approximation of GELU.
Var gelu(Var a);
Var tanh(Var a);
/// x W + b over the last axis of x; W is [in, out], b is [out].
Var linear(Var x, Var w, Var b);
Var linear(Var x, Var w);
/// softmax(Q K^T / sqrt(d_k)) V applied per head on contiguous column
/// blocks. Q is [..., Tq, D], K is [..., Tk, D], V is [..., Tk, Dv].
Var scaled_dot_attention(Var q, Var k, Var v, std::size_t heads = 1);
/// Sum of all entries, shape {1}.
Var sum(Var a);
/// Rows scaled to unit L2 norm along the last axis.
Var l2_normalize(Var a);

} // namespace gsalign::ad
