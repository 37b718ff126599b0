// Reverse-mode autodiff tape. Tensors are immutable values (flat row-major
// doubles); every differentiable op appends one node to a Graph, and
// Graph::backward replays the tape once in reverse. Tensors detached from any
// graph are plain constants and safe to share across threads.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace paqdet::ad {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& s);

class Graph;

class Tensor {
public:
    Tensor() = default;

    const Shape& shape() const { return shape_; }
    const std::vector<double>& values() const { return *values_; }
    std::size_t size() const { return values_ ? values_->size() : 0; }
    bool defined() const { return static_cast<bool>(values_); }

    bool requires_grad() const { return requires_grad_; }
    int node_id() const { return node_id_; }
    Graph* graph() const { return graph_; }

    // 2-D helpers; throw on rank mismatch.
    int rows() const;
    int cols() const;

    double item() const {
        if (size() != 1) throw std::invalid_argument("item(): tensor has " + shape_str(shape_) + ", expected a scalar");
        return (*values_)[0];
    }

    // Shared handle to the value storage; backward closures capture this
    // instead of copying buffers.
    std::shared_ptr<const std::vector<double>> values_ptr() const { return values_; }

private:
    friend class Graph;
    friend Tensor make_constant(Shape, std::vector<double>);

    std::shared_ptr<const std::vector<double>> values_;
    Shape shape_;
    Graph* graph_ = nullptr;
    int node_id_ = -1;
    bool requires_grad_ = false;
};

// A constant tensor that never records onto a graph.
Tensor make_constant(Shape shape, std::vector<double> values);
Tensor zeros(const Shape& shape);
Tensor full(const Shape& shape, double value);

class Graph {
public:
    // Backward closure: receives the graph and the node's output gradient,
    // accumulates into input gradients via accumulate().
    using Backward = std::function<void(Graph&, const std::vector<double>&)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Registers a differentiable leaf (a trainable parameter).
    Tensor leaf(Shape shape, std::vector<double> values);

    // Records an op output. `inputs` lists the node ids that receive
    // gradients (-1 entries are constants and are skipped).
    Tensor record(Shape shape, std::shared_ptr<const std::vector<double>> values,
                  std::vector<int> inputs, Backward backward);

    // Propagates d(loss)/d(node) to every recorded node. The loss must be
    // scalar. A second call without zero_grad() is rejected: gradients
    // accumulate within a single backward pass only.
    void backward(const Tensor& loss);

    void zero_grad();

    const std::vector<double>& grad(const Tensor& t) const;
    bool has_grad(const Tensor& t) const;

    void accumulate(int node_id, const double* g, std::size_t n);

    // Mutable gradient buffer for in-place accumulation (nullptr for
    // constants). Only valid inside backward closures.
    double* grad_data(int node_id) {
        return node_id < 0 ? nullptr : grads_[node_id].data();
    }

    std::size_t num_nodes() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

private:
    struct Node {
        std::vector<int> inputs;
        Backward backward;  // empty for leaves
        std::size_t numel;
    };

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    bool backward_done_ = false;
};

// True when the op consuming these inputs must record a node.
inline Graph* recording_graph(std::initializer_list<const Tensor*> ins) {
    Graph* g = nullptr;
    for (const Tensor* t : ins) {
        if (t->requires_grad()) {
            if (g && g != t->graph())
                throw std::invalid_argument("op inputs belong to different graphs");
            g = t->graph();
        }
    }
    return g;
}

}  // namespace paqdet::ad
