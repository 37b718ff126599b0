#include "paqdet/tensor.hpp"

#include <sstream>

namespace paqdet::ad {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

int Tensor::rows() const {
    if (shape_.size() != 2) throw std::invalid_argument("rows(): tensor shape " + shape_str(shape_) + " is not 2-D");
    return shape_[0];
}

int Tensor::cols() const {
    if (shape_.size() != 2) throw std::invalid_argument("cols(): tensor shape " + shape_str(shape_) + " is not 2-D");
    return shape_[1];
}

Tensor make_constant(Shape shape, std::vector<double> values) {
    if (numel(shape) != values.size())
        throw std::invalid_argument("constant: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
    Tensor t;
    t.shape_ = std::move(shape);
    t.values_ = std::make_shared<const std::vector<double>>(std::move(values));
    return t;
}

Tensor zeros(const Shape& shape) { return make_constant(shape, std::vector<double>(numel(shape), 0.0)); }

Tensor full(const Shape& shape, double value) {
    return make_constant(shape, std::vector<double>(numel(shape), value));
}

Tensor Graph::leaf(Shape shape, std::vector<double> values) {
    if (numel(shape) != values.size())
        throw std::invalid_argument("leaf: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
    Tensor t;
    t.shape_ = std::move(shape);
    t.values_ = std::make_shared<const std::vector<double>>(std::move(values));
    t.graph_ = this;
    t.requires_grad_ = true;
    t.node_id_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{{}, Backward{}, t.values_->size()});
    return t;
}

Tensor Graph::record(Shape shape, std::shared_ptr<const std::vector<double>> values,
                     std::vector<int> inputs, Backward backward) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.values_ = std::move(values);
    t.graph_ = this;
    t.requires_grad_ = true;
    t.node_id_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{std::move(inputs), std::move(backward), t.values_->size()});
    return t;
}

void Graph::backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (loss.graph() != this || loss.node_id() < 0)
        throw std::invalid_argument("backward: loss tensor is not recorded on this graph");
    if (backward_done_)
        throw std::logic_error("backward: called twice without zero_grad(); gradients would double-count");
    if (nodes_.empty()) throw std::logic_error("backward: empty graph");

    grads_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) grads_[i].assign(nodes_[i].numel, 0.0);
    grads_[loss.node_id()][0] = 1.0;

    for (int id = loss.node_id(); id >= 0; --id) {
        const Node& n = nodes_[id];
        if (n.backward) n.backward(*this, grads_[id]);
    }
    backward_done_ = true;
}

void Graph::zero_grad() {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
    backward_done_ = false;
}

const std::vector<double>& Graph::grad(const Tensor& t) const {
    if (t.graph() != this || t.node_id() < 0)
        throw std::invalid_argument("grad: tensor is not recorded on this graph");
    if (!backward_done_) throw std::logic_error("grad: backward() has not run");
    return grads_[t.node_id()];
}

bool Graph::has_grad(const Tensor& t) const {
    return backward_done_ && t.graph() == this && t.node_id() >= 0 &&
           static_cast<std::size_t>(t.node_id()) < grads_.size();
}

void Graph::accumulate(int node_id, const double* g, std::size_t n) {
    if (node_id < 0) return;
    auto& buf = grads_[node_id];
    for (std::size_t i = 0; i < n; ++i) buf[i] += g[i];
}

}  // namespace paqdet::ad
