#include "dnd/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dnd {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {
thread_local bool g_no_grad = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

namespace detail {

std::vector<double>& Node::ensure_grad() {
    if (grad.empty() && !data.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_to_string(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t i) const {
    if (i >= node_->shape.size()) {
        throw DimensionError("dimension " + std::to_string(i) + " out of range for shape " +
                             shape_to_string(node_->shape));
    }
    return node_->shape[i];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
    if (!node_->is_leaf()) throw ContractError("mutable_data on a non-leaf tensor");
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!node_->is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
    node_->requires_grad = value;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw DimensionError("cannot reshape " + shape_to_string(shape()) + " to " + shape_to_string(new_shape));
    }
    return make_result(std::move(new_shape), node_->data, {*this}, [](detail::Node& self) {
        auto& pg = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += self.grad[i];
    });
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward) {
    Tensor out = from(std::move(shape), std::move(values), false);
    bool any = !g_no_grad && std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (any) {
        out.node_->requires_grad = true;
        out.node_->parents.reserve(parents.size());
        for (auto& p : parents) out.node_->parents.push_back(p.node_);
        out.node_->backward_fn = std::move(backward);
    }
    return out;
}

ComputationTape ComputationTape::record(const Tensor& root) {
    ComputationTape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    std::unordered_set<detail::Node*> visited;
    // Iterative post-order DFS; a frame is (node, next parent index).
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            tape.order_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

bool ComputationTape::is_topological() const {
    std::unordered_set<const detail::Node*> seen;
    for (const auto* node : order_) {
        for (const auto& p : node->parents) {
            if (p->requires_grad && !seen.count(p.get())) return false;
        }
        if (!seen.insert(node).second) return false;
    }
    return true;
}

void Tensor::backward() const {
    if (!requires_grad()) throw ContractError("backward() on a tensor that does not require grad");
    if (numel() != 1) throw ContractError("backward() needs a scalar, got " + shape_to_string(shape()));
    auto tape = ComputationTape::record(*this);
    for (auto* node : tape.nodes()) {
        if (!node->is_leaf()) node->grad.clear();
    }
    node_->ensure_grad()[0] += 1.0;
    const auto& order = tape.nodes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

}  // namespace dnd
