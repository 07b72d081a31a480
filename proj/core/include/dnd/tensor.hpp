#pragma once

// Dense row-major float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Values are immutable
// once an op has produced them; only gradient buffers (and, for leaf
// parameters, the optimizer) write into a node after creation.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnd {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

class IndexError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads self.grad, accumulates into parents that require grad.
    std::function<void(Node& self)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
    std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t i) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    // Leaf-only write access (parameter updates, finite-difference probes).
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Seeds d(self)/d(self) = 1 and propagates. Leaf gradients accumulate
    // across calls; interior gradients are recomputed each call.
    void backward() const;

    // Same values, no history.
    Tensor detach() const;
    Tensor reshape(Shape shape) const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    const std::shared_ptr<detail::Node>& node() const { return node_; }

    // Builds an op result. `backward` is only kept when some parent needs it.
    static Tensor make_result(Shape shape, std::vector<double> values,
                              std::vector<Tensor> parents,
                              std::function<void(detail::Node&)> backward);

  private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// While alive, op results on this thread record no history.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool active();

  private:
    bool previous_;
};

// Topologically ordered view of every node reachable from a root that
// participates in differentiation.
class ComputationTape {
  public:
    static ComputationTape record(const Tensor& root);

    std::size_t size() const { return order_.size(); }
    const std::vector<detail::Node*>& nodes() const { return order_; }
    // Parents precede children.
    bool is_topological() const;

  private:
    std::vector<detail::Node*> order_;
};

}  // namespace dnd
