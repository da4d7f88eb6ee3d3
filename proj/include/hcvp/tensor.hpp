#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcvp {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible with an operation.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks an API contract (wrong state, wrong counts).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised when a computation produces or receives non-finite values.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

} // namespace detail

/// Dense row-major tensor of doubles with an optional reverse-mode tape.
///
/// A Tensor is a cheap handle; copies share the same storage. Leaf tensors
/// created with requires_grad=true act as parameters and accumulate gradient
/// across backward calls until zero_grad() is called.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> data() const { return node_->value; }
    /// Direct write access, for optimizers and finite differencing.
    std::span<double> mutable_data() { return node_->value; }
    std::vector<double> to_vector() const { return node_->value; }
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag);
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// Copy of this tensor's values with no tape connection.
    Tensor detach() const;

    /// Reverse sweep from a scalar. Frees the tape closures afterwards.
    void backward() const;

    const char* op_name() const { return node_->op; }
    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<detail::Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered view of the tape reachable from a root tensor.
/// Inputs always precede their consumers.
struct Graph {
    std::vector<detail::Node*> nodes;

    static Graph trace(const Tensor& root);
    std::vector<std::string> op_names() const;
    bool contains(const std::string& op) const;
};

/// While alive, ops on this thread record no tape (inference mode).
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

namespace detail {

/// Creates an op result. When no input needs a gradient the tape link is dropped.
Tensor make_result(Shape shape,
                   std::vector<double> value,
                   std::vector<Tensor> inputs,
                   const char* op,
                   std::function<void(Node&)> backward_fn);

} // namespace detail

} // namespace hcvp
