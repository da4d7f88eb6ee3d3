#include "hcvp/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace hcvp {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

std::shared_ptr<detail::Node> new_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor of shape " + shape_str(shape) + " cannot hold " +
                             std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

} // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> values(shape_numel(shape), value);
    return wrap(new_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    return wrap(new_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    }
    return node_->shape[axis];
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= node_->shape[axis]) throw DimensionError("index out of range for " + shape_str(shape()));
        flat = flat * node_->shape[axis] + i;
        ++axis;
    }
    return node_->value[flat];
}

void Tensor::set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    if (!flag) node_->grad.clear();
}

Tensor Tensor::detach() const {
    return from(node_->shape, node_->value, false);
}

Graph Graph::trace(const Tensor& root) {
    Graph graph;
    std::unordered_set<const detail::Node*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            graph.nodes.push_back(node);
            stack.pop_back();
        }
    }
    return graph;
}

std::vector<std::string> Graph::op_names() const {
    std::vector<std::string> names;
    names.reserve(nodes.size());
    for (auto* n : nodes) names.emplace_back(n->op);
    return names;
}

bool Graph::contains(const std::string& op) const {
    return std::any_of(nodes.begin(), nodes.end(), [&](auto* n) { return op == n->op; });
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw DimensionError("backward() requires a scalar loss, got " + shape_str(shape()));
    }
    if (!node_->requires_grad) return;
    Graph graph = Graph::trace(*this);
    node_->ensure_grad()[0] += 1.0;
    for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    for (auto* n : graph.nodes) {
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->inputs.clear();
        }
    }
}

namespace {
thread_local bool no_grad_mode = false;
}

NoGradGuard::NoGradGuard() : previous_(no_grad_mode) { no_grad_mode = true; }
NoGradGuard::~NoGradGuard() { no_grad_mode = previous_; }
bool NoGradGuard::active() { return no_grad_mode; }

namespace detail {

Tensor make_result(Shape shape,
                   std::vector<double> value,
                   std::vector<Tensor> inputs,
                   const char* op,
                   std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool needs = !no_grad_mode && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& t : inputs) node->inputs.push_back(t.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor::wrap(std::move(node));
}

} // namespace detail

} // namespace hcvp
