#pragma once

// Dense 4-D tensor with a define-by-run reverse-mode tape.
//
// Every Tensor is a cheap handle onto a shared Node. Operations that see at
// least one input requiring gradients record their inputs and a backward
// closure on the output node; the tape is the DAG reachable from the loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace uhdfour {

class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t size() const { return n * c * h * w; }
    constexpr std::size_t plane() const { return h * w; }
    constexpr bool operator==(const Shape&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
        return os.str();
    }
};

namespace detail {

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(const Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }

    std::span<T> grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// RAII guard disabling tape recording on the current thread.
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

template <class T>
class Tensor {
   public:
    using value_type = T;
    using node_type = detail::Node<T>;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<node_type>()) {
        node_->shape = shape;
        node_->data.assign(shape.size(), fill);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<node_type>()) {
        if (values.size() != shape.size()) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape.str());
        }
        node_->shape = shape;
        node_->data = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
    static Tensor ones(Shape shape) { return Tensor(shape, T(1)); }
    static Tensor full(Shape shape, T value) { return Tensor(shape, value); }
    static Tensor scalar(T value) { return Tensor(Shape{1, 1, 1, 1}, value); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    // Writable access is intended for leaves (parameters, inputs).
    std::span<T> mutable_data() { return node_->data; }

    T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return node_->data[index(n, c, h, w)];
    }
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return node_->data[index(n, c, h, w)];
    }
    std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        const auto& s = node_->shape;
        return ((n * s.c + c) * s.h + h) * s.w + w;
    }

    T item() const {
        if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape().str());
        return node_->data[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool flag) {
        node_->requires_grad = flag;
        return *this;
    }

    bool has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }

    bool is_leaf() const { return node_->is_leaf(); }

    /// Copy of the values with no tape history.
    Tensor detach() const { return Tensor(shape(), node_->data); }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return Tensor<U>(shape(), std::move(out), requires_grad());
    }

    void backward() const;

    const std::shared_ptr<node_type>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<node_type> node) : node_(std::move(node)) {}

   private:
    std::shared_ptr<node_type> node_;
};

namespace detail {

/// Creates an op result. The backward closure is attached only when recording
/// is enabled and some input participates in differentiation.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(const Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->shape = shape;
    node->data = std::move(data);
    const bool needs =
        grad_enabled() && std::any_of(inputs.begin(), inputs.end(),
                                      [](const auto& in) { return in && in->requires_grad; });
    if (needs) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

}  // namespace detail

/// Recorded operations reachable from a root, inputs before consumers.
template <class T>
std::vector<detail::Node<T>*> topological_order(const Tensor<T>& root) {
    std::vector<detail::Node<T>*> order;
    std::unordered_set<const detail::Node<T>*> visited;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

template <class T>
void Tensor<T>::backward() const {
    if (size() != 1) {
        throw DimensionError("backward() requires a scalar loss, got shape " + shape().str());
    }
    if (!node_->requires_grad) return;
    auto order = topological_order(*this);
    // Interior gradients are rebuilt per traversal; leaves accumulate.
    for (auto* node : order) {
        if (!node->is_leaf()) node->grad.assign(node->data.size(), T(0));
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
    }
    for (auto* node : order) {
        if (!node->is_leaf()) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

template <class T>
void backward(const Tensor<T>& loss) {
    loss.backward();
}

inline void require(bool condition, const std::string& message) {
    if (!condition) throw DimensionError(message);
}

}  // namespace uhdfour
