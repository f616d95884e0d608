#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xiqa/error.hpp"

namespace xiqa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<T>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad;
    }
};

inline thread_local bool grad_recording_disabled = false;

} // namespace detail

/// Disables trace recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_recording_disabled) { detail::grad_recording_disabled = true; }
    ~NoGradGuard() { detail::grad_recording_disabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_recording_enabled() { return !detail::grad_recording_disabled; }

/// Shared handle to an n-dimensional array that may take part in a recorded
/// computation. Copies alias the same storage; values of non-leaf tensors are
/// never modified after creation.
template <class T>
class Tensor {
public:
    using value_type = T;
    using Node = detail::Node<T>;

    Tensor() : node_(std::make_shared<Node>()) { node_->value.assign(1, T(0)); }

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        if (shape_numel(shape) != values.size()) {
            throw Error(Errc::ShapeMismatch, "value count " + std::to_string(values.size()) +
                                                 " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, fill), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, std::vector<T>{v}, requires_grad); }

    // Builds the result of an operation. The trace is recorded only when some
    // parent needs a gradient and recording is enabled on this thread.
    static Tensor from_op(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                          std::function<void(Node&)> backward_fn) {
        Tensor out(std::move(shape), std::move(values));
        if (!grad_recording_enabled()) return out;
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (!any) return out;
        out.node_->requires_grad = true;
        out.node_->is_leaf = false;
        out.node_->parents.reserve(parents.size());
        for (auto& p : parents) out.node_->parents.push_back(p.node_);
        out.node_->backward_fn = std::move(backward_fn);
        return out;
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    // Mutable access is for leaves (parameters updated by an optimizer).
    std::span<T> mutable_values() { return node_->value; }
    const std::vector<T>& vector() const { return node_->value; }
    T item() const {
        if (numel() != 1) throw Error(Errc::NonScalarLoss, "item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    T operator[](std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf; }
    void set_requires_grad(bool flag) {
        if (!node_->is_leaf) throw Error(Errc::DetachedGraph, "requires_grad can only be set on leaves");
        node_->requires_grad = flag;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    Tensor detach() const { return Tensor(shape(), node_->value); }

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
    /// calls; intermediate gradients are reset at the start of every sweep.
    void backward() const {
        if (numel() != 1) throw Error(Errc::NonScalarLoss, "backward() needs a scalar, got " + shape_str(shape()));
        if (!requires_grad()) throw Error(Errc::DetachedGraph, "loss is not connected to any trainable tensor");

        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* parent = node->parents[next++].get();
                if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        for (Node* n : order) {
            if (!n->is_leaf) n->grad.assign(n->value.size(), T(0));
        }
        node_->ensure_grad()[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (!n->is_leaf && n->backward_fn) n->backward_fn(*n);
        }
    }

    Node& node() const { return *node_; }

private:
    std::shared_ptr<Node> node_;
};

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad = false) {
    std::vector<To> v(t.values().begin(), t.values().end());
    return Tensor<To>(t.shape(), std::move(v), requires_grad);
}

/// A trainable tensor with a hierarchical name such as "encoder.block3.attn.wq".
template <class T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

} // namespace xiqa
