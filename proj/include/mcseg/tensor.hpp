#pragma once

// Dense NCHW tensor with reverse-mode autodiff. Tensors are shared handles
// onto graph nodes; ops (ops.hpp) attach parents plus a backward closure,
// and backward() replays the graph in reverse topological order. The scalar
// type is a template parameter: float for training, double for the
// finite-difference harness.

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mcseg/common.hpp"

namespace mcseg {

struct Shape4 {
    int n = 0, c = 0, h = 0, w = 0;

    int64_t numel() const {
        return static_cast<int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape4&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

// Graph construction can be suspended (inference, data preparation) so no
// parents or closures are retained.
inline bool& grad_mode() {
    thread_local bool on = true;
    return on;
}

struct NoGradGuard {
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    bool prev;
};

template <typename T>
class Tensor4 {
public:
    struct Node {
        Shape4 shape;
        std::vector<T> data;
        std::vector<T> grad;  // empty until needed; numel-sized afterwards
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;  // accumulates into parent grads
    };

    Tensor4() = default;

    static Tensor4 zeros(Shape4 s, bool requires_grad = false) {
        Tensor4 t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = s;
        t.node_->data.assign(static_cast<size_t>(s.numel()), T(0));
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor4 full(Shape4 s, T value, bool requires_grad = false) {
        Tensor4 t = zeros(s, requires_grad);
        for (auto& v : t.node_->data) v = value;
        return t;
    }

    static Tensor4 from_data(Shape4 s, std::vector<T> data, bool requires_grad = false) {
        if (static_cast<int64_t>(data.size()) != s.numel())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + s.str());
        Tensor4 t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = s;
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    // channel vector (bias, gamma, beta) stored as (1,c,1,1)
    static Tensor4 vec(int c, T value = T(0), bool requires_grad = false) {
        return full({1, c, 1, 1}, value, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape4& shape() const { return node_->shape; }
    int64_t numel() const { return node_->shape.numel(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    T* ptr() { return node_->data.data(); }
    const T* ptr() const { return node_->data.data(); }

    T& at(int n, int c, int h, int w) {
        return node_->data[offset(n, c, h, w)];
    }
    T at(int n, int c, int h, int w) const {
        return node_->data[offset(n, c, h, w)];
    }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::vector<T>& grad() {
        ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const { return node_->grad; }

    void ensure_grad() {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.assign(node_->grad.size(), T(0));
    }

    // Deep copy of the values with no graph history.
    Tensor4 detach() const {
        Tensor4 t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    std::shared_ptr<Node>& node() { return node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

    // Seeds d(out)/d(out) = 1 on a scalar output and propagates.
    void backward() {
        if (numel() != 1) throw ShapeError("backward() needs a scalar output, got " + shape().str());
        backward(std::vector<T>{T(1)});
    }

    // Seeds an arbitrary output gradient (used by the gradient-check harness).
    void backward(const std::vector<T>& seed) {
        if (static_cast<int64_t>(seed.size()) != numel())
            throw ShapeError("backward seed length mismatch");
        if (!node_->requires_grad) return;

        // reverse topological order via iterative post-order DFS
        std::vector<Node*> order;
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.push_back({node_.get(), 0});
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [cur, next] = stack.back();
            if (next < cur->parents.size()) {
                Node* p = cur->parents[next++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(cur);
                stack.pop_back();
            }
        }
        // Op-node grads are scratch for this pass; only leaves accumulate
        // across passes.
        for (Node* n : order)
            if (n->backward_fn && !n->grad.empty()) n->grad.assign(n->grad.size(), T(0));
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
        for (size_t i = 0; i < seed.size(); ++i) node_->grad[i] += seed[i];

        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* cur = *it;
            if (cur->backward_fn && !cur->grad.empty()) cur->backward_fn(*cur);
        }
    }

    // Op construction helper: wires parents and the backward closure when
    // grad mode is on and some parent tracks gradients.
    static Tensor4 op_result(Shape4 s, std::vector<Tensor4> parents,
                             std::function<void(Node&)> backward_fn) {
        bool track = grad_mode();
        if (track) {
            track = false;
            for (const auto& p : parents) track = track || p.requires_grad();
        }
        Tensor4 t = zeros(s, track);
        if (track) {
            t.node_->parents.reserve(parents.size());
            for (auto& p : parents) t.node_->parents.push_back(p.node_);
            t.node_->backward_fn = std::move(backward_fn);
        }
        return t;
    }

private:
    size_t offset(int n, int c, int h, int w) const {
        const Shape4& s = node_->shape;
        return ((static_cast<size_t>(n) * s.c + c) * s.h + h) * s.w + w;
    }

    std::shared_ptr<Node> node_;
};

template <typename T>
struct NamedParam {
    std::string name;
    Tensor4<T> tensor;
};

// Ensures a parent grad buffer exists and returns it; ops accumulate with +=.
template <typename T>
inline std::vector<T>& grad_of(typename Tensor4<T>::Node& n) {
    if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
    return n.grad;
}

}  // namespace mcseg
