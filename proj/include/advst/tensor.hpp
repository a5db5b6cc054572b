#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "advst/errors.hpp"

// Dense row-major tensors plus a dynamic reverse-mode tape. A Graph owns the
// tape for one forward pass; ops record backward closures onto the unique
// live graph among their differentiable inputs. A tensor participates in
// differentiation only while its graph binding matches that live graph, so
// parameters left bound to a dead graph act as constants — this is how the
// trainer freezes the network while ascending transform parameters.

namespace advst {

template <class T>
struct GraphCore {
    std::vector<std::function<void()>> tape;  // backward closures, forward order
    bool consumed = false;                    // one backward per graph
};

template <class T>
struct TensorStorage {
    std::vector<std::size_t> shape;
    std::vector<T> values;
    std::vector<T> grad;  // engaged (sized) only while bound to a graph
    bool requires_grad = false;
    std::weak_ptr<GraphCore<T>> graph;
};

template <class T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape) {
        Tensor t;
        t.s_ = std::make_shared<TensorStorage<T>>();
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        t.s_->shape = std::move(shape);
        t.s_->values.assign(n, T(0));
        return t;
    }
    static Tensor full(std::vector<std::size_t> shape, T v) {
        Tensor t = zeros(std::move(shape));
        t.s_->values.assign(t.numel(), v);
        return t;
    }
    static Tensor scalar(T v) { return full({1}, v); }
    static Tensor from_values(std::vector<std::size_t> shape, std::vector<T> v) {
        Tensor t;
        t.s_ = std::make_shared<TensorStorage<T>>();
        t.s_->shape = std::move(shape);
        std::size_t n = 1;
        for (auto d : t.s_->shape) n *= d;
        if (n != v.size())
            throw ContractError("tensor: " + std::to_string(v.size()) +
                                " values for shape of " + std::to_string(n));
        t.s_->values = std::move(v);
        return t;
    }

    bool defined() const { return static_cast<bool>(s_); }
    const std::vector<std::size_t>& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
    std::size_t numel() const { return s_->values.size(); }

    T* data() { return s_->values.data(); }
    const T* data() const { return s_->values.data(); }
    std::vector<T>& values() { return s_->values; }
    const std::vector<T>& values() const { return s_->values; }

    bool requires_grad() const { return s_ && s_->requires_grad; }
    T* grad_data() {
        if (s_->grad.size() != s_->values.size())
            throw StateError("tensor: gradient buffer not engaged");
        return s_->grad.data();
    }
    const std::vector<T>& grad() const {
        if (s_->grad.size() != s_->values.size())
            throw StateError("tensor: gradient buffer not engaged");
        return s_->grad;
    }

    T item() const {
        if (numel() != 1) throw ContractError("item: tensor has more than one element");
        return s_->values[0];
    }

    // Row-major element access, mainly for tests and small value-level code.
    T& at(std::initializer_list<std::size_t> idx) {
        return s_->values[flat(idx)];
    }
    T at(std::initializer_list<std::size_t> idx) const {
        return s_->values[flat(idx)];
    }

    // Copy of the values with no graph binding: a constant.
    Tensor detached() const { return from_values(s_->shape, s_->values); }

    const std::shared_ptr<TensorStorage<T>>& store() const { return s_; }

private:
    std::size_t flat(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != s_->shape.size())
            throw ContractError("at: index rank mismatch");
        std::size_t f = 0, k = 0;
        for (auto i : idx) {
            if (i >= s_->shape[k]) throw ContractError("at: index out of range");
            f = f * s_->shape[k] + i;
            ++k;
        }
        return f;
    }

    std::shared_ptr<TensorStorage<T>> s_;
};

template <class T>
class Graph {
public:
    Graph() : core_(std::make_shared<GraphCore<T>>()) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Make t a differentiable leaf of this graph. Rebinding an existing
    // tensor (e.g. a persistent parameter) keeps its storage and zeroes the
    // gradient buffer.
    void adopt(Tensor<T>& t) {
        auto& s = *t.store();
        s.requires_grad = true;
        s.graph = core_;
        s.grad.assign(s.values.size(), T(0));
    }

    // Reverse pass from a scalar root produced on this graph. Single use.
    void backward(const Tensor<T>& root) {
        if (!root.defined() || root.numel() != 1)
            throw ContractError("backward: root must be a scalar tensor");
        auto& s = *root.store();
        if (!s.requires_grad || s.graph.lock() != core_)
            throw ContractError("backward: root was not produced on this graph");
        if (core_->consumed) throw StateError("backward: graph already consumed");
        core_->consumed = true;
        s.grad.assign(1, T(1));
        for (auto it = core_->tape.rbegin(); it != core_->tape.rend(); ++it) (*it)();
    }

    const std::shared_ptr<GraphCore<T>>& core() const { return core_; }

private:
    std::shared_ptr<GraphCore<T>> core_;
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace advst
