#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pcpmae/rng.hpp"

namespace pcpmae {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline Shape strides_of(const Shape& s) {
    Shape st(s.size(), 1);
    for (std::int64_t i = static_cast<std::int64_t>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * s[i + 1];
    return st;
}

// One value in the computation graph. Forward construction fills `value`;
// backward() fills `grad` for every node that requires it. A node made by
// stop_gradient has no parents and no backward function.
template <class Real>
struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // sized lazily by backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    std::int64_t numel() const { return numel_of(shape); }
};

// Value-semantic handle over a graph node. Copies share the node.
template <class Real>
class Tensor {
public:
    Tensor() : n_(std::make_shared<Node<Real>>()) {}

    static Tensor from_data(Shape shape, std::vector<Real> data) {
        if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) +
                                        " does not match data length " +
                                        std::to_string(data.size()));
        Tensor t;
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        return t;
    }

    static Tensor zeros(Shape shape) {
        auto n = numel_of(shape);
        return from_data(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), Real(0)));
    }

    static Tensor full(Shape shape, Real v) {
        auto n = numel_of(shape);
        return from_data(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), v));
    }

    static Tensor scalar(Real v) { return from_data({1}, {v}); }

    // Trainable leaf.
    static Tensor param(Shape shape, std::vector<Real> data) {
        Tensor t = from_data(std::move(shape), std::move(data));
        t.n_->requires_grad = true;
        t.n_->op = "param";
        return t;
    }

    const Shape& shape() const { return n_->shape; }
    std::int64_t numel() const { return n_->numel(); }
    std::int64_t dim(std::size_t i) const { return n_->shape[i]; }
    std::size_t rank() const { return n_->shape.size(); }

    std::vector<Real>& data() { return n_->value; }
    const std::vector<Real>& data() const { return n_->value; }
    std::vector<Real>& grad() { return n_->grad; }
    const std::vector<Real>& grad() const { return n_->grad; }
    bool requires_grad() const { return n_->requires_grad; }

    Real item() const {
        if (numel() != 1)
            throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(numel()) +
                                        " elements, expected 1");
        return n_->value[0];
    }

    std::shared_ptr<Node<Real>> node() const { return n_; }

    void zero_grad() { n_->grad.assign(n_->value.size(), Real(0)); }

private:
    std::shared_ptr<Node<Real>> n_;
};

namespace detail {

// Reverse topological order of the graph reachable from `root` through
// parent edges, computed iteratively.
template <class Real>
std::vector<Node<Real>*> topo_order(Node<Real>* root) {
    std::vector<Node<Real>*> order;
    std::unordered_set<Node<Real>*> visited;
    struct Frame {
        Node<Real>* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node<Real>* p = f.node->parents[f.next_parent++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    return order;  // parents before children; iterate in reverse for backprop
}

}  // namespace detail

// Reverse-mode accumulation from a scalar loss. Gradient buffers of every
// reachable node are reset first, so repeated calls do not mix runs.
template <class Real>
void backward(const Tensor<Real>& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape()));
    auto order = detail::topo_order(loss.node().get());
    for (auto* n : order)
        if (n->requires_grad) n->grad.assign(n->value.size(), Real(0));
    Node<Real>* root = loss.node().get();
    if (!root->requires_grad) return;  // loss does not depend on any parameter
    root->grad.assign(1, Real(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<Real>* n = *it;
        if (n->backward && n->requires_grad) n->backward(*n);
    }
}

// Ordered collection of named trainable tensors. Insertion order is the
// canonical order for serialization and optimizer state.
template <class Real>
class ParamStore {
public:
    Tensor<Real> add(const std::string& name, Tensor<Real> t) {
        if (index_.count(name))
            throw std::invalid_argument("ParamStore: duplicate parameter name '" + name + "'");
        index_[name] = entries_.size();
        entries_.push_back({name, t});
        return t;
    }

    Tensor<Real> add_param(const std::string& name, Shape shape, std::vector<Real> data) {
        return add(name, Tensor<Real>::param(std::move(shape), std::move(data)));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<Real>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::out_of_range("ParamStore: no parameter named '" + name + "'");
        return entries_[it->second].tensor;
    }

    const Tensor<Real>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::out_of_range("ParamStore: no parameter named '" + name + "'");
        return entries_[it->second].tensor;
    }

    std::size_t size() const { return entries_.size(); }

    std::int64_t total_params() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

    struct Entry {
        std::string name;
        Tensor<Real> tensor;
    };
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// backward() plus collection of the per-parameter gradients by name.
// Parameters not reachable from the loss map to zero arrays.
template <class Real>
std::map<std::string, std::vector<Real>> backward_gradients(const Tensor<Real>& loss,
                                                            ParamStore<Real>& params) {
    params.zero_grad();
    backward(loss);
    std::map<std::string, std::vector<Real>> out;
    for (auto& e : params.entries()) out[e.name] = e.tensor.grad();
    return out;
}

}  // namespace pcpmae
