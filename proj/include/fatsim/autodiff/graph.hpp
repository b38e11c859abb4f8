#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fatsim/autodiff/tensor.hpp"
#include "fatsim/error.hpp"

namespace fatsim::ad {

template <typename S>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename S>
struct Var {
    Graph<S>* graph = nullptr;
    std::size_t id = 0;

    const BasicTensor<S>& value() const { return graph->value(*this); }
    const Shape& shape() const { return value().shape; }
    const BasicTensor<S>& grad() const { return graph->grad(*this); }
};

/// Define-by-run tape. Nodes are appended in creation order, which is a
/// topological order, so backward is a single reverse sweep.
template <typename S>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var<S> leaf(BasicTensor<S> value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, true, {}, nullptr});
        return {this, nodes_.size() - 1};
    }

    Var<S> constant(BasicTensor<S> value) { return leaf(std::move(value), false); }

    /// Appends an op output. The backward rule is kept only when some input needs gradients.
    Var<S> record(BasicTensor<S> out, std::initializer_list<Var<S>> inputs, BackwardFn fn) {
        Node node{std::move(out), std::nullopt, false, false, {}, nullptr};
        for (const auto& v : inputs) {
            check_owner(v);
            node.inputs.push_back(v.id);
            node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
        }
        if (node.requires_grad) node.backward = std::move(fn);
        nodes_.push_back(std::move(node));
        return {this, nodes_.size() - 1};
    }

    const BasicTensor<S>& value(Var<S> v) const {
        check_owner(v);
        return nodes_[v.id].value;
    }

    bool requires_grad(Var<S> v) const {
        check_owner(v);
        return nodes_[v.id].requires_grad;
    }

    bool has_grad(Var<S> v) const {
        check_owner(v);
        return nodes_[v.id].grad.has_value();
    }

    const BasicTensor<S>& grad(Var<S> v) const {
        check_owner(v);
        const auto& g = nodes_[v.id].grad;
        if (!g) throw Error("grad: node " + std::to_string(v.id) + " has no gradient");
        return *g;
    }

    std::size_t size() const { return nodes_.size(); }

    // Used by backward rules.
    const BasicTensor<S>& node_value(std::size_t id) const { return nodes_[id].value; }
    const BasicTensor<S>& node_grad(std::size_t id) const { return *nodes_[id].grad; }
    std::size_t input_id(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }

    /// Gradient buffer of the k-th input of node `id`, or nullptr when that input needs none.
    BasicTensor<S>* input_grad(std::size_t id, std::size_t k) {
        Node& in = nodes_[nodes_[id].inputs[k]];
        if (!in.requires_grad) return nullptr;
        if (!in.grad) in.grad.emplace(in.value.shape, S(0));
        return &*in.grad;
    }

    void backward(Var<S> loss) {
        check_owner(loss);
        if (consumed_) throw Error("backward: graph already consumed; run a new forward pass first");
        Node& root = nodes_[loss.id];
        if (root.value.numel() != 1)
            throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root.value.shape));
        if (!root.value.all_finite()) throw NumericError("backward: loss is not finite");
        consumed_ = true;
        visit_order_.clear();
        if (!root.requires_grad) return;

        root.grad.emplace(root.value.shape, S(1));
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (node.is_leaf || !node.grad || !node.backward) continue;
            visit_order_.push_back(i);
            node.backward(*this, i);
            node.grad.reset();
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            Node& node = nodes_[i];
            if (!node.is_leaf || !node.requires_grad) continue;
            if (!node.grad) node.grad.emplace(node.value.shape, S(0));
            if (!node.grad->all_finite())
                throw NumericError("backward: non-finite gradient in leaf " + std::to_string(i));
        }
    }

    /// Op nodes visited by the last backward call, in visiting order.
    const std::vector<std::size_t>& backward_order() const { return visit_order_; }

private:
    struct Node {
        BasicTensor<S> value;
        std::optional<BasicTensor<S>> grad;
        bool requires_grad = false;
        bool is_leaf = false;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };

    void check_owner(Var<S> v) const {
        if (v.graph != this || v.id >= nodes_.size()) throw Error("graph: variable belongs to another graph");
    }

    std::vector<Node> nodes_;
    std::vector<std::size_t> visit_order_;
    bool consumed_ = false;
};

}  // namespace fatsim::ad
