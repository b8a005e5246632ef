#ifndef SEGLIFE_GRAPH_HPP
#define SEGLIFE_GRAPH_HPP

#include <functional>
#include <vector>

#include "seglife/tensor.hpp"

namespace seglife {

// Reverse-mode tape. Nodes are appended in execution order, which is already
// a topological order, so backward is a single reverse sweep.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int self)>;

    struct Node {
        Tensor value;
        std::vector<double> grad; // allocated only while needed
        bool needs_grad = false;
        Tensor* leaf = nullptr;   // set for externally owned leaves
        std::vector<int> inputs;
        BackwardFn backward;
    };

    // Externally owned tensor (parameter or input). Gradients accumulate
    // into t->grad after backward iff t->requires_grad.
    int leaf(Tensor* t) {
        Node n;
        n.value = *t;
        n.leaf = t;
        n.needs_grad = t->requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int constant(Tensor v) {
        Node n;
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int make_node(Tensor v, std::vector<int> inputs, BackwardFn fn) {
        if (!v.all_finite()) throw ContractError("operation produced non-finite values");
        Node n;
        n.value = std::move(v);
        n.inputs = std::move(inputs);
        n.backward = std::move(fn);
        for (int i : n.inputs)
            if (nodes_[static_cast<size_t>(i)].needs_grad) n.needs_grad = true;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    int size() const { return static_cast<int>(nodes_.size()); }

    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    // Accumulate into an input's gradient, skipping frozen branches.
    void accum(int id, size_t flat, double g) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.needs_grad) n.grad[flat] += g;
    }
    std::vector<double>* grad_of(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        return n.needs_grad ? &n.grad : nullptr;
    }

    // Reverse sweep from a scalar loss. Repeated calls accumulate into the
    // leaves' gradient buffers additively.
    void backward(int loss) {
        Node& ln = nodes_[static_cast<size_t>(loss)];
        if (ln.value.numel() != 1) throw ContractError("backward requires a scalar loss node");
        for (Node& n : nodes_) {
            if (n.needs_grad)
                n.grad.assign(n.value.data.size(), 0.0);
            else
                n.grad.clear();
        }
        if (!ln.needs_grad) return; // nothing trainable upstream
        ln.grad[0] = 1.0;
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.needs_grad && n.backward) n.backward(*this, id);
        }
        for (Node& n : nodes_) {
            if (n.leaf && n.leaf->requires_grad && n.needs_grad) {
                n.leaf->ensure_grad();
                auto& g = *n.leaf->grad;
                for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
            }
        }
    }

private:
    std::vector<Node> nodes_;
};

// Layer primitives (definitions in ops.cpp).
int conv2d(Graph& g, int input, int weight);
int conv1x1(Graph& g, int input, int weight);
int maxpool2(Graph& g, int input);
int upsample_bilinear2(Graph& g, int input);
int relu(Graph& g, int input);
int concat_channels(Graph& g, const std::vector<int>& inputs);
int softmax_channels(Graph& g, int input);
int sum_all(Graph& g, int input);

} // namespace seglife

#endif
