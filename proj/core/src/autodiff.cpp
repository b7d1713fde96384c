#include "csdnet/autodiff.hpp"

#include <unordered_set>

#include "csdnet/errors.hpp"

namespace csdnet {

namespace {
thread_local int g_no_grad_depth = 0;
}

Tensor& Node::ensure_grad() {
    if (!grad_ready) {
        grad = Tensor(value.shape());
        grad_ready = true;
    }
    return grad;
}

Var Var::leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

void Var::zero_grad() {
    if (node && node->grad_ready) node->grad.zero();
}

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

void backward(const Var& root) {
    if (!root.defined()) throw Error("backward on undefined Var");
    if (root.node->value.numel() != 1)
        throw ShapeError("backward requires a scalar root, got " +
                         root.node->value.shape_str());

    // Iterative post-order DFS; reverse of the order is a valid topological
    // order for the backward sweep.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({root.node.get(), 0});
    seen.insert(root.node.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.n->parents.size()) {
            Node* child = f.n->parents[f.next_child++].get();
            if (child && child->requires_grad && seen.insert(child).second)
                stack.push_back({child, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root.node->ensure_grad();
    root.node->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
    }
}

namespace detail {

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
        for (const Var& v : inputs)
            if (v.defined() && v.node->requires_grad) needs = true;
    }
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        // Positional slots: undefined inputs stay as nullptr so backward
        // closures can index parents by argument position.
        for (Var& v : inputs) n->parents.push_back(v.node);
        n->backward_fn = std::move(bw);
    }
    return Var(std::move(n));
}

} // namespace detail

} // namespace csdnet
