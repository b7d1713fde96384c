#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "csdnet/tensor.hpp"

namespace csdnet {

/// Node in the dynamically built computation graph.
///
/// `backward_fn`, when set, reads `grad` and accumulates into the grads of
/// `parents`. Leaves (parameters, constants) have no parents.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false; // grad tensor allocated and zeroed
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad();
};

/// Value-semantics handle onto a graph node.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node(std::move(n)) {}

    /// Leaf holding `v`; set `requires_grad` for trainable parameters.
    static Var leaf(Tensor v, bool requires_grad = false);

    bool defined() const { return node != nullptr; }
    const Tensor& value() const { return node->value; }
    Tensor& value() { return node->value; }
    Tensor& grad() { return node->ensure_grad(); }
    bool requires_grad() const { return node && node->requires_grad; }
    real item() const { return node->value[0]; }

    void zero_grad();

    std::shared_ptr<Node> node;
};

/// True when ops should record the tape. Thread-local so independent
/// models may train on separate threads.
bool grad_enabled();

/// RAII scope that disables tape recording (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Reverse-mode sweep from a scalar root. Seeds d(root)/d(root) = 1 and
/// accumulates into every reachable leaf with requires_grad.
void backward(const Var& root);

namespace detail {
/// Builds an op node; drops parents and backward when the tape is off or
/// no input requires grad, so inference graphs free eagerly.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw);
} // namespace detail

} // namespace csdnet
