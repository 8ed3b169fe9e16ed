#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string_view>
#include <vector>

#include "mft/tensor.hpp"

namespace mft::ad {

/// Handle to a value recorded on a Tape.
struct Var {
    static constexpr std::uint32_t invalid = std::numeric_limits<std::uint32_t>::max();
    std::uint32_t index = invalid;

    bool valid() const noexcept { return index != invalid; }
    friend bool operator==(Var, Var) = default;
};

class Tape;

/// Backward rule of a recorded node: receives the tape and the gradient of
/// the loss with respect to the node's output, and accumulates into the
/// gradient buffers of its inputs.
using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

/// Define-by-run reverse-mode tape. Nodes are appended in execution order,
/// so the recording order is already topological. A tape is meant to live for
/// one forward/backward pass.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Records a leaf that owns a copy of `value`.
    Var leaf(Tensor value, bool requires_grad);
    /// Records a leaf that refers to caller storage. The referenced tensor must
    /// outlive the tape and must not change while the tape is in use.
    Var leaf_ref(const Tensor& value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Records an operation result. The node requires a gradient when any of
    /// its inputs does.
    Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    std::string_view op_name(Var v) const;
    const std::vector<Var>& inputs(Var v) const;

    /// Gradient of the last backward pass; zeros when the node received none.
    Tensor grad(Var v) const;
    bool has_grad(Var v) const;
    /// Mutable gradient buffer, materialized as zeros on first access. Used by
    /// backward rules.
    Tensor& grad_buffer(Var v);

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    /// The loss must be a single-element value on this tape. A second call
    /// without reset() is rejected.
    void backward(Var loss);
    bool backward_done() const noexcept { return backward_done_; }

    /// Drops every gradient so backward() may run again on the same graph.
    void zero_grad();
    /// Drops all recorded nodes.
    void reset();

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        std::string_view op;
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor grad;
        std::vector<Var> inputs;
        BackwardFn backward;
        bool requires_grad = false;

        const Tensor& value() const { return external ? *external : owned; }
    };

    const Node& node(Var v) const;
    Node& node(Var v);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

} // namespace mft::ad
