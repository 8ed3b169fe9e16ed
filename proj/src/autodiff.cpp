#include "mft/autodiff.hpp"

#include "mft/error.hpp"

namespace mft::ad {

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf_ref(const Tensor& value, bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.external = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (auto in : inputs) needs = needs || node(in).requires_grad;
    Node n;
    n.op = op;
    n.owned = std::move(value);
    n.inputs = std::move(inputs);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.index >= nodes_.size()) throw ConfigError("variable does not belong to this tape");
    return nodes_[v.index];
}

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || v.index >= nodes_.size()) throw ConfigError("variable does not belong to this tape");
    return nodes_[v.index];
}

const Tensor& Tape::value(Var v) const { return node(v).value(); }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }
std::string_view Tape::op_name(Var v) const { return node(v).op; }
const std::vector<Var>& Tape::inputs(Var v) const { return node(v).inputs; }

bool Tape::has_grad(Var v) const { return !node(v).grad.empty(); }

Tensor Tape::grad(Var v) const {
    const auto& n = node(v);
    if (n.grad.empty()) return Tensor::zeros(n.value().shape());
    return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
    auto& n = node(v);
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value().shape());
    return n.grad;
}

void Tape::backward(Var loss) {
    if (backward_done_) throw ConfigError("backward() already ran on this tape; call zero_grad() or reset() first");
    const auto& l = node(loss);
    if (l.value().size() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + to_string(l.value().shape()));
    }
    backward_done_ = true;
    if (!l.requires_grad) return;
    grad_buffer(loss).fill(1.0);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
        // The rule may grow the gradient buffers of earlier nodes but never
        // touches this node's own buffer, so the reference stays valid.
        n.backward(*this, n.grad);
    }
}

void Tape::zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor();
    backward_done_ = false;
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

} // namespace mft::ad
