#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "mft/autodiff.hpp"

namespace mft::ad {

// Differentiable operations over tape variables. Matrix arguments are rank-2
// row-major tensors; every op validates shapes and throws ShapeError on
// mismatch, naming both shapes.

/// a[m×k] · b[k×n] -> [m×n]
Var matmul(Tape& tape, Var a, Var b);
/// x[N×in] · w[out×in]ᵀ (+ bias[out]) -> [N×out]
Var linear(Tape& tape, Var x, Var weight, std::optional<Var> bias = std::nullopt);

Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double factor);
Var sum(Tape& tape, Var a);

/// Logistic function, evaluated with the sign split so no exp() overflows.
Var sigmoid(Tape& tape, Var x);
Var silu(Tape& tape, Var x);
/// tanh approximation of GELU.
Var gelu(Tape& tape, Var x);

/// Row-wise RMS normalization with a learnable gain vector.
Var rms_norm(Tape& tape, Var x, Var gain, double eps = 1e-6);

/// Gathers rows of table[V×d] by index -> [N×d].
Var embedding(Tape& tape, Var table, std::span<const std::int32_t> ids);
/// Stacks a[n1×d] over b[n2×d].
Var concat_rows(Tape& tape, Var a, Var b);
/// Picks rows of x in the given order (rows may repeat).
Var select_rows(Tape& tape, Var x, std::span<const std::size_t> rows);

/// Multi-head causal self-attention over q, k, v of shape [batch·seq × dim],
/// rows ordered sequence-major within each batch item. Position t attends to
/// positions ≤ t of its own sequence only.
Var causal_attention(Tape& tape, Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads);

/// Mean over rows of −log softmax(logits)[target]. Returns a scalar.
Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const std::int32_t> targets);

/// Scalar logistic function shared by the op and the masking code.
double stable_sigmoid(double x) noexcept;

} // namespace mft::ad
