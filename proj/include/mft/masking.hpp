#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "mft/autodiff.hpp"
#include "mft/tensor.hpp"

namespace mft::masking {

enum class MaskKind { Hard, Soft };

/// How gradients reach the scores: straight through the mask generator
/// (∂M/∂S treated as identity) or through the sigmoid derivative.
enum class GradMode { STE, TrueSigmoid };

std::string_view to_string(MaskKind kind);
std::string_view to_string(GradMode mode);
MaskKind parse_mask_kind(std::string_view text);
GradMode parse_grad_mode(std::string_view text);

struct MaskSpec {
    MaskKind kind = MaskKind::Soft;
    /// Fraction of entries masked out (Hard only).
    double sparsity_k = 0.0;
    /// Score initialization. Soft: every score starts at this constant.
    /// Hard: scores start at this offset plus 0.01·N(0, 1) noise.
    double init_value = 7.0;
    double temperature = 2.3;
    GradMode grad_mode = GradMode::TrueSigmoid;

    static MaskSpec soft(double init_value, double temperature, GradMode mode = GradMode::TrueSigmoid);
    static MaskSpec hard(double sparsity_k, double init_offset = 0.0);

    /// Throws ConfigError when the invariants do not hold.
    void validate() const;

    friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

/// Learnable scores paired one-to-one with a frozen weight.
struct ScoreMatrix {
    Tensor values;
    std::string paired_weight;
};

/// ⌊k·n⌋, the number of entries a hard mask zeroes out.
std::size_t masked_count(std::size_t n, double k);

/// Magnitude threshold of the hard mask: the smallest |S| that survives.
/// Returns 0 when nothing is masked and +inf when everything is.
double threshold_tau(const Tensor& scores, double k);

/// Binary mask with exactly ⌊k·n⌋ zeros at the smallest |S|, ties broken by
/// lower flat index first.
Tensor hard_mask(const Tensor& scores, double k);

/// σ(S / T) elementwise.
Tensor soft_mask(const Tensor& scores, double temperature);

Tensor compute_mask(const Tensor& scores, const MaskSpec& spec);

/// Straight-through rule: ∂L/∂S = ∂L/∂M.
Tensor grad_scores_ste(const Tensor& upstream);

/// ∂L/∂S = ∂L/∂M ⊙ M ⊙ (1 − M) / T with M = σ(S/T).
Tensor grad_scores_sigmoid(const Tensor& upstream, const Tensor& scores, double temperature);

ScoreMatrix init_scores(const Shape& shape, const MaskSpec& spec, std::mt19937_64& rng,
                        std::string paired_weight = {});

/// Records the mask generated from `scores` on the tape. The backward rule
/// dispatches to grad_scores_ste or grad_scores_sigmoid per the spec.
ad::Var mask_node(ad::Tape& tape, ad::Var scores, const MaskSpec& spec);

/// x · (W ⊙ M)ᵀ + b, with M regenerated from the current scores.
ad::Var masked_linear(ad::Tape& tape, ad::Var x, ad::Var weight, ad::Var scores, const MaskSpec& spec,
                      std::optional<ad::Var> bias = std::nullopt);

/// A frozen linear layer together with its mask parameters.
struct MaskedLinear {
    Tensor frozen_weight;
    std::optional<Tensor> bias;
    ScoreMatrix scores;
    MaskSpec spec;

    MaskedLinear(Tensor weight, std::optional<Tensor> bias, MaskSpec spec, std::mt19937_64& rng);

    Tensor effective_weight() const;
};

/// Forward pass of a masked layer outside of any training tape.
Tensor masked_forward(const MaskedLinear& layer, const Tensor& x);

} // namespace mft::masking
