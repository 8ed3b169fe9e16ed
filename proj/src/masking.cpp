#include "mft/masking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mft/error.hpp"
#include "mft/ops.hpp"

namespace mft::masking {

std::string_view to_string(MaskKind kind) {
    return kind == MaskKind::Hard ? "hard" : "soft";
}

std::string_view to_string(GradMode mode) {
    return mode == GradMode::STE ? "ste" : "sigmoid";
}

MaskKind parse_mask_kind(std::string_view text) {
    if (text == "hard") return MaskKind::Hard;
    if (text == "soft") return MaskKind::Soft;
    throw ConfigError("unknown mask kind '" + std::string(text) + "' (expected hard or soft)");
}

GradMode parse_grad_mode(std::string_view text) {
    if (text == "ste") return GradMode::STE;
    if (text == "sigmoid") return GradMode::TrueSigmoid;
    throw ConfigError("unknown gradient mode '" + std::string(text) + "' (expected ste or sigmoid)");
}

MaskSpec MaskSpec::soft(double init_value, double temperature, GradMode mode) {
    MaskSpec s;
    s.kind = MaskKind::Soft;
    s.init_value = init_value;
    s.temperature = temperature;
    s.grad_mode = mode;
    s.validate();
    return s;
}

MaskSpec MaskSpec::hard(double sparsity_k, double init_offset) {
    MaskSpec s;
    s.kind = MaskKind::Hard;
    s.sparsity_k = sparsity_k;
    s.init_value = init_offset;
    s.grad_mode = GradMode::STE;
    s.validate();
    return s;
}

void MaskSpec::validate() const {
    if (!std::isfinite(init_value)) throw ConfigError("mask init value must be finite");
    if (kind == MaskKind::Hard) {
        if (grad_mode != GradMode::STE) throw ConfigError("hard masks only support the ste gradient mode");
        if (!(sparsity_k >= 0.0 && sparsity_k <= 1.0)) {
            throw ConfigError("hard mask sparsity must lie in [0, 1], got " + std::to_string(sparsity_k));
        }
    } else if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError("soft mask temperature must be positive, got " + std::to_string(temperature));
    }
}

std::size_t masked_count(std::size_t n, double k) {
    if (!(k >= 0.0 && k <= 1.0)) throw ConfigError("sparsity must lie in [0, 1], got " + std::to_string(k));
    // long double keeps ⌊k·n⌋ exact for the products that are integral in
    // decimal (0.29·100 is 28.999… in double).
    const auto prod = static_cast<long double>(k) * static_cast<long double>(n);
    const auto z = static_cast<std::size_t>(std::floor(prod + 1e-12L));
    return std::min(z, n);
}

namespace {

// Flat indices ordered by ascending |S|, ties by ascending index.
std::vector<std::size_t> magnitude_order(const Tensor& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(scores[a]) < std::abs(scores[b]); });
    return order;
}

void require_nonempty(const Tensor& scores) {
    if (scores.empty()) throw ConfigError("score matrix is empty");
}

} // namespace

double threshold_tau(const Tensor& scores, double k) {
    require_nonempty(scores);
    const std::size_t z = masked_count(scores.size(), k);
    if (z == 0) return 0.0;
    if (z == scores.size()) return std::numeric_limits<double>::infinity();
    const auto order = magnitude_order(scores);
    return std::abs(scores[order[z]]);
}

Tensor hard_mask(const Tensor& scores, double k) {
    require_nonempty(scores);
    const std::size_t z = masked_count(scores.size(), k);
    Tensor mask = Tensor::ones(scores.shape());
    if (z == 0) return mask;
    const auto order = magnitude_order(scores);
    for (std::size_t i = 0; i < z; ++i) mask[order[i]] = 0.0;
    return mask;
}

Tensor soft_mask(const Tensor& scores, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("soft mask temperature must be positive, got " + std::to_string(temperature));
    Tensor mask = scores;
    for (auto& v : mask.data()) v = ad::stable_sigmoid(v / temperature);
    return mask;
}

Tensor compute_mask(const Tensor& scores, const MaskSpec& spec) {
    return spec.kind == MaskKind::Hard ? hard_mask(scores, spec.sparsity_k) : soft_mask(scores, spec.temperature);
}

Tensor grad_scores_ste(const Tensor& upstream) {
    return upstream;
}

Tensor grad_scores_sigmoid(const Tensor& upstream, const Tensor& scores, double temperature) {
    if (!upstream.same_shape(scores)) {
        throw ShapeError("grad_scores_sigmoid: " + mft::to_string(upstream.shape()) + " vs " + mft::to_string(scores.shape()));
    }
    const Tensor mask = soft_mask(scores, temperature);
    Tensor out = upstream;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i] * (1.0 - mask[i]) / temperature;
    return out;
}

ScoreMatrix init_scores(const Shape& shape, const MaskSpec& spec, std::mt19937_64& rng, std::string paired_weight) {
    spec.validate();
    ScoreMatrix s{Tensor(shape, spec.init_value), std::move(paired_weight)};
    if (spec.kind == MaskKind::Hard) {
        std::normal_distribution<double> noise(0.0, 1.0);
        for (auto& v : s.values.data()) v += 0.01 * noise(rng);
    }
    return s;
}

ad::Var mask_node(ad::Tape& tape, ad::Var scores, const MaskSpec& spec) {
    Tensor mask = compute_mask(tape.value(scores), spec);
    const std::string_view name = spec.kind == MaskKind::Hard ? "hard_mask" : "soft_mask";
    return tape.record(name, std::move(mask), {scores}, [scores, spec](ad::Tape& t, const Tensor& g) {
        auto& gs = t.grad_buffer(scores);
        const Tensor contrib = spec.grad_mode == GradMode::STE
                                   ? grad_scores_ste(g)
                                   : grad_scores_sigmoid(g, t.value(scores), spec.temperature);
        for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += contrib[i];
    });
}

ad::Var masked_linear(ad::Tape& tape, ad::Var x, ad::Var weight, ad::Var scores, const MaskSpec& spec,
                      std::optional<ad::Var> bias) {
    if (!tape.value(weight).same_shape(tape.value(scores))) {
        throw ShapeError("masked_linear: scores " + mft::to_string(tape.value(scores).shape()) +
                         " do not pair with weight " + mft::to_string(tape.value(weight).shape()));
    }
    const ad::Var mask = mask_node(tape, scores, spec);
    const ad::Var effective = ad::mul(tape, weight, mask);
    return ad::linear(tape, x, effective, bias);
}

MaskedLinear::MaskedLinear(Tensor weight, std::optional<Tensor> b, MaskSpec s, std::mt19937_64& rng)
    : frozen_weight(std::move(weight)), bias(std::move(b)), spec(s) {
    if (frozen_weight.rank() != 2) throw ShapeError("masked layer weight must be a matrix, got " + mft::to_string(frozen_weight.shape()));
    scores = init_scores(frozen_weight.shape(), spec, rng);
}

Tensor MaskedLinear::effective_weight() const {
    Tensor w = frozen_weight;
    const Tensor m = compute_mask(scores.values, spec);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= m[i];
    return w;
}

Tensor masked_forward(const MaskedLinear& layer, const Tensor& x) {
    ad::Tape tape;
    const auto xv = tape.leaf_ref(x, false);
    const auto wv = tape.leaf_ref(layer.frozen_weight, false);
    const auto sv = tape.leaf_ref(layer.scores.values, false);
    std::optional<ad::Var> bv;
    if (layer.bias) bv = tape.leaf_ref(*layer.bias, false);
    return tape.value(masked_linear(tape, xv, wv, sv, layer.spec, bv));
}

} // namespace mft::masking
