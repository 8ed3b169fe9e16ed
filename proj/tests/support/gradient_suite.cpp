#include "gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "mft/masking.hpp"
#include "mft/model.hpp"
#include "mft/ops.hpp"

namespace mft::testing {

namespace {

using ad::Tape;
using ad::Var;

// Contracts a tensor-valued output with fixed random weights so every output
// coordinate contributes a distinct gradient.
Var contract(Tape& tape, Var out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Var w = tape.constant(Tensor::randn(tape.value(out).shape(), rng));
    return ad::sum(tape, ad::mul(tape, out, w));
}

struct Case {
    const char* name;
    Shape shape;
    // Builds the loss around x; `rng` supplies the case's other operands.
    std::function<Var(Tape&, Var, std::mt19937_64&)> build;
    double stddev = 1.0;
};

void merge(ad::GradCheckReport& total, const ad::GradCheckReport& r) {
    total.max_rel_error = std::max(total.max_rel_error, r.max_rel_error);
    total.max_abs_error = std::max(total.max_abs_error, r.max_abs_error);
    total.probe_count += r.probe_count;
}

ad::GradCheckReport run_case(const Case& c, std::size_t min_probes) {
    ad::GradCheckReport total{c.name, 0.0, 0.0, 0};
    for (std::uint64_t trial = 0; total.probe_count < min_probes; ++trial) {
        std::mt19937_64 rng(1000 + trial);
        const Tensor x = Tensor::randn(c.shape, rng, c.stddev);
        const std::uint64_t operand_seed = 77 + trial;
        const ad::ScalarFn f = [&](Tape& tape, Var xv) {
            std::mt19937_64 op_rng(operand_seed);
            return c.build(tape, xv, op_rng);
        };
        ad::GradCheckOptions opt;
        opt.probes = min_probes;
        opt.seed = 31 + trial;
        merge(total, ad::finite_difference_check(c.name, f, x, opt));
    }
    return total;
}

Var randn_const(Tape& tape, Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
    return tape.constant(Tensor::randn(std::move(shape), rng, stddev));
}

std::vector<Case> op_cases() {
    const masking::MaskSpec soft = masking::MaskSpec::soft(0.5, 0.8);
    const masking::MaskSpec hard = masking::MaskSpec::hard(0.25);
    const std::vector<std::int32_t> ids{0, 3, 7, 3, 11, 2, 9, 0, 5, 6, 1, 3};
    std::vector<Case> cases;
    cases.push_back({"matmul.a", {10, 12}, [](Tape& t, Var x, auto& rng) {
                         return contract(t, ad::matmul(t, x, randn_const(t, {12, 7}, rng)), 1);
                     }});
    cases.push_back({"matmul.b", {12, 9}, [](Tape& t, Var x, auto& rng) {
                         return contract(t, ad::matmul(t, randn_const(t, {6, 12}, rng), x), 2);
                     }});
    cases.push_back({"linear.x", {10, 12}, [](Tape& t, Var x, auto& rng) {
                         const Var w = randn_const(t, {8, 12}, rng);
                         const Var b = randn_const(t, {8}, rng);
                         return contract(t, ad::linear(t, x, w, b), 3);
                     }});
    cases.push_back({"linear.weight", {9, 12}, [](Tape& t, Var x, auto& rng) {
                         return contract(t, ad::linear(t, randn_const(t, {7, 12}, rng), x), 4);
                     }});
    cases.push_back({"linear.bias", {25}, [](Tape& t, Var x, auto& rng) {
                         const Var in = randn_const(t, {6, 4}, rng);
                         return contract(t, ad::linear(t, in, randn_const(t, {25, 4}, rng), x), 5);
                     }});
    cases.push_back({"add", {10, 11}, [](Tape& t, Var x, auto& rng) {
                         return contract(t, ad::add(t, x, randn_const(t, {10, 11}, rng)), 6);
                     }});
    cases.push_back({"mul", {10, 11}, [](Tape& t, Var x, auto& rng) {
                         return contract(t, ad::mul(t, x, randn_const(t, {10, 11}, rng)), 7);
                     }});
    cases.push_back({"mul.self", {10, 11}, [](Tape& t, Var x, auto&) { return ad::sum(t, ad::mul(t, x, x)); }});
    cases.push_back({"scale", {10, 11}, [](Tape& t, Var x, auto&) { return contract(t, ad::scale(t, x, -1.7), 8); }});
    cases.push_back({"sum", {10, 11}, [](Tape& t, Var x, auto&) {
                         return ad::mul(t, ad::sum(t, x), ad::sum(t, x));
                     }});
    cases.push_back({"sigmoid", {10, 11}, [](Tape& t, Var x, auto&) { return contract(t, ad::sigmoid(t, x), 9); },
                     3.0});
    cases.push_back({"silu", {10, 11}, [](Tape& t, Var x, auto&) { return contract(t, ad::silu(t, x), 10); }, 3.0});
    cases.push_back({"gelu", {10, 11}, [](Tape& t, Var x, auto&) { return contract(t, ad::gelu(t, x), 11); }, 3.0});
    cases.push_back({"rms_norm.x", {10, 12}, [](Tape& t, Var x, auto& rng) {
                         return contract(t, ad::rms_norm(t, x, randn_const(t, {12}, rng)), 12);
                     }});
    cases.push_back({"rms_norm.gain", {12}, [](Tape& t, Var x, auto& rng) {
                         return contract(t, ad::rms_norm(t, randn_const(t, {9, 12}, rng), x), 13);
                     }});
    cases.push_back({"embedding", {12, 10}, [ids](Tape& t, Var x, auto&) {
                         return contract(t, ad::embedding(t, x, ids), 14);
                     }});
    cases.push_back({"concat_rows", {10, 11}, [](Tape& t, Var x, auto& rng) {
                         const Var other = randn_const(t, {3, 11}, rng);
                         return contract(t, ad::add(t, ad::concat_rows(t, other, x), ad::concat_rows(t, other, x)), 15);
                     }});
    cases.push_back({"select_rows", {10, 11}, [](Tape& t, Var x, auto&) {
                         const std::vector<std::size_t> rows{9, 0, 3, 3, 7, 1, 0, 8, 2, 5, 4, 6};
                         return contract(t, ad::select_rows(t, x, rows), 16);
                     }});
    for (int which = 0; which < 3; ++which) {
        static const char* names[] = {"causal_attention.q", "causal_attention.k", "causal_attention.v"};
        cases.push_back({names[which], {12, 12}, [which](Tape& t, Var x, auto& rng) {
                             Var qkv[3] = {randn_const(t, {12, 12}, rng), randn_const(t, {12, 12}, rng),
                                           randn_const(t, {12, 12}, rng)};
                             qkv[which] = x;
                             return contract(t, ad::causal_attention(t, qkv[0], qkv[1], qkv[2], 2, 6, 3), 17);
                         }});
    }
    cases.push_back({"softmax_cross_entropy", {20, 8}, [](Tape& t, Var x, auto&) {
                         std::vector<std::int32_t> targets;
                         for (int i = 0; i < 20; ++i) targets.push_back((i * 5 + 3) % 8);
                         return ad::softmax_cross_entropy(t, x, targets);
                     },
                     2.0});
    cases.push_back({"soft_mask.scores", {10, 12}, [soft](Tape& t, Var x, auto&) {
                         return contract(t, masking::mask_node(t, x, soft), 18);
                     },
                     2.0});
    // Full masked layer followed by the training loss, one case per leaf.
    auto layer_loss = [](Tape& t, Var x, Var w, Var s, Var b, const masking::MaskSpec& spec) {
        const Var h = masking::masked_linear(t, x, w, s, spec, b);
        std::vector<std::int32_t> targets;
        for (std::size_t i = 0; i < t.value(h).rows(); ++i) targets.push_back(static_cast<std::int32_t>((i * 3 + 1) % 10));
        return ad::softmax_cross_entropy(t, h, targets);
    };
    cases.push_back({"masked_layer.scores", {10, 12}, [=](Tape& t, Var s, auto& rng) {
                         const Var x = randn_const(t, {8, 12}, rng);
                         const Var w = randn_const(t, {10, 12}, rng);
                         const Var b = randn_const(t, {10}, rng);
                         return layer_loss(t, x, w, s, b, soft);
                     },
                     2.0});
    cases.push_back({"masked_layer.x", {10, 12}, [=](Tape& t, Var x, auto& rng) {
                         const Var w = randn_const(t, {10, 12}, rng);
                         const Var s = randn_const(t, {10, 12}, rng, 2.0);
                         const Var b = randn_const(t, {10}, rng);
                         return layer_loss(t, x, w, s, b, soft);
                     }});
    cases.push_back({"masked_layer.weight", {10, 12}, [=](Tape& t, Var w, auto& rng) {
                         const Var x = randn_const(t, {8, 12}, rng);
                         const Var s = randn_const(t, {10, 12}, rng, 2.0);
                         const Var b = randn_const(t, {10}, rng);
                         return layer_loss(t, x, w, s, b, soft);
                     }});
    cases.push_back({"masked_layer.bias", {10}, [=](Tape& t, Var b, auto& rng) {
                         const Var x = randn_const(t, {8, 12}, rng);
                         const Var w = randn_const(t, {10, 12}, rng);
                         const Var s = randn_const(t, {10, 12}, rng, 2.0);
                         return layer_loss(t, x, w, s, b, soft);
                     }});
    // The hard mask is piecewise constant in S; x and W still have exact
    // derivatives through the fixed mask.
    cases.push_back({"hard_masked_layer.x", {10, 12}, [=](Tape& t, Var x, auto& rng) {
                         const Var w = randn_const(t, {10, 12}, rng);
                         const Var s = randn_const(t, {10, 12}, rng);
                         const Var b = randn_const(t, {10}, rng);
                         return layer_loss(t, x, w, s, b, hard);
                     }});
    cases.push_back({"hard_masked_layer.weight", {10, 12}, [=](Tape& t, Var w, auto& rng) {
                         const Var x = randn_const(t, {8, 12}, rng);
                         const Var s = randn_const(t, {10, 12}, rng);
                         const Var b = randn_const(t, {10}, rng);
                         return layer_loss(t, x, w, s, b, hard);
                     }});
    return cases;
}

double model_loss(const model::ToyVLM& m, const model::Batch& batch, const std::vector<std::int32_t>& targets) {
    Tape tape;
    const auto fr = m.forward(tape, batch, model::Trainable::Nothing);
    return tape.value(ad::softmax_cross_entropy(tape, fr.logits, targets)).item();
}

// Scores of a small soft-masked model against central differences of the
// end-to-end loss.
ad::GradCheckReport model_case(std::size_t min_probes) {
    model::ModelConfig cfg;
    cfg.vocab_size = 16;
    cfg.embed_dim = 8;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.mlp_hidden_dim = 12;
    cfg.context_length = 8;
    cfg.vision_feature_dim = 4;
    cfg.vision_stub_dim = 6;
    auto m = model::ToyVLM::build(cfg, 3);
    auto placement = model::PlacementPolicy::both(cfg.num_layers);
    placement.targets.push_back(model::Projection::Projector);
    m.apply_placement(placement, masking::MaskSpec::soft(1.0, 0.7), 4);
    std::mt19937_64 rng(5);
    for (const auto& slot : m.masked_slots()) {
        auto& s = m.tensor("scores/" + slot);
        for (auto& v : s.data()) v += std::normal_distribution<double>(0.0, 1.0)(rng);
    }

    model::Batch batch;
    batch.batch = 2;
    batch.seq = 5;
    for (int i = 0; i < 10; ++i) batch.tokens.push_back((i * 7 + 2) % 16);
    batch.vision = Tensor::randn({2, 4}, rng);
    std::vector<std::int32_t> targets;
    for (int i = 0; i < 10; ++i) targets.push_back((i * 3 + 5) % 16);

    Tape tape;
    const auto fr = m.forward(tape, batch, model::Trainable::Scores);
    tape.backward(ad::softmax_cross_entropy(tape, fr.logits, targets));

    ad::GradCheckReport report{"model.forward.scores", 0.0, 0.0, 0};
    const auto slots = m.masked_slots();
    std::mt19937_64 pick(6);
    const double h = 1e-5;
    while (report.probe_count < min_probes) {
        const auto& slot = slots[pick() % slots.size()];
        const std::string name = "scores/" + slot;
        Tensor& s = m.tensor(name);
        const std::size_t i = pick() % s.size();
        const double analytic = tape.grad(fr.trainable.at(name))[i];
        const double orig = s[i];
        s[i] = orig + h;
        const double up = model_loss(m, batch, targets);
        s[i] = orig - h;
        const double down = model_loss(m, batch, targets);
        s[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double abs_err = std::abs(numeric - analytic);
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        if (abs_err >= 1e-7) {
            report.max_rel_error =
                std::max(report.max_rel_error, abs_err / std::max(std::abs(numeric), std::abs(analytic)));
        }
        ++report.probe_count;
    }
    return report;
}

} // namespace

std::vector<ad::GradCheckReport> run_gradient_suite(std::size_t min_probes) {
    std::vector<ad::GradCheckReport> reports;
    for (const auto& c : op_cases()) reports.push_back(run_case(c, min_probes));
    reports.push_back(model_case(min_probes));
    return reports;
}

} // namespace mft::testing
