#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mft/error.hpp"
#include "mft/masking.hpp"
#include "mft/ops.hpp"

using namespace mft;
using namespace mft::masking;

namespace {

// Independent reference: sort (|S|, index) pairs and zero the first ⌊k·n⌋.
Tensor brute_force_hard_mask(const Tensor& s, double k) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(s[a]) < std::abs(s[b]); });
    const auto z = static_cast<std::size_t>(std::floor(k * static_cast<double>(s.size())));
    Tensor m(s.shape(), 1.0);
    for (std::size_t i = 0; i < z; ++i) m[order[i]] = 0.0;
    return m;
}

std::size_t zeros(const Tensor& m) { return static_cast<std::size_t>(std::count(m.data().begin(), m.data().end(), 0.0)); }

} // namespace

TEST_CASE("threshold and hard mask on a 2x2 example") {
    const Tensor s({2, 2}, {3, 1, 0.5, 2});
    CHECK(threshold_tau(s, 0.25) == 1.0);
    CHECK(hard_mask(s, 0.25) == Tensor({2, 2}, {1, 1, 0, 1}));
    CHECK(hard_mask(s, 0.0) == Tensor::ones({2, 2}));
    CHECK(threshold_tau(s, 0.0) == 0.0);
    CHECK(hard_mask(s, 1.0) == Tensor::zeros({2, 2}));
    CHECK(std::isinf(threshold_tau(s, 1.0)));
}

TEST_CASE("hard mask ties at the cut") {
    const Tensor s({2, 3}, {1.0, -1.0, 1.0, 2.0, 1.0, -1.0});
    for (double k : {0.2, 0.34, 0.5, 0.67, 0.8}) {
        const Tensor m = hard_mask(s, k);
        CHECK(zeros(m) == masked_count(6, k));
        CHECK(m == brute_force_hard_mask(s, k));
    }
}

TEST_CASE("hard mask property sweep") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> dim(1, 12);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const Shape shape{dim(rng), dim(rng)};
        Tensor s = Tensor::randn(shape, rng);
        if (trial % 3 == 0) {
            for (auto& v : s.data()) v = std::round(v * 2.0) / 2.0; // many equal magnitudes
        }
        const double k1 = unit(rng), k2 = unit(rng);
        const double lo = std::min(k1, k2), hi = std::max(k1, k2);
        const Tensor m_lo = hard_mask(s, lo), m_hi = hard_mask(s, hi);
        CAPTURE(trial);
        REQUIRE(zeros(m_lo) == static_cast<std::size_t>(std::floor(lo * static_cast<double>(s.size()))));
        REQUIRE(m_lo == brute_force_hard_mask(s, lo));
        for (std::size_t i = 0; i < s.size(); ++i) REQUIRE(m_hi[i] <= m_lo[i]);
    }
}

TEST_CASE("soft mask values") {
    CHECK(soft_mask(Tensor({1}, 0.0), 1.3)[0] == 0.5);
    CHECK(std::abs(soft_mask(Tensor({1}, 7.0), 2.3)[0] - 0.9545001278422758411) < 1e-12);
    CHECK(std::abs(soft_mask(Tensor({1}, 7.0), 0.5)[0] - 0.9999991684719723359) < 1e-12);
    CHECK(std::abs(soft_mask(Tensor({1}, 3.0), 0.5)[0] - 0.9975273768433652257) < 1e-12);
    CHECK(soft_mask(Tensor({1}, -6.0), 2.0)[0] == doctest::Approx(1.0 - ad::stable_sigmoid(3.0)).epsilon(1e-15));
}

TEST_CASE("mask spec invariants") {
    CHECK_NOTHROW(MaskSpec::hard(0.3).validate());
    CHECK_NOTHROW(MaskSpec::soft(7.0, 2.3).validate());
    CHECK_THROWS_AS(MaskSpec::soft(7.0, 0.0), ConfigError);
    MaskSpec bad_t = MaskSpec::soft(7.0, 1.0);
    bad_t.temperature = -1.0;
    CHECK_THROWS_AS(bad_t.validate(), ConfigError);
    MaskSpec hard_sigmoid = MaskSpec::hard(0.1);
    hard_sigmoid.grad_mode = GradMode::TrueSigmoid;
    CHECK_THROWS_AS(hard_sigmoid.validate(), ConfigError);
    CHECK_THROWS_AS(MaskSpec::hard(1.5).validate(), ConfigError);
    CHECK(parse_mask_kind(to_string(MaskKind::Hard)) == MaskKind::Hard);
    CHECK(parse_grad_mode(to_string(GradMode::TrueSigmoid)) == GradMode::TrueSigmoid);
    CHECK_THROWS_AS(parse_mask_kind("medium"), ConfigError);
}

TEST_CASE("score initialization") {
    std::mt19937_64 rng(1);
    const auto soft = init_scores({3, 5}, MaskSpec::soft(7.0, 2.3), rng, "w");
    CHECK(soft.values.shape() == Shape{3, 5});
    CHECK(soft.paired_weight == "w");
    for (double v : soft.values.data()) CHECK(v == 7.0);
    const auto hard = init_scores({8, 8}, MaskSpec::hard(0.2), rng);
    for (double v : hard.values.data()) {
        CHECK(std::isfinite(v));
        CHECK(std::abs(v) < 0.1);
    }
    const auto zero = init_scores({2, 2}, MaskSpec::soft(0.0, 1.0), rng);
    CHECK(soft_mask(zero.values, 1.0) == Tensor({2, 2}, 0.5));
}

TEST_CASE("masked layer forward") {
    std::mt19937_64 rng(2);
    const Tensor w = Tensor::randn({4, 4}, rng);
    const Tensor b = Tensor::randn({4}, rng);
    const Tensor x = Tensor::randn({3, 4}, rng);

    MaskedLinear ones(w, b, MaskSpec::hard(0.0), rng);
    Tensor frozen({3, 4}, 0.0);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t o = 0; o < 4; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < 4; ++i) acc += x.at(r, i) * w.at(o, i);
            frozen.at(r, o) = acc + b[o];
        }
    }
    CHECK(max_abs_diff(masked_forward(ones, x), frozen) < 1e-14);

    MaskedLinear none(w, b, MaskSpec::hard(1.0), rng);
    const Tensor out = masked_forward(none, x);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t o = 0; o < 4; ++o) CHECK(out.at(r, o) == b[o]);
    }

    MaskedLinear soft(w, std::nullopt, MaskSpec::soft(0.3, 0.9), rng);
    soft.scores.values = Tensor::randn({4, 4}, rng, 2.0);
    Tensor expect({3, 4}, 0.0);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t o = 0; o < 4; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                const double m = 1.0 / (1.0 + std::exp(-soft.scores.values.at(o, i) / 0.9));
                acc += x.at(r, i) * w.at(o, i) * m;
            }
            expect.at(r, o) = acc;
        }
    }
    CHECK(max_abs_diff(masked_forward(soft, x), expect) < 1e-13);
}

TEST_CASE("straight-through and sigmoid score gradients") {
    std::mt19937_64 rng(3);
    const Tensor g = Tensor::randn({3, 3}, rng);
    CHECK(grad_scores_ste(g) == g);
    CHECK(grad_scores_ste(Tensor::zeros({3, 3})) == Tensor::zeros({3, 3}));
    const Tensor ones = Tensor::ones({2, 2});
    CHECK(grad_scores_sigmoid(ones, Tensor::zeros({2, 2}), 1.0) == Tensor({2, 2}, 0.25));
    const Tensor high = grad_scores_sigmoid(ones, Tensor({2, 2}, 50.0), 1.0);
    const Tensor low = grad_scores_sigmoid(ones, Tensor({2, 2}, -100.0), 2.0);
    for (double v : high.data()) CHECK(std::abs(v) < 1e-20);
    for (double v : low.data()) CHECK(std::abs(v) < 1e-20);
}

TEST_CASE("hard mask score gradient follows the chain rule through W") {
    std::mt19937_64 rng(4);
    const Tensor w = Tensor::randn({3, 3}, rng);
    const Tensor s = Tensor::randn({3, 3}, rng);
    const Tensor x = Tensor::randn({5, 3}, rng);
    ad::Tape tape;
    const auto sv = tape.leaf(s, true);
    const auto wv = tape.constant(w);
    const auto mask = mask_node(tape, sv, MaskSpec::hard(1.0 / 3.0));
    const auto eff = ad::mul(tape, wv, mask);
    const auto out = ad::linear(tape, tape.constant(x), eff);
    tape.backward(ad::sum(tape, ad::mul(tape, out, out)));
    // ∂L/∂W′ = 2·outᵀ·x, computed by hand.
    const Tensor o = tape.value(out);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            double gw = 0.0;
            for (std::size_t n = 0; n < 5; ++n) gw += 2.0 * o.at(n, r) * x.at(n, c);
            CHECK(tape.grad(sv).at(r, c) == doctest::Approx(gw * w.at(r, c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("masked layer rejects mismatched scores") {
    ad::Tape tape;
    const auto x = tape.constant(Tensor({2, 3}, 1.0));
    const auto w = tape.constant(Tensor({4, 3}, 1.0));
    const auto s = tape.constant(Tensor({3, 4}, 1.0));
    CHECK_THROWS_AS(masked_linear(tape, x, w, s, MaskSpec::soft(1.0, 1.0)), ShapeError);
}
