#include <doctest.h>

#include <cmath>
#include <random>

#include "mft/autodiff.hpp"
#include "mft/error.hpp"
#include "mft/gradcheck.hpp"
#include "mft/ops.hpp"
#include "support/gradient_suite.hpp"

using namespace mft;
using ad::Tape;
using ad::Var;

TEST_CASE("tensor shape and data agree") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("matmul identity cases") {
    Tape tape;
    const Var eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    const Var x = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    const Tensor left = tape.value(ad::matmul(tape, eye, x));
    const Tensor right = tape.value(ad::matmul(tape, x, eye));
    CHECK(left == Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK(right == Tensor({2, 2}, {1, 2, 3, 4}));
    const Var bad = tape.constant(Tensor({3, 2}, 0.0));
    CHECK_THROWS_AS(ad::matmul(tape, x, bad), ShapeError);
}

TEST_CASE("matmul gradient on a 3x4 by 4x2 product") {
    std::mt19937_64 rng(1);
    const Tensor b = Tensor::randn({4, 2}, rng);
    const auto r = ad::finite_difference_check(
        "matmul",
        [&](Tape& t, Var a) { return ad::sum(t, ad::mul(t, ad::matmul(t, a, t.constant(b)), ad::matmul(t, a, t.constant(b)))); },
        Tensor::randn({3, 4}, rng));
    CHECK(r.probe_count == 12);
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("elementwise product") {
    std::mt19937_64 rng(2);
    const Tensor a = Tensor::randn({4, 4}, rng);
    const Tensor b = Tensor::randn({4, 4}, rng);
    Tape tape;
    const Var av = tape.leaf(a, true);
    const Var bv = tape.constant(b);
    CHECK(tape.value(ad::mul(tape, av, tape.constant(Tensor::ones({4, 4})))) == a);
    CHECK(tape.value(ad::mul(tape, av, tape.constant(Tensor::zeros({4, 4})))) == Tensor::zeros({4, 4}));
    tape.backward(ad::sum(tape, ad::mul(tape, av, bv)));
    CHECK(tape.grad(av) == b);
}

TEST_CASE("sigmoid values") {
    Tape tape;
    const Var x = tape.constant(Tensor({3}, {0.0, -50.0, 3.0435}));
    const Tensor y = tape.value(ad::sigmoid(tape, x));
    CHECK(y[0] == 0.5);
    CHECK(y[1] < 1e-20);
    CHECK(std::isfinite(y[1]));
    CHECK(std::abs(y[2] - 0.9545010719554212780871) < 1e-9);
    CHECK(ad::stable_sigmoid(-800.0) == 0.0);
    CHECK(ad::stable_sigmoid(800.0) == 1.0);
}

TEST_CASE("cross entropy limits") {
    const std::size_t V = 256;
    Tape tape;
    const std::vector<std::int32_t> targets{3, 200};
    const Var uniform = tape.constant(Tensor({2, V}, 0.25));
    CHECK(std::abs(tape.value(ad::softmax_cross_entropy(tape, uniform, targets)).item() - std::log(256.0)) < 1e-12);
    Tensor peaked({2, V}, 0.0);
    peaked.at(0, 3) = 30.0;
    peaked.at(1, 200) = 30.0;
    CHECK(tape.value(ad::softmax_cross_entropy(tape, tape.constant(peaked), targets)).item() < 1e-10);
    const std::vector<std::int32_t> out_of_range{3, 256};
    CHECK_THROWS_AS(ad::softmax_cross_entropy(tape, uniform, out_of_range), ConfigError);
}

TEST_CASE("cross entropy gradient on a 2x5 case") {
    std::mt19937_64 rng(3);
    const std::vector<std::int32_t> targets{1, 4};
    const auto r = ad::finite_difference_check(
        "xent", [&](Tape& t, Var x) { return ad::softmax_cross_entropy(t, x, targets); }, Tensor::randn({2, 5}, rng));
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("backward accumulates analytic gradients") {
    std::mt19937_64 rng(4);
    const Tensor x = Tensor::randn({3, 5}, rng);
    {
        Tape tape;
        const Var xv = tape.leaf(x, true);
        tape.backward(ad::sum(tape, xv));
        CHECK(tape.grad(xv) == Tensor::ones({3, 5}));
    }
    {
        Tape tape;
        const Var xv = tape.leaf(x, true);
        tape.backward(ad::sum(tape, ad::mul(tape, xv, xv)));
        const Tensor g = tape.grad(xv);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(g[i] == 2.0 * x[i]);
    }
}

TEST_CASE("tape ordering and backward contract") {
    Tape tape;
    const Var a = tape.leaf(Tensor::scalar(2.0), true);
    const Var b = ad::mul(tape, a, a);
    const Var c = ad::add(tape, b, a);
    for (std::uint32_t i = 0; i < tape.size(); ++i) {
        for (Var in : tape.inputs(Var{i})) CHECK(in.index < i);
    }
    const Var wide = tape.leaf(Tensor({2}, 1.0), true);
    CHECK_THROWS_AS(tape.backward(wide), ConfigError);
    tape.backward(c);
    CHECK(tape.grad(a).item() == 5.0);
    CHECK_THROWS(tape.backward(c));
    tape.zero_grad();
    tape.backward(c);
    CHECK(tape.grad(a).item() == 5.0);
}

TEST_CASE("gradient checker reference cases") {
    std::mt19937_64 rng(5);
    const auto s = ad::finite_difference_check("sum", [](Tape& t, Var x) { return ad::sum(t, x); },
                                               Tensor::randn({4, 4}, rng));
    CHECK(s.max_rel_error < 1e-10);
    CHECK(s.probe_count >= 1);

    Tape tape;
    const Var x = tape.leaf(Tensor::zeros({6}), true);
    tape.backward(ad::sum(tape, ad::sigmoid(tape, x)));
    const Tensor g = tape.grad(x);
    for (double v : g.data()) CHECK(std::abs(v - 0.25) < 1e-7);
}

TEST_CASE("gradient oracle suite") {
    for (const auto& r : testing::run_gradient_suite(100)) {
        CAPTURE(r.op_name);
        CAPTURE(r.max_rel_error);
        CAPTURE(r.max_abs_error);
        CHECK(r.probe_count >= 100);
        CHECK(r.passes(testing::kGradRelTol, testing::kGradAbsTol));
    }
}
