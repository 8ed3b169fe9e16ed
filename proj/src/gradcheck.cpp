#include "mft/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mft/error.hpp"

namespace mft::ad {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
    Tape tape;
    const Var xv = tape.leaf_ref(x, false);
    const double value = tape.value(f(tape, xv)).item();
    if (!std::isfinite(value)) throw NumericalError("finite-difference probe produced a non-finite value");
    return value;
}

} // namespace

GradCheckReport finite_difference_check(const std::string& op_name, const ScalarFn& f, const Tensor& x,
                                        const GradCheckOptions& options) {
    Tape tape;
    const Var xv = tape.leaf_ref(x, true);
    const Var loss = f(tape, xv);
    if (!std::isfinite(tape.value(loss).item())) throw NumericalError(op_name + ": loss is not finite at x");
    tape.backward(loss);
    const Tensor analytic = tape.grad(xv);

    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.probes) {
        std::mt19937_64 rng(options.seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(options.probes);
    }

    GradCheckReport report{op_name, 0.0, 0.0, coords.size()};
    Tensor probe = x;
    for (auto i : coords) {
        const double orig = probe[i];
        probe[i] = orig + options.step;
        const double up = evaluate(f, probe);
        probe[i] = orig - options.step;
        const double down = evaluate(f, probe);
        probe[i] = orig;
        const double numeric = (up - down) / (2.0 * options.step);
        const double abs_err = std::abs(numeric - analytic[i]);
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        if (abs_err >= options.abs_fallback) {
            const double denom = std::max(std::abs(numeric), std::abs(analytic[i]));
            report.max_rel_error = std::max(report.max_rel_error, abs_err / denom);
        }
    }
    return report;
}

} // namespace mft::ad
