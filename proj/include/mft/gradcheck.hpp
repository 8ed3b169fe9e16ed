#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "mft/autodiff.hpp"

namespace mft::ad {

struct GradCheckReport {
    std::string op_name;
    /// Largest |analytic − numeric| / max(|analytic|, |numeric|) over probes
    /// whose absolute error exceeds the absolute fallback tolerance.
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t probe_count = 0;

    bool passes(double rel_tol, double abs_tol) const noexcept {
        return max_rel_error < rel_tol || max_abs_error < abs_tol;
    }
};

struct GradCheckOptions {
    double step = 1e-5;
    /// Probed coordinates; all coordinates when the input is smaller.
    std::size_t probes = 100;
    /// Errors below this are treated as zero when computing max_rel_error.
    double abs_fallback = 1e-7;
    std::uint64_t seed = 0x5eed;
};

/// Builds a scalar loss on the given tape from the variable holding x.
using ScalarFn = std::function<Var(Tape&, Var x)>;

/// Compares the tape gradient of f at x against central finite differences
/// (f(x + h·e_i) − f(x − h·e_i)) / 2h on randomly chosen coordinates.
/// Throws NumericalError when f evaluates to a non-finite value.
GradCheckReport finite_difference_check(const std::string& op_name, const ScalarFn& f, const Tensor& x,
                                        const GradCheckOptions& options = {});

} // namespace mft::ad
