#pragma once

#include <cstddef>
#include <vector>

#include "mft/gradcheck.hpp"

namespace mft::testing {

/// Finite-difference check of every differentiable op, the masked layer and a
/// full masked model forward pass. Each entry aggregates at least
/// `min_probes` probed coordinates.
std::vector<ad::GradCheckReport> run_gradient_suite(std::size_t min_probes = 100);

inline constexpr double kGradRelTol = 1e-4;
inline constexpr double kGradAbsTol = 1e-8;

} // namespace mft::testing
