#pragma once

#include "npmle/kernels.hpp"
#include "npmle/model.hpp"
#include "npmle/solver.hpp"
#include "npmle/support.hpp"

#include <optional>
#include <string>

namespace npmle {

inline constexpr std::size_t kDefaultKernelCap = 50'000'000;

struct FitOptions {
    RegionMode region = RegionMode::Auto;
    std::optional<double> delta; ///< unset: default_delta for the data
    SolverConfig solver;
    std::size_t grid_cap = kDefaultGridCap;
    /// Limit on n·m kernel entries; each entry costs 16 bytes (log and shifted copies).
    std::size_t kernel_cap = kDefaultKernelCap;
};

/// Everything produced by support → grid → kernel → solve → prune.
struct FitOutput {
    Region region;
    GridSpec grid;
    SolveResult solve;          ///< weights over the full grid
    MixingMeasure measure;      ///< atoms with positive weight, grid order
    std::optional<double> bound; ///< discretization bound, when δ is inside its validity range
};

/// Runs the whole fitting pipeline. A solver that misses its dual-gap target
/// still yields a result; check solve.certificate.converged.
inline FitOutput fit_npmle(const Dataset& data, const FitOptions& options = {}) {
    Region region = support_region(data, options.region);
    const double delta = options.delta ? *options.delta
                                       : default_delta(data.dim(), data.size(), data.k_lower(), region.diameter);
    GridSpec grid = build_grid(region, delta, options.grid_cap);
    require(static_cast<double>(grid.size()) * static_cast<double>(data.size()) <=
                static_cast<double>(options.kernel_cap),
            ErrorCode::GridTooLarge,
            std::to_string(grid.size()) + " atoms x " + std::to_string(data.size()) +
                " observations exceeds the kernel cap; increase delta");
    const auto kernel = kernel_matrix(data, grid.atoms);
    SolveResult solve;
    try {
        solve = solve_weights(kernel, options.solver);
    } catch (const NonConvergenceError& e) {
        solve = e.partial();
    }
    std::optional<double> bound;
    try {
        bound = discretization_bound(data.dim(), data.k_lower(), region.diameter, delta);
    } catch (const Error&) {
        bound.reset();
    }
    MixingMeasure measure = MixingMeasure(grid.atoms, solve.weights).pruned(0.0, 1e-9 * region.diameter);
    return {std::move(region), std::move(grid), std::move(solve), std::move(measure), bound};
}

} // namespace npmle
