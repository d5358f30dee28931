#pragma once

#include "npmle/io.hpp"
#include "npmle/kernels.hpp"
#include "npmle/solver.hpp"
#include "npmle/support.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace npmle {

struct CertifyCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct CertifyReport {
    std::vector<CertifyCheck> checks;
    Vector fitted_L;          ///< recomputed from the model's measure
    double dual_gap = 0.0;    ///< max D over the rebuilt grid and the model's atoms
    double identity = 0.0;    ///< Σ_j w_j D(a_j)

    [[nodiscard]] bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass)
                return false;
        return true;
    }
};

namespace detail {

/// (1/n) Σ_i φ_{Σ_i}(X_i − a_j) / f_i − 1 for every column a_j, with
/// log f_i given. Streams one row at a time, so no n × m matrix is formed.
inline Vector dual_values_at(const Dataset& data, const Vector& log_f, const Matrix& atoms) {
    Vector acc = Vector::Zero(atoms.cols());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Vector logs = log_gauss_row(data[i].x, atoms, data[i].sigma);
        acc += (logs.array() - log_f[static_cast<Eigen::Index>(i)]).exp().matrix();
    }
    return (acc.array() / static_cast<double>(data.size()) - 1.0).matrix();
}

inline std::string num(double v) { return std::isfinite(v) ? format_double(v) : std::to_string(v); }

} // namespace detail

/// Re-derives every certificate quantity of a model from the data alone.
/// tol overrides the model's recorded dual-gap tolerance.
inline CertifyReport certify_model(const FittedModelFile& model, const Dataset& data,
                                   std::optional<double> tol = std::nullopt, std::size_t grid_cap = kDefaultGridCap) {
    require(model.dim == data.dim(), ErrorCode::DimensionMismatch,
            "model dimension " + std::to_string(model.dim) + " differs from input dimension " + std::to_string(data.dim()));
    CertifyReport rep;
    const auto n = static_cast<Eigen::Index>(data.size());
    const MixingMeasure g = model.measure();
    const Vector log_f = row_log_likelihoods(kernel_matrix(data, g.atoms()), g.weights());
    rep.fitted_L = log_f.array().exp().matrix();

    {
        CertifyCheck c{"fitted_L", false, ""};
        if (model.fitted_L.size() != n) {
            c.detail = "recorded " + std::to_string(model.fitted_L.size()) + " values for " + std::to_string(n) + " rows";
        } else {
            double worst = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double scale = std::max(std::abs(rep.fitted_L[i]), std::abs(model.fitted_L[i]));
                if (scale > 0.0)
                    worst = std::max(worst, std::abs(rep.fitted_L[i] - model.fitted_L[i]) / scale);
            }
            c.pass = worst <= 1e-9;
            c.detail = "max relative deviation " + detail::num(worst);
        }
        rep.checks.push_back(c);
    }

    const GridSpec grid = build_grid(model.region, model.delta, grid_cap);
    const Vector d_atoms = detail::dual_values_at(data, log_f, g.atoms());
    const Vector d_grid = detail::dual_values_at(data, log_f, grid.atoms);
    rep.dual_gap = std::max(d_grid.maxCoeff(), d_atoms.maxCoeff());
    const double gap_tol = tol ? *tol : model.solver.dual_gap_tol;
    rep.checks.push_back({"dual_gap", rep.dual_gap <= gap_tol,
                          "max D = " + detail::num(rep.dual_gap) + " over " + std::to_string(grid.size()) +
                              " grid atoms, tolerance " + detail::num(gap_tol)});

    rep.identity = g.weights().dot(d_atoms);
    rep.checks.push_back({"identity", std::abs(rep.identity) <= 1e-9, "sum w_j D_j = " + detail::num(rep.identity)});

    {
        const double q = std::log1p(std::max(rep.dual_gap, 0.0));
        Eigen::Index violations = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (log_f[i] < log_likelihood_floor(data.size(), q, data[static_cast<std::size_t>(i)].sigma))
                ++violations;
        rep.checks.push_back({"likelihood_floor", violations == 0,
                              std::to_string(violations) + " rows below the floor at q = " + detail::num(q)});
    }

    {
        std::optional<double> bound;
        try {
            bound = discretization_bound(data.dim(), data.k_lower(), model.region.diameter, model.delta);
        } catch (const Error&) {
            bound.reset();
        }
        const bool k_match = std::abs(data.k_lower() - model.k_lower) <= 1e-12 * data.k_lower();
        bool b_match = bound.has_value() == model.bound.has_value();
        if (b_match && bound)
            b_match = std::abs(*bound - *model.bound) <= 1e-12 * std::max(*bound, 1e-300);
        CertifyCheck c{"discretization_bound", k_match && b_match, ""};
        c.detail = bound ? "bound " + detail::num(*bound) + " at delta " + detail::num(model.delta)
                         : std::string("delta outside the bound's validity range");
        if (!k_match)
            c.detail += "; recorded k_lower differs from the input";
        if (!b_match)
            c.detail += "; recorded bound differs";
        rep.checks.push_back(c);
    }
    return rep;
}

} // namespace npmle
