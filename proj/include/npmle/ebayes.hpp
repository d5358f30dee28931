#pragma once

#include "npmle/error.hpp"
#include "npmle/kernels.hpp"
#include "npmle/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace npmle {

struct PosteriorSummary {
    Vector responsibilities; ///< empty for the Tweedie route
    Vector mean;
    double log_density = 0.0; ///< log f_{G,Σ}(x)
    bool used_regularization = false;
    bool used_fallback = false; ///< responsibilities underflowed; nearest atom used

    [[nodiscard]] double max_responsibility() const {
        return responsibilities.size() > 0 ? responsibilities.maxCoeff() : 0.0;
    }
};

/// Floor ρ/√det Σ on the density in the Tweedie denominator.
struct RegularizationPolicy {
    double rho = 0.0;

    explicit RegularizationPolicy(double r) : rho(r) {
        require(std::isfinite(r) && r > 0.0, ErrorCode::InvalidArgument, "rho must be positive");
    }

    /// ρ = (2π)^{−p/2}/n.
    static RegularizationPolicy default_for(Eigen::Index p, std::size_t n) {
        return RegularizationPolicy(std::exp(-0.5 * static_cast<double>(p) * kLog2Pi) / static_cast<double>(n));
    }

    [[nodiscard]] double log_floor(const Covariance& sigma) const { return std::log(rho) - 0.5 * sigma.log_det(); }
};

namespace detail {

inline Vector weighted_log_terms(const Vector& x, const Covariance& sigma, const MixingMeasure& g) {
    Vector logs = log_gauss_row(x, g.atoms(), sigma);
    for (Eigen::Index j = 0; j < logs.size(); ++j)
        logs[j] = g.weight(j) > 0.0 ? logs[j] + std::log(g.weight(j)) : -std::numeric_limits<double>::infinity();
    return logs;
}

inline void check_dims(const Vector& x, const Covariance& sigma, const MixingMeasure& g) {
    require(x.size() == sigma.dim() && x.size() == g.dim(), ErrorCode::DimensionMismatch,
            "posterior mean: dimensions of x, Σ and G differ");
}

} // namespace detail

/// E_G[θ | x] = Σ_j r_j a_j with r_j ∝ w_j φ_Σ(x − a_j), normalized in log space.
inline PosteriorSummary posterior_mean_direct(const Vector& x, const Covariance& sigma, const MixingMeasure& g) {
    detail::check_dims(x, sigma, g);
    const Vector logs = detail::weighted_log_terms(x, sigma, g);
    const double top = logs.maxCoeff();
    require(std::isfinite(top), ErrorCode::AllResponsibilitiesUnderflow,
            "every responsibility underflows at this observation");
    PosteriorSummary out;
    out.responsibilities = (logs.array() - top).exp().matrix();
    const double total = out.responsibilities.sum();
    out.responsibilities /= total;
    out.mean = g.atoms() * out.responsibilities;
    out.log_density = top + std::log(total);
    return out;
}

/// x + Σ ∇f/f, or with a policy x + Σ ∇f / max(f, ρ/√det Σ).
inline PosteriorSummary posterior_mean_tweedie(const Vector& x, const Covariance& sigma, const MixingMeasure& g,
                                               const std::optional<RegularizationPolicy>& policy = std::nullopt) {
    detail::check_dims(x, sigma, g);
    const MixtureEval e = mixture_eval(x, sigma, g);
    PosteriorSummary out;
    out.log_density = e.log_density;
    if (!policy) {
        require(std::isfinite(e.log_density), ErrorCode::ZeroDensity, "mixture density is zero at x");
        out.mean = x + sigma.multiply(e.score);
        return out;
    }
    const double log_floor = policy->log_floor(sigma);
    if (e.log_density >= log_floor) {
        out.mean = x + sigma.multiply(e.score);
    } else {
        // ∇f / floor = score · f / floor; a zero density leaves x unchanged
        const double ratio = std::isfinite(e.log_density) ? std::exp(e.log_density - log_floor) : 0.0;
        out.mean = x + ratio * sigma.multiply(std::isfinite(e.log_density) ? e.score : Vector::Zero(x.size()));
        out.used_regularization = true;
    }
    return out;
}

/// Posterior summaries for every observation under its own Σ_i.
///
/// Means come from the responsibilities. With a policy, rows whose density is
/// below the floor get the regularized Tweedie mean, which for discrete G is
/// x + (f/floor)(E[θ|x] − x). Rows whose responsibilities all underflow are
/// assigned to the Mahalanobis-nearest atom and flagged.
inline std::vector<PosteriorSummary> denoise(const Dataset& data, const MixingMeasure& g,
                                             const std::optional<RegularizationPolicy>& policy) {
    require(data.dim() == g.dim(), ErrorCode::DimensionMismatch, "dataset and mixing measure dimensions differ");
    const auto n = static_cast<std::ptrdiff_t>(data.size());
    std::vector<PosteriorSummary> out(data.size());
    std::vector<std::exception_ptr> failures(data.size());
#pragma omp parallel for schedule(dynamic, 64)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto& o = data[static_cast<std::size_t>(i)];
        auto& s = out[static_cast<std::size_t>(i)];
        try {
            try {
                s = posterior_mean_direct(o.x, o.sigma, g);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::AllResponsibilitiesUnderflow)
                    throw;
                // distances large enough to underflow overflow when squared, so compare them rescaled
                const Matrix diff = (-g.atoms()).colwise() + o.x;
                const double scale = std::max(diff.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
                Eigen::Index nearest = 0;
                double best = std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j < diff.cols(); ++j) {
                    const double d2 = o.sigma.quad_form(diff.col(j) / scale);
                    if (g.weight(j) > 0.0 && d2 < best) {
                        best = d2;
                        nearest = j;
                    }
                }
                s.responsibilities = Vector::Unit(g.size(), nearest);
                s.mean = g.atom(nearest);
                s.log_density = -std::numeric_limits<double>::infinity();
                s.used_fallback = true;
                continue;
            }
            if (policy) {
                const double log_floor = policy->log_floor(o.sigma);
                if (s.log_density < log_floor) {
                    s.mean = o.x + std::exp(s.log_density - log_floor) * (s.mean - o.x);
                    s.used_regularization = true;
                }
            }
        } catch (...) {
            failures[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (std::size_t i = 0; i < failures.size(); ++i) {
        if (!failures[i])
            continue;
        try {
            std::rethrow_exception(failures[i]);
        } catch (const Error& e) {
            throw Error(e.code(), "row " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

} // namespace npmle
