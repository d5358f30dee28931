#pragma once

#include "npmle/covariance.hpp"
#include "npmle/error.hpp"
#include "npmle/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace npmle {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112; // log(2π)

/// log φ_Σ(x − mean) = −½ log det(2πΣ) − ½ (x−mean)ᵀ Σ⁻¹ (x−mean).
inline double log_gauss(const Vector& x, const Vector& mean, const Covariance& sigma) {
    require(x.size() == mean.size() && x.size() == sigma.dim(), ErrorCode::DimensionMismatch,
            "log_gauss: dimension mismatch");
    const double p = static_cast<double>(x.size());
    return -0.5 * (p * kLog2Pi + sigma.log_det()) - 0.5 * sigma.quad_form(x - mean);
}

/// Squared Mahalanobis distances (a_j − x)ᵀ Σ⁻¹ (a_j − x) for every column a_j.
inline Vector mahalanobis_sq(const Vector& x, const Matrix& atoms, const Covariance& sigma) {
    Matrix diff = atoms.colwise() - x;
    if (sigma.kind() == Covariance::Kind::Full)
        return sigma.whiten(std::move(diff)).colwise().squaredNorm().transpose();
    const Vector inv = sigma.diagonal_entries().cwiseInverse();
    return (diff.array().square().colwise() * inv.array()).colwise().sum().transpose();
}

/// Log-Gaussian kernel row log φ_Σ(x − a_j) over all atoms.
inline Vector log_gauss_row(const Vector& x, const Matrix& atoms, const Covariance& sigma) {
    require(x.size() == atoms.rows() && x.size() == sigma.dim(), ErrorCode::DimensionMismatch,
            "kernel row: dimension mismatch");
    const double p = static_cast<double>(x.size());
    const double norm = -0.5 * (p * kLog2Pi + sigma.log_det());
    return (norm - 0.5 * mahalanobis_sq(x, atoms, sigma).array()).matrix();
}

/// n × m matrix of log φ_{Σ_i}(X_i − a_j), stored row-major.
///
/// Alongside the log entries it keeps the row maxima and the shifted kernel
/// exp(K_ij − max_j K_ij) ∈ [0, 1], which is what the solvers consume: every
/// likelihood ratio is invariant to the per-row shift.
class LogKernelMatrix {
public:
    explicit LogKernelMatrix(RowMatrix entries) : entries_(std::move(entries)) {
        require(entries_.rows() >= 1 && entries_.cols() >= 1, ErrorCode::InvalidArgument, "empty kernel matrix");
        require(entries_.allFinite(), ErrorCode::InvalidArgument, "kernel matrix has non-finite entries");
        row_max_ = entries_.rowwise().maxCoeff();
        shifted_ = (entries_.colwise() - row_max_).array().exp().matrix();
        // subnormal entries are flushed: they are below any meaningful mass and slow every product
        shifted_ = (shifted_.array() < std::numeric_limits<double>::min()).select(0.0, shifted_);
    }

    [[nodiscard]] Eigen::Index rows() const noexcept { return entries_.rows(); }
    [[nodiscard]] Eigen::Index cols() const noexcept { return entries_.cols(); }
    [[nodiscard]] const RowMatrix& entries() const noexcept { return entries_; }
    [[nodiscard]] const Vector& row_max() const noexcept { return row_max_; }
    [[nodiscard]] const RowMatrix& shifted() const noexcept { return shifted_; }
    [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }

    /// Keeps only the given columns.
    [[nodiscard]] LogKernelMatrix select_columns(const std::vector<Eigen::Index>& cols) const {
        RowMatrix sub(rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k)
            sub.col(static_cast<Eigen::Index>(k)) = entries_.col(cols[k]);
        return LogKernelMatrix(std::move(sub));
    }

private:
    RowMatrix entries_;
    Vector row_max_;
    RowMatrix shifted_;
};

inline LogKernelMatrix kernel_matrix(const Dataset& data, const Matrix& atoms) {
    require(atoms.cols() >= 1, ErrorCode::InvalidArgument, "kernel_matrix needs at least one atom");
    require(atoms.rows() == data.dim(), ErrorCode::DimensionMismatch, "atom dimension does not match data");
    const auto n = static_cast<Eigen::Index>(data.size());
    RowMatrix k(n, atoms.cols());
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& o = data[static_cast<std::size_t>(i)];
        k.row(i) = log_gauss_row(o.x, atoms, o.sigma).transpose();
    }
    return LogKernelMatrix(std::move(k));
}

/// Per-row log f_i = log Σ_j w_j exp(K_ij), via the shifted kernel.
inline Vector row_log_likelihoods(const LogKernelMatrix& kernel, const Vector& weights) {
    require(weights.size() == kernel.cols(), ErrorCode::DimensionMismatch, "weight length does not match kernel");
    const Vector sums = kernel.shifted() * weights;
    for (Eigen::Index i = 0; i < sums.size(); ++i)
        require(sums[i] > 0.0, ErrorCode::AllWeightsOnUnderflowedAtoms,
                "row " + std::to_string(i) + " has zero likelihood under the weighted atoms");
    return (sums.array().log() + kernel.row_max().array()).matrix();
}

/// (1/n) Σ_i log Σ_j w_j exp(K_ij).
inline double mixture_loglik(const LogKernelMatrix& kernel, const Vector& weights) {
    return row_log_likelihoods(kernel, weights).mean();
}

struct MixtureEval {
    double log_density = 0.0;
    double density = 0.0;
    Vector gradient; ///< ∇f_{G,Σ}(x)
    Vector score;    ///< ∇ log f = ∇f / f; finite even when f underflows
};

/// Density f = Σ_j w_j φ_Σ(x − a_j) and gradient ∇f = Σ_j w_j φ_Σ(x − a_j) Σ⁻¹(a_j − x),
/// accumulated in one pass with every term scaled by the largest log term.
inline MixtureEval mixture_eval(const Vector& x, const Covariance& sigma, const MixingMeasure& measure) {
    require(x.size() == sigma.dim() && x.size() == measure.dim(), ErrorCode::DimensionMismatch,
            "mixture_eval: dimension mismatch");
    Vector logs = log_gauss_row(x, measure.atoms(), sigma);
    for (Eigen::Index j = 0; j < logs.size(); ++j)
        logs[j] = measure.weight(j) > 0.0 ? logs[j] + std::log(measure.weight(j))
                                          : -std::numeric_limits<double>::infinity();
    const double top = logs.maxCoeff();
    double total = 0.0;
    Vector grad_scaled = Vector::Zero(x.size());
    for (Eigen::Index j = 0; j < logs.size(); ++j) {
        const double term = std::exp(logs[j] - top);
        if (term == 0.0)
            continue;
        total += term;
        grad_scaled += term * sigma.solve(Vector(measure.atoms().col(j) - x));
    }
    MixtureEval out;
    out.log_density = top + std::log(total);
    out.density = std::exp(out.log_density);
    out.score = grad_scaled / total;
    out.gradient = std::exp(top) * grad_scaled;
    return out;
}

} // namespace npmle
