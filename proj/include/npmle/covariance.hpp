#pragma once

#include "npmle/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace npmle {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Known measurement-error covariance in one of three storage tiers.
///
/// Isotropic and diagonal covariances never factorize; full covariances keep
/// their Cholesky factor so repeated solves against many atoms are cheap.
/// Construction is the positive-definiteness check.
class Covariance {
public:
    enum class Kind { Isotropic, Diagonal, Full };

    static Covariance isotropic(Eigen::Index dim, double variance) {
        require(dim >= 1, ErrorCode::InvalidArgument, "covariance dimension must be >= 1");
        require(std::isfinite(variance) && variance > 0.0, ErrorCode::NotPositiveDefinite,
                "isotropic variance must be positive, got " + std::to_string(variance));
        Covariance c;
        c.kind_ = Kind::Isotropic;
        c.diag_ = Vector::Constant(dim, variance);
        c.finish_diagonal();
        return c;
    }

    static Covariance diagonal(Vector variances) {
        require(variances.size() >= 1, ErrorCode::InvalidArgument, "covariance dimension must be >= 1");
        for (Eigen::Index k = 0; k < variances.size(); ++k)
            require(std::isfinite(variances[k]) && variances[k] > 0.0, ErrorCode::NotPositiveDefinite,
                    "diagonal variance " + std::to_string(k) + " must be positive");
        Covariance c;
        c.kind_ = Kind::Diagonal;
        c.diag_ = std::move(variances);
        c.finish_diagonal();
        return c;
    }

    static Covariance full(const Matrix& matrix) {
        require(matrix.rows() == matrix.cols() && matrix.rows() >= 1, ErrorCode::DimensionMismatch,
                "full covariance must be square");
        require(matrix.allFinite(), ErrorCode::NotPositiveDefinite, "covariance has non-finite entries");
        const double scale = matrix.cwiseAbs().maxCoeff();
        require((matrix - matrix.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(scale, 1.0),
                ErrorCode::NotPositiveDefinite, "covariance is not symmetric");
        Covariance c;
        c.kind_ = Kind::Full;
        c.full_ = 0.5 * (matrix + matrix.transpose());
        c.llt_.compute(c.full_);
        require(c.llt_.info() == Eigen::Success, ErrorCode::NotPositiveDefinite, "Cholesky factorization failed");
        const Matrix& lower = c.llt_.matrixLLT();
        for (Eigen::Index k = 0; k < lower.rows(); ++k)
            require(lower(k, k) > 0.0, ErrorCode::NotPositiveDefinite, "Cholesky factor has zero pivot");
        c.log_det_ = 2.0 * lower.diagonal().array().log().sum();
        Eigen::SelfAdjointEigenSolver<Matrix> eig(c.full_, Eigen::EigenvaluesOnly);
        c.eig_min_ = eig.eigenvalues().minCoeff();
        c.eig_max_ = eig.eigenvalues().maxCoeff();
        require(c.eig_min_ > 0.0, ErrorCode::NotPositiveDefinite, "covariance has non-positive eigenvalue");
        return c;
    }

    /// Builds from the packed lower triangle (row-major: c11, c21, c22, c31, ...).
    static Covariance full_from_lower(Eigen::Index dim, const std::vector<double>& lower) {
        require(static_cast<Eigen::Index>(lower.size()) == dim * (dim + 1) / 2, ErrorCode::DimensionMismatch,
                "lower triangle has wrong length");
        Matrix m(dim, dim);
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < dim; ++r)
            for (Eigen::Index c = 0; c <= r; ++c) {
                m(r, c) = lower[k];
                m(c, r) = lower[k];
                ++k;
            }
        return full(m);
    }

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] Eigen::Index dim() const noexcept { return kind_ == Kind::Full ? full_.rows() : diag_.size(); }
    [[nodiscard]] double log_det() const noexcept { return log_det_; }
    [[nodiscard]] double eig_min() const noexcept { return eig_min_; }
    [[nodiscard]] double eig_max() const noexcept { return eig_max_; }

    /// Σ⁻¹ v
    [[nodiscard]] Vector solve(const Vector& v) const {
        if (kind_ == Kind::Full)
            return llt_.solve(v);
        return v.cwiseQuotient(diag_);
    }

    /// vᵀ Σ⁻¹ v
    [[nodiscard]] double quad_form(const Vector& v) const {
        if (kind_ == Kind::Full) {
            Vector y = llt_.matrixL().solve(v);
            return y.squaredNorm();
        }
        return (v.array().square() / diag_.array()).sum();
    }

    /// L⁻¹ D for every column of D, where L Lᵀ = Σ.
    [[nodiscard]] Matrix whiten(Matrix d) const {
        if (kind_ == Kind::Full) {
            llt_.matrixL().solveInPlace(d);
            return d;
        }
        return d.array().colwise() / diag_.array().sqrt();
    }

    /// Σ v
    [[nodiscard]] Vector multiply(const Vector& v) const {
        if (kind_ == Kind::Full)
            return full_ * v;
        return v.cwiseProduct(diag_);
    }

    /// L z with L Lᵀ = Σ; maps standard normals to N(0, Σ).
    [[nodiscard]] Vector sqrt_multiply(const Vector& z) const {
        if (kind_ == Kind::Full)
            return llt_.matrixL() * z;
        return z.cwiseProduct(diag_.cwiseSqrt());
    }

    [[nodiscard]] Matrix dense() const {
        if (kind_ == Kind::Full)
            return full_;
        return diag_.asDiagonal();
    }

    /// Diagonal entries (valid for every kind).
    [[nodiscard]] Vector diagonal_entries() const {
        return kind_ == Kind::Full ? Vector(full_.diagonal()) : diag_;
    }

    /// Packed lower triangle, row-major.
    [[nodiscard]] std::vector<double> lower_triangle() const {
        const Matrix m = dense();
        std::vector<double> out;
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c <= r; ++c)
                out.push_back(m(r, c));
        return out;
    }

    /// U Σ Uᵀ. Isotropic stays isotropic; results that come out exactly
    /// diagonal (axis permutations, sign flips) are stored as Diagonal.
    [[nodiscard]] Covariance rotated(const Matrix& rotation) const {
        require(rotation.rows() == dim() && rotation.cols() == dim(), ErrorCode::DimensionMismatch,
                "rotation dimension does not match covariance");
        if (kind_ == Kind::Isotropic)
            return *this;
        Matrix m = rotation * dense() * rotation.transpose();
        m = 0.5 * (m + m.transpose());
        Matrix off = m;
        off.diagonal().setZero();
        if (off.cwiseAbs().maxCoeff() <= 1e-14 * m.diagonal().cwiseAbs().maxCoeff())
            return diagonal(m.diagonal());
        return full(m);
    }

    /// Σ = c·other for some c > 0, within relative tolerance on Σ/trace(Σ).
    [[nodiscard]] bool proportional_to(const Covariance& other, double rel_tol = 1e-8) const {
        if (dim() != other.dim())
            return false;
        const Matrix a = dense() / dense().trace();
        const Matrix b = other.dense() / other.dense().trace();
        return (a - b).cwiseAbs().maxCoeff() <= rel_tol * std::max(a.cwiseAbs().maxCoeff(), 1e-300);
    }

    [[nodiscard]] bool operator==(const Covariance& other) const {
        return dim() == other.dim() && dense() == other.dense();
    }

private:
    Covariance() = default;

    void finish_diagonal() {
        log_det_ = diag_.array().log().sum();
        eig_min_ = diag_.minCoeff();
        eig_max_ = diag_.maxCoeff();
    }

    Kind kind_ = Kind::Isotropic;
    Vector diag_;
    Matrix full_;
    Eigen::LLT<Matrix> llt_;
    double log_det_ = 0.0;
    double eig_min_ = 0.0;
    double eig_max_ = 0.0;
};

} // namespace npmle
