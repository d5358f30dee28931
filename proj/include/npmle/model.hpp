#pragma once

#include "npmle/covariance.hpp"
#include "npmle/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace npmle {

struct Observation {
    Vector x;
    Covariance sigma;
};

/// Validated heteroscedastic sample (X_i, Σ_i), i = 1..n.
///
/// Caches the spectral bounds k_lower = min_i λ_min(Σ_i) and
/// k_upper = max_i λ_max(Σ_i), and a grouping of observations that share an
/// identical covariance so per-Σ work can be done once per group.
class Dataset {
public:
    explicit Dataset(std::vector<Observation> observations) : obs_(std::move(observations)) {
        require(!obs_.empty(), ErrorCode::EmptyDataset, "dataset has no observations");
        dim_ = obs_.front().x.size();
        require(dim_ >= 1, ErrorCode::DimensionMismatch, "observation dimension must be >= 1");
        k_lower_ = obs_.front().sigma.eig_min();
        k_upper_ = obs_.front().sigma.eig_max();
        std::map<std::vector<double>, std::size_t> seen;
        group_.reserve(obs_.size());
        for (std::size_t i = 0; i < obs_.size(); ++i) {
            const auto& o = obs_[i];
            require(o.x.size() == dim_, ErrorCode::DimensionMismatch,
                    "observation " + std::to_string(i) + " has dimension " + std::to_string(o.x.size()) +
                        ", expected " + std::to_string(dim_));
            require(o.sigma.dim() == dim_, ErrorCode::DimensionMismatch,
                    "covariance of observation " + std::to_string(i) + " has wrong dimension");
            require(o.x.allFinite(), ErrorCode::InvalidArgument,
                    "observation " + std::to_string(i) + " has non-finite entries");
            k_lower_ = std::min(k_lower_, o.sigma.eig_min());
            k_upper_ = std::max(k_upper_, o.sigma.eig_max());
            auto [it, inserted] = seen.emplace(o.sigma.lower_triangle(), group_reps_.size());
            if (inserted)
                group_reps_.push_back(i);
            group_.push_back(it->second);
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return obs_.size(); }
    [[nodiscard]] Eigen::Index dim() const noexcept { return dim_; }
    [[nodiscard]] const Observation& operator[](std::size_t i) const { return obs_[i]; }
    [[nodiscard]] const std::vector<Observation>& observations() const noexcept { return obs_; }
    [[nodiscard]] double k_lower() const noexcept { return k_lower_; }
    [[nodiscard]] double k_upper() const noexcept { return k_upper_; }

    /// Index of the covariance group of observation i.
    [[nodiscard]] std::size_t group_of(std::size_t i) const { return group_[i]; }
    /// One representative observation index per distinct covariance.
    [[nodiscard]] const std::vector<std::size_t>& group_representatives() const noexcept { return group_reps_; }

    /// Observations stacked as a p × n matrix.
    [[nodiscard]] Matrix points() const {
        Matrix out(dim_, static_cast<Eigen::Index>(obs_.size()));
        for (std::size_t i = 0; i < obs_.size(); ++i)
            out.col(static_cast<Eigen::Index>(i)) = obs_[i].x;
        return out;
    }

private:
    std::vector<Observation> obs_;
    Eigen::Index dim_ = 0;
    double k_lower_ = 0.0;
    double k_upper_ = 0.0;
    std::vector<std::size_t> group_;
    std::vector<std::size_t> group_reps_;
};

inline Dataset validate_dataset(std::vector<Observation> raw) { return Dataset(std::move(raw)); }

inline Dataset validate_dataset(const Dataset& data) { return Dataset(data.observations()); }

/// Discrete probability measure Σ_j w_j δ_{a_j}; atoms are the columns of a p × m matrix.
class MixingMeasure {
public:
    static constexpr double kSimplexTol = 1e-12;

    MixingMeasure(Matrix atoms, Vector weights) : atoms_(std::move(atoms)), weights_(std::move(weights)) {
        require(atoms_.cols() >= 1 && atoms_.rows() >= 1, ErrorCode::InvalidArgument, "measure needs at least one atom");
        require(atoms_.cols() == weights_.size(), ErrorCode::DimensionMismatch, "atom and weight counts differ");
        require(atoms_.allFinite() && weights_.allFinite(), ErrorCode::InvalidArgument, "measure has non-finite values");
        require(weights_.minCoeff() >= 0.0, ErrorCode::InvalidArgument, "weights must be nonnegative");
        const double total = weights_.sum();
        require(total > 0.0, ErrorCode::InvalidArgument, "weights sum to zero");
        deviation_ = total - 1.0;
        // sums already within round-off of 1 are kept bit-for-bit
        if (std::abs(deviation_) > kSimplexTol)
            weights_ /= total;
    }

    static MixingMeasure point_mass(const Vector& at) { return MixingMeasure(Matrix(at), Vector::Ones(1)); }

    [[nodiscard]] Eigen::Index dim() const noexcept { return atoms_.rows(); }
    [[nodiscard]] Eigen::Index size() const noexcept { return atoms_.cols(); }
    [[nodiscard]] const Matrix& atoms() const noexcept { return atoms_; }
    [[nodiscard]] const Vector& weights() const noexcept { return weights_; }
    [[nodiscard]] Vector atom(Eigen::Index j) const { return atoms_.col(j); }
    [[nodiscard]] double weight(Eigen::Index j) const { return weights_[j]; }
    /// Σ w − 1 of the weights as given; renormalized when it exceeds kSimplexTol.
    [[nodiscard]] double normalization_deviation() const noexcept { return deviation_; }

    /// Drops atoms with weight <= weight_tol and merges atoms closer than
    /// merge_tol into the heavier one. Remaining weights are renormalized.
    [[nodiscard]] MixingMeasure pruned(double weight_tol, double merge_tol = 0.0) const {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(size()));
        for (Eigen::Index j = 0; j < size(); ++j)
            order[static_cast<std::size_t>(j)] = j;
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return weights_[a] > weights_[b]; });
        std::vector<Eigen::Index> kept;
        std::vector<double> mass;
        for (Eigen::Index j : order) {
            if (weights_[j] <= weight_tol && !kept.empty())
                continue;
            bool merged = false;
            for (std::size_t k = 0; k < kept.size(); ++k) {
                if ((atoms_.col(kept[k]) - atoms_.col(j)).norm() <= merge_tol) {
                    mass[k] += weights_[j];
                    merged = true;
                    break;
                }
            }
            if (!merged) {
                kept.push_back(j);
                mass.push_back(weights_[j]);
            }
        }
        // restore grid order for deterministic output
        std::vector<std::size_t> idx(kept.size());
        for (std::size_t k = 0; k < idx.size(); ++k)
            idx[k] = k;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return kept[a] < kept[b]; });
        Matrix a(dim(), static_cast<Eigen::Index>(kept.size()));
        Vector w(static_cast<Eigen::Index>(kept.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            a.col(static_cast<Eigen::Index>(k)) = atoms_.col(kept[idx[k]]);
            w[static_cast<Eigen::Index>(k)] = mass[idx[k]];
        }
        return MixingMeasure(std::move(a), std::move(w));
    }

private:
    Matrix atoms_;
    Vector weights_;
    double deviation_ = 0.0;
};

/// T(x) = U₀x + x₀ with U₀ orthogonal.
class AffineMap {
public:
    AffineMap(Matrix rotation, Vector shift) : rotation_(std::move(rotation)), shift_(std::move(shift)) {
        require(rotation_.rows() == rotation_.cols() && rotation_.rows() == shift_.size(), ErrorCode::DimensionMismatch,
                "rotation and shift dimensions differ");
        const Matrix gram = rotation_.transpose() * rotation_;
        require((gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() <= 1e-10,
                ErrorCode::InvalidArgument, "rotation is not orthogonal");
    }

    static AffineMap identity(Eigen::Index dim) { return {Matrix::Identity(dim, dim), Vector::Zero(dim)}; }
    static AffineMap translation(const Vector& shift) {
        return {Matrix::Identity(shift.size(), shift.size()), shift};
    }

    [[nodiscard]] Eigen::Index dim() const noexcept { return shift_.size(); }
    [[nodiscard]] const Matrix& rotation() const noexcept { return rotation_; }
    [[nodiscard]] const Vector& shift() const noexcept { return shift_; }

    [[nodiscard]] Vector operator()(const Vector& x) const { return rotation_ * x + shift_; }

    /// Applies the map to every column.
    [[nodiscard]] Matrix apply_columns(const Matrix& points) const {
        return (rotation_ * points).colwise() + shift_;
    }

    /// (this ∘ inner)(x) = this(inner(x)).
    [[nodiscard]] AffineMap compose(const AffineMap& inner) const {
        return {rotation_ * inner.rotation_, rotation_ * inner.shift_ + shift_};
    }

private:
    Matrix rotation_;
    Vector shift_;
};

inline MixingMeasure pushforward(const MixingMeasure& measure, const AffineMap& map) {
    require(measure.dim() == map.dim(), ErrorCode::DimensionMismatch, "measure and map dimensions differ");
    return MixingMeasure(map.apply_columns(measure.atoms()), measure.weights());
}

inline Dataset transform_dataset(const Dataset& data, const AffineMap& map) {
    require(data.dim() == map.dim(), ErrorCode::DimensionMismatch, "dataset and map dimensions differ");
    std::vector<Observation> out;
    out.reserve(data.size());
    for (const auto& o : data.observations())
        out.push_back({map(o.x), o.sigma.rotated(map.rotation())});
    return Dataset(std::move(out));
}

} // namespace npmle
