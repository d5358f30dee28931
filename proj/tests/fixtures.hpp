#pragma once

// Shared test fixtures and random instance generators.

#include "npmle/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace npmle::testing {

/// σ² = 3 / log 256, the variance at which the three-point fixture has four tied modes.
inline double triangle_variance() { return 3.0 / std::log(256.0); }

/// 2^{2/3} log 2 / (3π): every fitted likelihood of the three-point fixture.
inline double triangle_fitted_likelihood() { return std::pow(2.0, 2.0 / 3.0) * std::log(2.0) / (3.0 * M_PI); }

inline Matrix triangle_points() {
    Matrix x(2, 3);
    x << 0.0, std::sqrt(3.0) / 2.0, -std::sqrt(3.0) / 2.0,
         1.0, -0.5, -0.5;
    return x;
}

inline Dataset triangle_dataset() {
    const Matrix x = triangle_points();
    std::vector<Observation> obs;
    for (Eigen::Index i = 0; i < 3; ++i)
        obs.push_back({x.col(i), Covariance::isotropic(2, triangle_variance())});
    return Dataset(std::move(obs));
}

/// Columns X1/2, X2/2, X3/2, 0.
inline Matrix triangle_modes() {
    Matrix a(2, 4);
    a.leftCols(3) = triangle_points() / 2.0;
    a.col(3).setZero();
    return a;
}

/// Four unit-axis points with swapped elongated diagonal covariances.
inline Dataset cross_dataset() {
    std::vector<Observation> obs;
    Vector wide(2), tall(2);
    wide << 5.0, 0.05;
    tall << 0.05, 5.0;
    obs.push_back({Vector::Unit(2, 1), Covariance::diagonal(wide)});
    obs.push_back({-Vector::Unit(2, 1), Covariance::diagonal(wide)});
    obs.push_back({Vector::Unit(2, 0), Covariance::diagonal(tall)});
    obs.push_back({-Vector::Unit(2, 0), Covariance::diagonal(tall)});
    return Dataset(std::move(obs));
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index p, double scale = 1.0) {
    std::normal_distribution<double> z(0.0, scale);
    Vector v(p);
    for (Eigen::Index k = 0; k < p; ++k)
        v[k] = z(rng);
    return v;
}

inline Matrix random_rotation(std::mt19937_64& rng, Eigen::Index p) {
    Matrix g(p, p);
    for (Eigen::Index c = 0; c < p; ++c)
        g.col(c) = random_vector(rng, p);
    Eigen::HouseholderQR<Matrix> qr(g);
    return qr.householderQ() * Matrix::Identity(p, p);
}

enum class CovKind { Isotropic, Diagonal, Full, Mixed };

inline Covariance random_covariance(std::mt19937_64& rng, Eigen::Index p, CovKind kind) {
    std::uniform_real_distribution<double> u(0.3, 1.5);
    if (kind == CovKind::Mixed)
        kind = static_cast<CovKind>(std::uniform_int_distribution<int>(0, 2)(rng));
    switch (kind) {
    case CovKind::Isotropic:
        return Covariance::isotropic(p, u(rng));
    case CovKind::Diagonal: {
        Vector d(p);
        for (Eigen::Index k = 0; k < p; ++k)
            d[k] = u(rng);
        return Covariance::diagonal(d);
    }
    default: {
        const Matrix q = random_rotation(rng, p);
        Vector d(p);
        for (Eigen::Index k = 0; k < p; ++k)
            d[k] = u(rng);
        return Covariance::full(q * d.asDiagonal() * q.transpose());
    }
    }
}

inline Dataset random_dataset(std::mt19937_64& rng, std::size_t n, Eigen::Index p, CovKind kind,
                              double spread = 2.0) {
    std::vector<Observation> obs;
    for (std::size_t i = 0; i < n; ++i)
        obs.push_back({random_vector(rng, p, spread), random_covariance(rng, p, kind)});
    return Dataset(std::move(obs));
}

inline MixingMeasure random_measure(std::mt19937_64& rng, Eigen::Index m, Eigen::Index p, double spread = 2.0) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Matrix atoms(p, m);
    Vector w(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        atoms.col(j) = random_vector(rng, p, spread);
        w[j] = u(rng);
    }
    return MixingMeasure(atoms, w / w.sum());
}

/// Uniformly random point on the simplex.
inline Vector random_simplex(std::mt19937_64& rng, Eigen::Index m) {
    std::exponential_distribution<double> e(1.0);
    Vector w(m);
    for (Eigen::Index j = 0; j < m; ++j)
        w[j] = e(rng);
    return w / w.sum();
}

/// Random grid made of the data points plus uniform draws in their bounding box.
inline Matrix random_grid(std::mt19937_64& rng, const Dataset& data, Eigen::Index extra) {
    const Matrix pts = data.points();
    const Vector lo = pts.rowwise().minCoeff();
    const Vector hi = pts.rowwise().maxCoeff();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix grid(data.dim(), pts.cols() + extra);
    grid.leftCols(pts.cols()) = pts;
    for (Eigen::Index j = 0; j < extra; ++j)
        for (Eigen::Index k = 0; k < data.dim(); ++k)
            grid(k, pts.cols() + j) = lo[k] + u(rng) * (hi[k] - lo[k]);
    return grid;
}

} // namespace npmle::testing
