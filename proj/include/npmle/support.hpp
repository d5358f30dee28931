#pragma once

#include "npmle/error.hpp"
#include "npmle/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace npmle {

/// Outer bound on where any maximum-likelihood prior can put mass.
struct Region {
    enum class Kind { Hull, BBox, Ball };

    Kind kind = Kind::BBox;
    Matrix vertices; ///< Hull: p × k point set whose convex hull is the region
    Vector lower;    ///< BBox corners; for the other kinds, their bounding box
    Vector upper;
    Vector center;   ///< Ball
    double radius = 0.0;
    double diameter = 0.0;

    [[nodiscard]] Eigen::Index dim() const noexcept { return lower.size(); }
};

inline const char* to_string(Region::Kind kind) {
    switch (kind) {
    case Region::Kind::Hull: return "hull";
    case Region::Kind::BBox: return "bbox";
    case Region::Kind::Ball: return "ball";
    }
    return "unknown";
}

enum class RegionMode { Auto, Hull, BBox, Ball };

inline RegionMode parse_region_mode(const std::string& s) {
    if (s == "auto") return RegionMode::Auto;
    if (s == "hull") return RegionMode::Hull;
    if (s == "bbox") return RegionMode::BBox;
    if (s == "ball") return RegionMode::Ball;
    throw Error(ErrorCode::InvalidArgument, "unknown region mode '" + s + "'");
}

namespace detail {

inline double cross2(const Vector& o, const Vector& a, const Vector& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

inline double segment_distance(const Vector& x, const Vector& a, const Vector& b) {
    const Vector ab = b - a;
    const double len2 = ab.squaredNorm();
    if (len2 == 0.0)
        return (x - a).norm();
    const double t = std::clamp((x - a).dot(ab) / len2, 0.0, 1.0);
    return (x - (a + t * ab)).norm();
}

/// Monotone-chain convex hull of 2-D points, counter-clockwise, no repeats.
inline std::vector<Vector> hull2d(const Matrix& pts) {
    std::vector<Vector> p;
    for (Eigen::Index j = 0; j < pts.cols(); ++j)
        p.emplace_back(pts.col(j));
    std::sort(p.begin(), p.end(), [](const Vector& a, const Vector& b) {
        return a[0] < b[0] || (a[0] == b[0] && a[1] < b[1]);
    });
    p.erase(std::unique(p.begin(), p.end(), [](const Vector& a, const Vector& b) { return a == b; }), p.end());
    if (p.size() < 3)
        return p;
    std::vector<Vector> h(2 * p.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        while (k >= 2 && cross2(h[k - 2], h[k - 1], p[i]) <= 0.0)
            --k;
        h[k++] = p[i];
    }
    for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
        while (k >= t && cross2(h[k - 2], h[k - 1], p[i - 1]) <= 0.0)
            --k;
        h[k++] = p[i - 1];
    }
    h.resize(k - 1);
    return h;
}

} // namespace detail

/// Distance queries against conv(points).
///
/// Exact for p ≤ 2. For p ≥ 3, returns a lower bound from Frank–Wolfe on
/// min_{λ∈Δ} ‖Vλ − x‖², so membership tests with a margin never drop a point
/// that is truly within the margin.
class HullDistance {
public:
    explicit HullDistance(const Matrix& points) : dim_(points.rows()) {
        if (dim_ == 1) {
            lo_ = points.minCoeff();
            hi_ = points.maxCoeff();
        } else if (dim_ == 2) {
            poly_ = detail::hull2d(points);
        } else {
            points_ = points;
        }
    }

    [[nodiscard]] double lower_bound(const Vector& x) const {
        if (dim_ == 1)
            return std::max({0.0, lo_ - x[0], x[0] - hi_});
        if (dim_ == 2)
            return polygon_distance(x);
        return fw_lower_bound(x);
    }

    /// Vertices of the hull for p ≤ 2 (all points otherwise).
    [[nodiscard]] Matrix vertices() const {
        if (dim_ == 1) {
            Matrix v(1, 2);
            v << lo_, hi_;
            return v;
        }
        if (dim_ == 2) {
            Matrix v(2, static_cast<Eigen::Index>(poly_.size()));
            for (std::size_t k = 0; k < poly_.size(); ++k)
                v.col(static_cast<Eigen::Index>(k)) = poly_[k];
            return v;
        }
        return points_;
    }

private:
    [[nodiscard]] double polygon_distance(const Vector& x) const {
        if (poly_.size() == 1)
            return (x - poly_[0]).norm();
        if (poly_.size() == 2)
            return detail::segment_distance(x, poly_[0], poly_[1]);
        bool inside = true;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < poly_.size(); ++k) {
            const Vector& a = poly_[k];
            const Vector& b = poly_[(k + 1) % poly_.size()];
            if (detail::cross2(a, b, x) < 0.0)
                inside = false;
            best = std::min(best, detail::segment_distance(x, a, b));
        }
        return inside ? 0.0 : best;
    }

    [[nodiscard]] double fw_lower_bound(const Vector& x) const {
        Eigen::Index start = 0;
        (points_.colwise() - x).colwise().squaredNorm().minCoeff(&start);
        Vector y = points_.col(start);
        double lower = 0.0;
        for (int it = 0; it < 500; ++it) {
            const Vector grad = 2.0 * (y - x);
            Eigen::Index s = 0;
            (grad.transpose() * points_).minCoeff(&s);
            const Vector d = Vector(points_.col(s)) - y;
            const double value = (y - x).squaredNorm();
            const double gap = -grad.dot(d);
            lower = std::max(lower, value - gap);
            if (gap <= 1e-12 * std::max(1.0, value) || d.squaredNorm() == 0.0)
                break;
            const double step = std::clamp(gap / (2.0 * d.squaredNorm()), 0.0, 1.0);
            y += step * d;
        }
        return std::sqrt(std::max(lower, 0.0));
    }

    Eigen::Index dim_;
    double lo_ = 0.0, hi_ = 0.0;
    std::vector<Vector> poly_;
    Matrix points_;
};

inline double max_pairwise_distance(const Matrix& pts) {
    double best = 0.0;
    for (Eigen::Index a = 0; a < pts.cols(); ++a)
        for (Eigen::Index b = a + 1; b < pts.cols(); ++b)
            best = std::max(best, (pts.col(a) - pts.col(b)).squaredNorm());
    return std::sqrt(best);
}

inline Region make_hull_region(const Matrix& points) {
    HullDistance hull(points);
    Region r;
    r.kind = Region::Kind::Hull;
    r.vertices = hull.vertices();
    r.lower = points.rowwise().minCoeff();
    r.upper = points.rowwise().maxCoeff();
    r.diameter = max_pairwise_distance(r.vertices);
    return r;
}

inline Region make_bbox_region(Vector lower, Vector upper) {
    require(lower.size() == upper.size(), ErrorCode::DimensionMismatch, "bbox corners differ in dimension");
    require((lower.array() <= upper.array()).all(), ErrorCode::InvalidArgument, "bbox lower exceeds upper");
    Region r;
    r.kind = Region::Kind::BBox;
    r.diameter = (upper - lower).norm();
    r.lower = std::move(lower);
    r.upper = std::move(upper);
    return r;
}

inline Region make_ball_region(Vector center, double radius) {
    require(radius > 0.0, ErrorCode::InvalidArgument, "ball radius must be positive");
    Region r;
    r.kind = Region::Kind::Ball;
    r.lower = center.array() - radius;
    r.upper = center.array() + radius;
    r.center = std::move(center);
    r.radius = radius;
    r.diameter = 2.0 * radius;
    return r;
}

/// Every maximum-likelihood prior is supported inside the returned region:
/// the data hull when all Σ_i are proportional, the data bounding box when
/// all Σ_i are diagonal, and otherwise the ball B(x̄, κ r) with κ = k̄/k̲ and
/// r = max_i ‖X_i − x̄‖.
inline Region support_region(const Dataset& data, RegionMode mode = RegionMode::Auto) {
    const Matrix pts = data.points();
    if (mode == RegionMode::Auto) {
        const auto& first = data[0].sigma;
        bool proportional = true;
        bool diagonal = true;
        for (const auto& o : data.observations()) {
            proportional = proportional && o.sigma.proportional_to(first);
            diagonal = diagonal && o.sigma.kind() != Covariance::Kind::Full;
        }
        mode = proportional ? RegionMode::Hull : diagonal ? RegionMode::BBox : RegionMode::Ball;
    }
    switch (mode) {
    case RegionMode::Hull:
        return make_hull_region(pts);
    case RegionMode::BBox:
        return make_bbox_region(pts.rowwise().minCoeff(), pts.rowwise().maxCoeff());
    default: {
        const Vector center = pts.rowwise().mean();
        const double r = (pts.colwise() - center).colwise().norm().maxCoeff();
        const double kappa = data.k_upper() / data.k_lower();
        // a dataset of identical points has r = 0; keep a nondegenerate ball
        const double radius = kappa * r > 0.0 ? kappa * r : std::sqrt(data.k_lower());
        return make_ball_region(center, radius);
    }
    }
}

/// Point-in-region test with an additive tolerance.
inline bool region_contains(const Region& region, const Vector& x, double tol = 1e-9) {
    switch (region.kind) {
    case Region::Kind::BBox:
        return ((x - region.lower).array() >= -tol).all() && ((region.upper - x).array() >= -tol).all();
    case Region::Kind::Ball:
        return (x - region.center).norm() <= region.radius + tol;
    case Region::Kind::Hull:
        return HullDistance(region.vertices).lower_bound(x) <= tol;
    }
    return false;
}

struct GridSpec {
    double delta = 0.0;
    Matrix atoms; ///< p × m lattice corners

    [[nodiscard]] Eigen::Index size() const noexcept { return atoms.cols(); }
};

inline constexpr std::size_t kDefaultGridCap = 2'000'000;

/// Corners of width-δ hypercubes covering the region, on a lattice anchored at
/// the region's lower bounding-box corner. Hull and ball lattices keep the
/// corners whose cube can meet the region (distance ≤ δ√p/2).
inline GridSpec build_grid(const Region& region, double delta, std::size_t cap = kDefaultGridCap) {
    require(std::isfinite(delta) && delta > 0.0, ErrorCode::InvalidArgument, "grid width must be positive");
    const Eigen::Index p = region.dim();
    std::vector<std::int64_t> counts(static_cast<std::size_t>(p));
    double total = 1.0;
    for (Eigen::Index k = 0; k < p; ++k) {
        const double span = region.upper[k] - region.lower[k];
        const auto c = static_cast<std::int64_t>(std::ceil(span / delta - 1e-9)) + 1;
        counts[static_cast<std::size_t>(k)] = std::max<std::int64_t>(c, 1);
        total *= static_cast<double>(counts[static_cast<std::size_t>(k)]);
    }
    const bool filtered = region.kind != Region::Kind::BBox;
    const double raw_cap = filtered ? 64.0 * static_cast<double>(cap) : static_cast<double>(cap);
    if (total > raw_cap)
        throw Error(ErrorCode::GridTooLarge, "grid would have " + std::to_string(static_cast<double>(total)) +
                                                 " atoms, cap is " + std::to_string(cap));

    const double margin = 0.5 * delta * std::sqrt(static_cast<double>(p));
    std::optional<HullDistance> hull;
    if (region.kind == Region::Kind::Hull)
        hull.emplace(region.vertices);

    std::vector<double> flat;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(p), 0);
    Vector point(p);
    std::size_t kept = 0;
    while (true) {
        for (Eigen::Index k = 0; k < p; ++k)
            point[k] = region.lower[k] + static_cast<double>(idx[static_cast<std::size_t>(k)]) * delta;
        bool keep = true;
        if (region.kind == Region::Kind::Ball)
            keep = (point - region.center).norm() <= region.radius + margin;
        else if (hull)
            keep = hull->lower_bound(point) <= margin;
        if (keep) {
            flat.insert(flat.end(), point.data(), point.data() + p);
            if (++kept > cap)
                throw Error(ErrorCode::GridTooLarge, "grid exceeds cap of " + std::to_string(cap) + " atoms");
        }
        Eigen::Index k = 0;
        for (; k < p; ++k) {
            if (++idx[static_cast<std::size_t>(k)] < counts[static_cast<std::size_t>(k)])
                break;
            idx[static_cast<std::size_t>(k)] = 0;
        }
        if (k == p)
            break;
    }
    GridSpec grid;
    grid.delta = delta;
    grid.atoms = Eigen::Map<Matrix>(flat.data(), p, static_cast<Eigen::Index>(kept));
    return grid;
}

/// Upper bound p·k̲⁻²·(2D² + ½)·δ² on the mean log-likelihood lost by
/// restricting the prior to the lattice corners. Valid only for
/// δ < √(3/(4p))·k̲/D.
inline double discretization_bound(Eigen::Index p, double k_lower, double diameter, double delta) {
    require(p >= 1 && k_lower > 0.0 && diameter >= 0.0, ErrorCode::InvalidArgument,
            "discretization_bound: invalid arguments");
    const double pd = static_cast<double>(p);
    const double limit = diameter > 0.0 ? std::sqrt(3.0 / (4.0 * pd)) * k_lower / diameter
                                        : std::numeric_limits<double>::infinity();
    if (!(delta > 0.0 && delta < limit))
        throw Error(ErrorCode::DeltaOutOfRange,
                    "delta " + std::to_string(delta) + " outside (0, " + std::to_string(limit) + ")");
    return pd / (k_lower * k_lower) * (2.0 * diameter * diameter + 0.5) * delta * delta;
}

/// Largest δ whose discretization bound stays below (log n)^{p+1}/n, kept
/// strictly inside the bound's validity range.
inline double default_delta(Eigen::Index p, std::size_t n, double k_lower, double diameter) {
    const double pd = static_cast<double>(p);
    const double logn = std::max(std::log(static_cast<double>(n)), 1.0);
    const double target = std::pow(logn, pd + 1.0) / static_cast<double>(n);
    if (diameter <= 0.0)
        return std::sqrt(k_lower);
    const double coef = pd / (k_lower * k_lower) * (2.0 * diameter * diameter + 0.5);
    const double limit = std::sqrt(3.0 / (4.0 * pd)) * k_lower / diameter;
    return std::min(std::sqrt(target / coef), 0.999 * limit);
}

} // namespace npmle
