#pragma once

#include "npmle/error.hpp"
#include "npmle/kernels.hpp"
#include "npmle/model.hpp"
#include "npmle/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace npmle {

// ---------------------------------------------------------------- Hellinger

enum class HellingerMethod { MonteCarlo, Quadrature };

inline const char* to_string(HellingerMethod m) {
    return m == HellingerMethod::Quadrature ? "quadrature" : "monte_carlo";
}

struct HellingerEstimate {
    double value = 0.0;
    double std_error = 0.0;
    HellingerMethod method = HellingerMethod::MonteCarlo;
    int samples = 0;
};

inline constexpr int kQuadratureNodes = 4096;

namespace detail {

inline double mixture_log_density(const Vector& x, const Covariance& sigma, const MixingMeasure& g) {
    return mixture_eval(x, sigma, g).log_density;
}

/// Draws from Σ_j w_j N(a_j, Σ).
inline Vector sample_mixture(std::mt19937_64& rng, const MixingMeasure& g, const Covariance& sigma,
                             std::discrete_distribution<Eigen::Index>& pick) {
    std::normal_distribution<double> z;
    Vector e(sigma.dim());
    for (Eigen::Index k = 0; k < e.size(); ++k)
        e[k] = z(rng);
    return g.atom(pick(rng)) + sigma.sqrt_multiply(e);
}

inline std::discrete_distribution<Eigen::Index> atom_picker(const MixingMeasure& g) {
    return {g.weights().data(), g.weights().data() + g.weights().size()};
}

/// Hellinger affinity ∫√(fg) for one covariance by importance sampling from (f+g)/2.
/// The weight √(fg)/((f+g)/2) equals sech((log f − log g)/2) and lies in [0, 1].
inline std::pair<double, double> affinity_mc(const MixingMeasure& g, const MixingMeasure& h, const Covariance& sigma,
                                             int samples, std::mt19937_64& rng) {
    auto pick_g = atom_picker(g);
    auto pick_h = atom_picker(h);
    std::bernoulli_distribution coin(0.5);
    double mean = 0.0, m2 = 0.0;
    for (int s = 0; s < samples; ++s) {
        const Vector x = coin(rng) ? sample_mixture(rng, g, sigma, pick_g) : sample_mixture(rng, h, sigma, pick_h);
        const double d = mixture_log_density(x, sigma, g) - mixture_log_density(x, sigma, h);
        const double r = std::isfinite(d) ? 1.0 / std::cosh(0.5 * d) : 0.0;
        const double delta = r - mean;
        mean += delta / (s + 1);
        m2 += delta * (r - mean);
    }
    const double var = samples > 1 ? m2 / (samples - 1) : 0.0;
    return {mean, var / samples};
}

/// ∫√(fg) / √(∫f ∫g) in p = 1 by the trapezoid rule on a fixed node grid.
/// Dividing by the quadrature masses of f and g cancels truncation and makes G = H exact.
inline double affinity_quadrature(const MixingMeasure& g, const MixingMeasure& h, const Covariance& sigma,
                                  double lo, double hi) {
    const double step = (hi - lo) / (kQuadratureNodes - 1);
    double cross = 0.0, mass_g = 0.0, mass_h = 0.0;
    Vector x(1);
    for (int k = 0; k < kQuadratureNodes; ++k) {
        x[0] = lo + step * k;
        const double lg = mixture_log_density(x, sigma, g), lh = mixture_log_density(x, sigma, h);
        const double end = (k == 0 || k == kQuadratureNodes - 1) ? 0.5 : 1.0;
        cross += end * std::exp(0.5 * (lg + lh));
        mass_g += end * std::exp(lg);
        mass_h += end * std::exp(lh);
    }
    return std::min(1.0, cross / std::sqrt(mass_g * mass_h));
}

} // namespace detail

/// h̄² = (1/n) Σ_i h²(f_{G,Σ_i}, f_{H,Σ_i}) with h² = 1 − ∫√(f g).
///
/// Work is done once per distinct Σ_i and weighted by multiplicity. Monte
/// Carlo draws `samples` points per distinct Σ from the stream keyed by
/// (seed, group). Quadrature is p = 1 only and spans the atoms of both
/// measures widened by 6√k̄ on each side.
inline HellingerEstimate avg_hellinger_sq(const MixingMeasure& g, const MixingMeasure& h, const Dataset& data,
                                          int samples, std::uint64_t seed,
                                          HellingerMethod method = HellingerMethod::MonteCarlo) {
    require(samples >= 1, ErrorCode::InvalidArgument, "samples must be >= 1");
    require(g.dim() == data.dim() && h.dim() == data.dim(), ErrorCode::DimensionMismatch,
            "measures and dataset dimensions differ");
    require(method == HellingerMethod::MonteCarlo || data.dim() == 1, ErrorCode::InvalidArgument,
            "quadrature is available only for p = 1");
    const auto& reps = data.group_representatives();
    std::vector<double> share(reps.size(), 0.0);
    for (std::size_t i = 0; i < data.size(); ++i)
        share[data.group_of(i)] += 1.0 / static_cast<double>(data.size());

    HellingerEstimate out;
    out.method = method;
    double variance = 0.0;
    if (method == HellingerMethod::Quadrature) {
        const double pad = 6.0 * std::sqrt(data.k_upper());
        const double lo = std::min(g.atoms().minCoeff(), h.atoms().minCoeff()) - pad;
        const double hi = std::max(g.atoms().maxCoeff(), h.atoms().maxCoeff()) + pad;
        out.samples = kQuadratureNodes;
        for (std::size_t k = 0; k < reps.size(); ++k)
            out.value += share[k] * (1.0 - detail::affinity_quadrature(g, h, data[reps[k]].sigma, lo, hi));
    } else {
        std::vector<std::pair<double, double>> parts(reps.size());
        const auto groups = static_cast<std::ptrdiff_t>(reps.size());
#pragma omp parallel for schedule(dynamic, 1)
        for (std::ptrdiff_t k = 0; k < groups; ++k) {
            auto rng = keyed_engine(seed, 0x4845u, static_cast<std::uint64_t>(k));
            parts[static_cast<std::size_t>(k)] =
                detail::affinity_mc(g, h, data[reps[static_cast<std::size_t>(k)]].sigma, samples, rng);
        }
        out.samples = samples;
        for (std::size_t k = 0; k < reps.size(); ++k) {
            out.value += share[k] * (1.0 - parts[k].first);
            variance += share[k] * share[k] * parts[k].second;
        }
    }
    out.value = std::clamp(out.value, 0.0, 1.0);
    out.std_error = std::sqrt(variance);
    return out;
}

// ------------------------------------------------------------ Wasserstein-2

struct Flow {
    Eigen::Index source = 0;
    Eigen::Index target = 0;
    double mass = 0.0;
};

struct TransportPlan {
    double cost = 0.0; ///< W₂²
    std::vector<Flow> flows;

    [[nodiscard]] double distance() const { return std::sqrt(std::max(cost, 0.0)); }
};

inline constexpr std::size_t kDefaultTransportCap = 10'000'000;

namespace detail {

/// Transportation simplex (MODI) on a dense cost matrix.
///
/// The basis is a spanning tree on the m + k row/column nodes with exactly
/// m + k − 1 cells, some possibly at zero flow.
class TransportSimplex {
public:
    TransportSimplex(const Matrix& cost, const Vector& supply, const Vector& demand)
        : c_(cost), m_(cost.rows()), k_(cost.cols()) {
        initial_basis(supply, demand);
    }

    void solve() {
        const double tol = 1e-12 * (1.0 + c_.cwiseAbs().maxCoeff());
        const long limit = 50L * (m_ + k_) * (m_ + k_) + 1000;
        Eigen::Index cursor = 0;
        for (long it = 0; it < limit; ++it) {
            compute_potentials();
            // partial pricing: scan row blocks from a rolling cursor, stop at the first block with a candidate
            const Eigen::Index block = std::max<Eigen::Index>(1, m_ / 8);
            double best = -tol;
            Eigen::Index bi = -1, bj = -1;
            for (Eigen::Index scanned = 0; scanned < m_; ++scanned) {
                const Eigen::Index i = (cursor + scanned) % m_;
                for (Eigen::Index j = 0; j < k_; ++j) {
                    const double r = c_(i, j) - u_[i] - v_[j];
                    if (r < best) {
                        best = r;
                        bi = i;
                        bj = j;
                    }
                }
                if (bi >= 0 && (scanned + 1) % block == 0) {
                    cursor = (i + 1) % m_;
                    break;
                }
            }
            if (bi < 0)
                return;
            pivot(bi, bj);
        }
        throw Error(ErrorCode::NonConvergence, "transportation simplex exceeded its pivot limit");
    }

    [[nodiscard]] TransportPlan plan() const {
        TransportPlan out;
        for (const auto& cell : cells_) {
            if (cell.flow <= 0.0)
                continue;
            out.flows.push_back({cell.row, cell.col, cell.flow});
            out.cost += cell.flow * c_(cell.row, cell.col);
        }
        std::sort(out.flows.begin(), out.flows.end(), [](const Flow& a, const Flow& b) {
            return a.source != b.source ? a.source < b.source : a.target < b.target;
        });
        return out;
    }

private:
    struct Cell {
        Eigen::Index row;
        Eigen::Index col;
        double flow;
    };

    // node ids: rows 0..m−1, columns m..m+k−1
    [[nodiscard]] Eigen::Index col_node(Eigen::Index j) const { return m_ + j; }

    void initial_basis(const Vector& supply, const Vector& demand) {
        // least-cost rule: every placed cell exhausts its row or column, so the cells form a forest
        std::vector<Eigen::Index> order(static_cast<std::size_t>(m_ * k_));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return c_(a % m_, a / m_) < c_(b % m_, b / m_); });
        Vector s = supply, d = demand;
        std::vector<bool> row_done(static_cast<std::size_t>(m_), false), col_done(static_cast<std::size_t>(k_), false);
        std::vector<Eigen::Index> parent(static_cast<std::size_t>(m_ + k_));
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](Eigen::Index x) {
            while (parent[static_cast<std::size_t>(x)] != x)
                x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            return x;
        };
        auto add = [&](Eigen::Index i, Eigen::Index j, double flow) {
            parent[static_cast<std::size_t>(find(i))] = find(col_node(j));
            cells_.push_back({i, j, flow});
        };
        for (Eigen::Index idx : order) {
            const Eigen::Index i = idx % m_, j = idx / m_;
            if (row_done[static_cast<std::size_t>(i)] || col_done[static_cast<std::size_t>(j)])
                continue;
            const double x = std::min(s[i], d[j]);
            add(i, j, x);
            s[i] -= x;
            d[j] -= x;
            // close exactly one side unless this is the last open pair, which keeps the forest acyclic
            if (s[i] <= d[j])
                row_done[static_cast<std::size_t>(i)] = true;
            else
                col_done[static_cast<std::size_t>(j)] = true;
            if (static_cast<Eigen::Index>(cells_.size()) == m_ + k_ - 1)
                break;
        }
        // join remaining components with zero-flow cells
        for (Eigen::Index idx : order) {
            if (static_cast<Eigen::Index>(cells_.size()) == m_ + k_ - 1)
                break;
            const Eigen::Index i = idx % m_, j = idx / m_;
            if (find(i) != find(col_node(j)))
                add(i, j, 0.0);
        }
        rebuild_adjacency();
    }

    void rebuild_adjacency() {
        adj_.assign(static_cast<std::size_t>(m_ + k_), {});
        for (std::size_t c = 0; c < cells_.size(); ++c) {
            adj_[static_cast<std::size_t>(cells_[c].row)].push_back(c);
            adj_[static_cast<std::size_t>(col_node(cells_[c].col))].push_back(c);
        }
    }

    [[nodiscard]] Eigen::Index other_end(const Cell& cell, Eigen::Index node) const {
        return node < m_ ? col_node(cell.col) : cell.row;
    }

    /// BFS over the tree from `root`; fills parent cell per node.
    void traverse(Eigen::Index root, std::vector<std::ptrdiff_t>& via, std::vector<Eigen::Index>& order) const {
        via.assign(static_cast<std::size_t>(m_ + k_), -2);
        order.clear();
        via[static_cast<std::size_t>(root)] = -1;
        order.push_back(root);
        for (std::size_t head = 0; head < order.size(); ++head) {
            const Eigen::Index node = order[head];
            for (std::size_t c : adj_[static_cast<std::size_t>(node)]) {
                const Eigen::Index next = other_end(cells_[c], node);
                if (via[static_cast<std::size_t>(next)] != -2)
                    continue;
                via[static_cast<std::size_t>(next)] = static_cast<std::ptrdiff_t>(c);
                order.push_back(next);
            }
        }
    }

    void compute_potentials() {
        u_.assign(static_cast<std::size_t>(m_), 0.0);
        v_.assign(static_cast<std::size_t>(k_), 0.0);
        traverse(0, via_, order_);
        for (std::size_t q = 1; q < order_.size(); ++q) {
            const Eigen::Index node = order_[q];
            const Cell& cell = cells_[static_cast<std::size_t>(via_[static_cast<std::size_t>(node)])];
            const double cost = c_(cell.row, cell.col);
            if (node < m_)
                u_[static_cast<std::size_t>(node)] = cost - v_[static_cast<std::size_t>(cell.col)];
            else
                v_[static_cast<std::size_t>(node - m_)] = cost - u_[static_cast<std::size_t>(cell.row)];
        }
    }

    void pivot(Eigen::Index ei, Eigen::Index ej) {
        // tree path from column ej back to row ei closes the cycle with the entering cell
        traverse(ei, via_, order_);
        std::vector<std::size_t> path;
        for (Eigen::Index node = col_node(ej); node != ei;) {
            const auto c = static_cast<std::size_t>(via_[static_cast<std::size_t>(node)]);
            path.push_back(c);
            node = other_end(cells_[c], node);
        }
        // cells at even positions along the path lose flow
        double theta = std::numeric_limits<double>::infinity();
        std::size_t leave = 0;
        for (std::size_t q = 0; q < path.size(); q += 2)
            if (cells_[path[q]].flow < theta) {
                theta = cells_[path[q]].flow;
                leave = path[q];
            }
        for (std::size_t q = 0; q < path.size(); ++q)
            cells_[path[q]].flow += (q % 2 == 0) ? -theta : theta;
        cells_[leave] = {ei, ej, theta};
        rebuild_adjacency();
    }

    const Matrix& c_;
    Eigen::Index m_, k_;
    std::vector<Cell> cells_;
    std::vector<std::vector<std::size_t>> adj_;
    std::vector<double> u_, v_;
    std::vector<std::ptrdiff_t> via_;
    std::vector<Eigen::Index> order_;
};

inline Matrix squared_distances(const Matrix& a, const Matrix& b) {
    Matrix c(a.cols(), b.cols());
    for (Eigen::Index j = 0; j < b.cols(); ++j)
        c.col(j) = (a.colwise() - b.col(j)).colwise().squaredNorm().transpose();
    return c;
}

} // namespace detail

/// Exact W₂² between discrete measures with cost ‖a_i − b_j‖².
inline TransportPlan wasserstein2(const MixingMeasure& g, const MixingMeasure& h,
                                  std::size_t cap = kDefaultTransportCap) {
    require(g.dim() == h.dim(), ErrorCode::DimensionMismatch, "measures have different dimensions");
    require(static_cast<double>(g.size()) * static_cast<double>(h.size()) <= static_cast<double>(cap),
            ErrorCode::SizeLimit,
            "cost matrix " + std::to_string(g.size()) + " x " + std::to_string(h.size()) + " exceeds cap");
    const Matrix cost = detail::squared_distances(g.atoms(), h.atoms());
    detail::TransportSimplex simplex(cost, g.weights(), h.weights());
    simplex.solve();
    return simplex.plan();
}

/// W₂(G, δ_μ) = √(Σ_j w_j ‖a_j − μ‖²); the coupling to a point mass is unique.
inline double w2_to_point_mass(const MixingMeasure& g, const Vector& mu) {
    require(g.dim() == mu.size(), ErrorCode::DimensionMismatch, "point and measure dimensions differ");
    return std::sqrt(g.weights().dot((g.atoms().colwise() - mu).colwise().squaredNorm().transpose()));
}

/// (1/n) Σ_i ‖θ̂_i − θ*_i‖².
inline double regret(const std::vector<Vector>& estimates, const std::vector<Vector>& oracle) {
    require(estimates.size() == oracle.size(), ErrorCode::LengthMismatch,
            "estimates and oracle have different lengths");
    require(!estimates.empty(), ErrorCode::LengthMismatch, "regret of an empty list");
    double total = 0.0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        require(estimates[i].size() == oracle[i].size(), ErrorCode::LengthMismatch,
                "row " + std::to_string(i) + " has mismatched dimensions");
        total += (estimates[i] - oracle[i]).squaredNorm();
    }
    return total / static_cast<double>(estimates.size());
}

/// Mean log-likelihood of the data under G minus that under H.
inline double loglik_gap(const Dataset& data, const MixingMeasure& g, const MixingMeasure& h) {
    return mixture_loglik(kernel_matrix(data, g.atoms()), g.weights()) -
           mixture_loglik(kernel_matrix(data, h.atoms()), h.weights());
}

} // namespace npmle
