#pragma once

#include "npmle/error.hpp"
#include "npmle/kernels.hpp"
#include "npmle/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace npmle {

enum class Algorithm { EM, FrankWolfe, ProjNewton };

inline const char* to_string(Algorithm a) {
    switch (a) {
    case Algorithm::EM: return "em";
    case Algorithm::FrankWolfe: return "frank_wolfe";
    case Algorithm::ProjNewton: return "proj_newton";
    }
    return "unknown";
}

inline Algorithm parse_algorithm(const std::string& s) {
    if (s == "em") return Algorithm::EM;
    if (s == "fw" || s == "frank_wolfe") return Algorithm::FrankWolfe;
    if (s == "newton" || s == "proj_newton") return Algorithm::ProjNewton;
    throw Error(ErrorCode::InvalidArgument, "unknown solver '" + s + "'");
}

struct SolverConfig {
    Algorithm algorithm = Algorithm::ProjNewton;
    int max_iters = 10000;
    double dual_gap_tol = 1e-6;
    /// Frank–Wolfe and Newton stop as stalled when, over a window of recent
    /// iterations (500 for Frank–Wolfe, 25 for Newton), the mean
    /// log-likelihood gained less than this (relative) and the dual gap set
    /// no new minimum.
    double rel_loglik_tol = 1e-10;
    double prune_weight_tol = 1e-10;
    int em_warm_start = 50;

    void validate() const {
        require(max_iters >= 1, ErrorCode::InvalidArgument, "max_iters must be >= 1");
        require(dual_gap_tol > 0.0 && rel_loglik_tol > 0.0 && prune_weight_tol > 0.0, ErrorCode::InvalidArgument,
                "solver tolerances must be positive");
        require(em_warm_start >= 0, ErrorCode::InvalidArgument, "em_warm_start must be >= 0");
    }
};

/// Evidence of (near-)optimality of a weight vector on a fixed grid.
struct FitCertificate {
    double loglik = 0.0;     ///< mean log-likelihood
    Vector fitted_L;         ///< f_{Ĝ,Σ_i}(X_i)
    Vector log_fitted_L;     ///< log f_{Ĝ,Σ_i}(X_i)
    double dual_gap = 0.0;   ///< max_j D(Ĝ, a_j) over the grid
    int iters = 0;
    std::vector<double> trace;
    bool converged = false;
    Algorithm algorithm = Algorithm::ProjNewton;
};

struct SolveResult {
    Vector weights;
    FitCertificate certificate;
};

class NonConvergenceError : public Error {
public:
    explicit NonConvergenceError(SolveResult partial)
        : Error(ErrorCode::NonConvergence, "dual gap " + std::to_string(partial.certificate.dual_gap) +
                                               " after " + std::to_string(partial.certificate.iters) + " iterations"),
          partial_(std::move(partial)) {}

    [[nodiscard]] const SolveResult& partial() const noexcept { return partial_; }

private:
    SolveResult partial_;
};

/// Called once per iterate (including the starting point) with the current weights.
using IterateObserver = std::function<void(int iter, const Vector& weights, double loglik)>;

/// Gradient functional D(G, a_j) = (1/n) Σ_i φ_{Σ_i}(X_i − a_j) / f_{G,Σ_i}(X_i) − 1 at every grid atom.
inline Vector dual_values(const LogKernelMatrix& kernel, const Vector& weights) {
    require(weights.size() == kernel.cols(), ErrorCode::DimensionMismatch, "weight length does not match kernel");
    const Vector f = kernel.shifted() * weights;
    for (Eigen::Index i = 0; i < f.size(); ++i)
        require(f[i] > 0.0, ErrorCode::ZeroLikelihoodRow, "row " + std::to_string(i) + " has zero likelihood");
    const double n = static_cast<double>(kernel.rows());
    return (kernel.shifted().transpose() * f.cwiseInverse()).array() / n - 1.0;
}

/// One EM update of the mixing proportions: w_j ← w_j (1/n) Σ_i L_ij / Σ_k L_ik w_k.
inline Vector em_step(const LogKernelMatrix& kernel, const Vector& weights) {
    require(weights.size() == kernel.cols(), ErrorCode::DimensionMismatch, "weight length does not match kernel");
    const Vector f = kernel.shifted() * weights;
    for (Eigen::Index i = 0; i < f.size(); ++i)
        require(f[i] > 0.0, ErrorCode::AllWeightsOnUnderflowedAtoms,
                "row " + std::to_string(i) + " has zero likelihood under the weighted atoms");
    const double n = static_cast<double>(kernel.rows());
    Vector next = weights.cwiseProduct(kernel.shifted().transpose() * f.cwiseInverse()) / n;
    return next / next.sum();
}

/// Dual mixture density ψ̂(θ) = Σ_i (L_i⁻¹ / Σ_ι L_ι⁻¹) φ_{Σ_i}(X_i − θ).
inline double dual_density(const Vector& theta, const Dataset& data, const Vector& fitted_L) {
    require(static_cast<std::size_t>(fitted_L.size()) == data.size(), ErrorCode::LengthMismatch,
            "fitted likelihoods do not match dataset size");
    require(fitted_L.minCoeff() > 0.0, ErrorCode::InvalidArgument, "fitted likelihoods must be positive");
    const Vector inv = fitted_L.cwiseInverse();
    const double total = inv.sum();
    double value = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        value += inv[static_cast<Eigen::Index>(i)] / total * std::exp(log_gauss(data[i].x, theta, data[i].sigma));
    return value;
}

/// Upper bound log(1 + gap) on the grid-optimal mean log-likelihood minus the achieved one.
inline double loglik_suboptimality_bound(const FitCertificate& cert) {
    return std::log1p(std::max(cert.dual_gap, 0.0));
}

/// log of e^{−nq − log n} / (e √det(2πΣ)), the smallest likelihood any
/// observation can have under a q-suboptimal fit.
inline double log_likelihood_floor(std::size_t n, double q, const Covariance& sigma) {
    const double nd = static_cast<double>(n);
    const double p = static_cast<double>(sigma.dim());
    return -nd * q - std::log(nd) - 1.0 - 0.5 * (p * kLog2Pi + sigma.log_det());
}

/// Euclidean projection onto the probability simplex.
inline Vector project_to_simplex(const Vector& v) {
    std::vector<double> u(v.data(), v.data() + v.size());
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        cumulative += u[k];
        const double t = (cumulative - 1.0) / static_cast<double>(k + 1);
        if (u[k] - t > 0.0)
            theta = t;
    }
    return (v.array() - theta).max(0.0).matrix();
}

namespace detail {

/// Evaluation state shared by the solvers: the shifted kernel S and the row sums f̃ = S w.
class Objective {
public:
    explicit Objective(const LogKernelMatrix& kernel) : kernel_(kernel), n_(static_cast<double>(kernel.rows())) {}

    [[nodiscard]] const RowMatrix& shifted() const { return kernel_.shifted(); }
    [[nodiscard]] double n() const { return n_; }

    [[nodiscard]] Vector row_sums(const Vector& w) const { return kernel_.shifted() * w; }

    /// Mean log-likelihood from row sums; −∞ if any row underflowed.
    [[nodiscard]] double value(const Vector& f) const {
        if (f.minCoeff() <= 0.0)
            return -std::numeric_limits<double>::infinity();
        return f.array().log().mean() + kernel_.row_max().mean();
    }

    [[nodiscard]] Vector dual(const Vector& f) const {
        return (kernel_.shifted().transpose() * f.cwiseInverse()).array() / n_ - 1.0;
    }

private:
    const LogKernelMatrix& kernel_;
    double n_;
};

/// Maximizes γ ↦ (1/n) Σ log(f_i + γ s_i) on [0, γ_max]; the map is concave.
inline double line_search(const Vector& f, const Vector& s, double gamma_max) {
    auto slope = [&](double g) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < f.size(); ++i) {
            const double denom = f[i] + g * s[i];
            if (denom <= 0.0)
                return s[i] < 0.0 ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
            acc += s[i] / denom;
        }
        return acc;
    };
    if (slope(0.0) <= 0.0)
        return 0.0;
    if (slope(gamma_max) >= 0.0)
        return gamma_max;
    double lo = 0.0, hi = gamma_max;
    for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        (slope(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

inline Eigen::Index argmax_lowest(const Vector& v) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < v.size(); ++j)
        if (v[j] > v[best])
            best = j;
    return best;
}

struct Progress {
    std::vector<double> trace;
    int iters = 0;
    double gap = std::numeric_limits<double>::infinity();
    double best_gap = std::numeric_limits<double>::infinity();
    int best_gap_iter = 0;

    void record_gap(double g) {
        gap = g;
        if (g < best_gap) {
            best_gap = g;
            best_gap_iter = iters;
        }
    }

    [[nodiscard]] bool stalled(std::size_t window, double rel_tol) const {
        if (trace.size() <= window || iters - best_gap_iter < static_cast<int>(window))
            return false;
        const double now = trace.back();
        return now - trace[trace.size() - 1 - window] <= rel_tol * std::max(1.0, std::abs(now));
    }
};

/// EM updates touch only the columns with positive weight, since a zero weight
/// stays zero. The full dual is formed only when the active columns already
/// meet the tolerance; the stopping iteration is the same as with full products.
inline void run_em(const Objective& obj, Vector& w, int iterations, double tol, Progress& prog,
                   const IterateObserver& observe) {
    const RowMatrix& S = obj.shifted();
    std::vector<Eigen::Index> active;
    RowMatrix sub;
    Vector wa;
    auto gather = [&] {
        active.clear();
        for (Eigen::Index j = 0; j < w.size(); ++j)
            if (w[j] > 0.0)
                active.push_back(j);
        sub.resize(S.rows(), static_cast<Eigen::Index>(active.size()));
        wa.resize(sub.cols());
        for (Eigen::Index k = 0; k < sub.cols(); ++k) {
            sub.col(k) = S.col(active[static_cast<std::size_t>(k)]);
            wa[k] = w[active[static_cast<std::size_t>(k)]];
        }
    };
    gather();
    Vector f = sub * wa;
    for (int it = 0; it < iterations; ++it) {
        const Vector da = (sub.transpose() * f.cwiseInverse()).array() / obj.n() - 1.0;
        prog.gap = da.maxCoeff();
        if (prog.gap <= tol) {
            prog.gap = obj.dual(f).maxCoeff();
            if (prog.gap <= tol)
                return;
        }
        wa = wa.cwiseProduct((da.array() + 1.0).matrix());
        // geometric decay drives dead atoms subnormal, which stalls the arithmetic
        const bool flushed = (wa.array() < std::numeric_limits<double>::min()).any();
        wa = (wa.array() < std::numeric_limits<double>::min()).select(0.0, wa);
        wa /= wa.sum();
        for (Eigen::Index k = 0; k < wa.size(); ++k)
            w[active[static_cast<std::size_t>(k)]] = wa[k];
        if (flushed)
            gather();
        f = sub * wa;
        ++prog.iters;
        prog.trace.push_back(obj.value(f));
        if (observe)
            observe(prog.iters, w, prog.trace.back());
    }
    prog.gap = obj.dual(f).maxCoeff();
}

/// One away-step Frank–Wolfe update with exact line search. Returns false if no progress was possible.
inline bool frank_wolfe_step(const Objective& obj, Vector& w, Vector& f, const Vector& d) {
    const Eigen::Index toward = argmax_lowest(d);
    Eigen::Index away = -1;
    for (Eigen::Index j = 0; j < w.size(); ++j)
        if (w[j] > 0.0 && (away < 0 || d[j] < d[away]))
            away = j;
    const double fw_gap = d[toward];
    const double away_gap = away >= 0 ? -d[away] : 0.0;
    if (fw_gap >= away_gap) {
        const Vector s = obj.shifted().col(toward) - f;
        const double gamma = line_search(f, s, 1.0);
        if (gamma <= 0.0)
            return false;
        w *= (1.0 - gamma);
        w[toward] += gamma;
        f += gamma * s;
    } else {
        const double wv = w[away];
        const double gamma_max = wv / (1.0 - wv);
        const Vector s = f - obj.shifted().col(away);
        const double gamma = line_search(f, s, gamma_max);
        if (gamma <= 0.0)
            return false;
        w *= (1.0 + gamma);
        w[away] -= gamma;
        if (gamma >= gamma_max)
            w[away] = 0.0;
        f += gamma * s;
    }
    w = w.cwiseMax(0.0);
    w /= w.sum();
    return true;
}

inline void run_frank_wolfe(const Objective& obj, Vector& w, int max_iters, double tol, double rel_tol,
                            Progress& prog, const IterateObserver& observe) {
    Vector f = obj.row_sums(w);
    while (prog.iters < max_iters) {
        const Vector d = obj.dual(f);
        prog.record_gap(d.maxCoeff());
        if (prog.gap <= tol)
            return;
        if (!frank_wolfe_step(obj, w, f, d))
            break;
        ++prog.iters;
        if (prog.iters % 64 == 0)
            f = obj.row_sums(w);
        prog.trace.push_back(obj.value(f));
        if (observe)
            observe(prog.iters, w, prog.trace.back());
        if (prog.stalled(500, rel_tol))
            break;
    }
    f = obj.row_sums(w);
    prog.gap = obj.dual(f).maxCoeff();
}

/// Active-set solve of min_y ½ yᵀHy + bᵀy over y ≥ 0, where H = ZᵀZ/n and
/// Z = diag(finv) S. Only the columns of the free set are formed. A small
/// proximal term ε‖y − center‖² keeps H_FF invertible when free atoms are
/// nearly collinear without moving the fixed point y = center.
inline Vector active_set_qp(const Objective& obj, const Vector& finv, const Vector& b, const Vector& center, Vector y,
                            int max_steps) {
    const Eigen::Index rows = finv.size();
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < y.size(); ++j)
        if (y[j] > 0.0)
            free.push_back(j);
    for (int step = 0; step < max_steps; ++step) {
        const auto k = static_cast<Eigen::Index>(free.size());
        Matrix z(rows, k);
        Vector bf(k), yf(k);
        for (Eigen::Index c = 0; c < k; ++c) {
            const Eigen::Index j = free[static_cast<std::size_t>(c)];
            z.col(c) = obj.shifted().col(j).cwiseProduct(finv);
            bf[c] = b[j];
            yf[c] = y[j];
        }
        Vector sol(k);
        if (k > 0) {
            Matrix h = z.transpose() * z / obj.n();
            const double eps = 1e-10 * (1.0 + h.diagonal().maxCoeff());
            h.diagonal().array() += eps;
            Vector rhs = -bf;
            for (Eigen::Index c = 0; c < k; ++c)
                rhs[c] += eps * center[free[static_cast<std::size_t>(c)]];
            sol = h.ldlt().solve(rhs);
        }
        if (k == 0 || sol.minCoeff() > 0.0) {
            for (Eigen::Index c = 0; c < k; ++c)
                y[free[static_cast<std::size_t>(c)]] = sol[c];
            const Vector zy = k > 0 ? Vector(z * sol) : Vector::Zero(rows);
            const Vector mu = (obj.shifted().transpose() * zy.cwiseProduct(finv)) / obj.n() + b;
            Eigen::Index enter = -1;
            for (Eigen::Index j = 0; j < mu.size(); ++j)
                if (y[j] <= 0.0 && mu[j] < -1e-10 && (enter < 0 || mu[j] < mu[enter]))
                    enter = j;
            if (enter < 0)
                return y;
            free.insert(std::lower_bound(free.begin(), free.end(), enter), enter);
            continue;
        }
        // move toward the unconstrained solution until the first free coordinate hits zero
        double alpha = 1.0;
        for (Eigen::Index c = 0; c < k; ++c)
            if (sol[c] <= 0.0)
                alpha = std::min(alpha, yf[c] / (yf[c] - sol[c]));
        std::vector<Eigen::Index> kept;
        for (Eigen::Index c = 0; c < k; ++c) {
            const Eigen::Index j = free[static_cast<std::size_t>(c)];
            const double v = yf[c] + alpha * (sol[c] - yf[c]);
            y[j] = (sol[c] <= 0.0 && v <= 1e-14 * std::max(1.0, yf[c])) ? 0.0 : std::max(v, 0.0);
            if (y[j] > 0.0)
                kept.push_back(j);
        }
        free = std::move(kept);
    }
    return y;
}

/// Sequential quadratic programming on φ(x) = −(1/n) Σ log (Sx)_i + Σ x over
/// x ≥ 0. Minimizers of φ sum to one, so normalizing recovers the simplex
/// problem; every reported iterate is normalized.
inline void run_proj_newton(const Objective& obj, Vector& w, const SolverConfig& cfg, Progress& prog,
                            const IterateObserver& observe) {
    const auto n = static_cast<Eigen::Index>(obj.n());
    const auto support_cap = std::min<Eigen::Index>(w.size(), n + 10);
    Vector x = w;
    Vector f = obj.row_sums(x);
    auto phi = [&](const Vector& rows, double mass) { return -obj.value(rows) + mass; };
    while (prog.iters < cfg.max_iters) {
        const double mass = x.sum();
        const Vector d = obj.dual(f); // at the unnormalized x
        prog.record_gap(((d.array() + 1.0) * mass - 1.0).maxCoeff());
        if (prog.gap <= cfg.dual_gap_tol)
            break;

        const Vector finv = f.cwiseInverse();
        const Vector b = -(2.0 * d.array() + 1.0).matrix();
        Vector start = Vector::Zero(x.size());
        if ((x.array() > 0.0).count() <= support_cap)
            start = x;
        const Vector y = active_set_qp(obj, finv, b, x, start, 4 * static_cast<int>(support_cap) + 50);
        const Vector p = y - x;
        const Vector sp = obj.shifted() * p;
        const double slope = -d.dot(p);
        const double base = phi(f, mass);
        double alpha = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 50; ++ls, alpha *= 0.5) {
            const Vector ft = f + alpha * sp;
            if (phi(ft, mass + alpha * p.sum()) <= base + 1e-2 * alpha * std::min(slope, 0.0)) {
                accepted = true;
                break;
            }
        }
        if (!accepted)
            break;
        x = (x + alpha * p).cwiseMax(0.0);
        f = obj.row_sums(x);

        ++prog.iters;
        w = x / x.sum();
        prog.trace.push_back(obj.value(f / x.sum()));
        if (observe)
            observe(prog.iters, w, prog.trace.back());
        if (prog.stalled(25, cfg.rel_loglik_tol))
            break;
    }
    w = x / x.sum();
    prog.gap = obj.dual(obj.row_sums(w)).maxCoeff();
}

} // namespace detail

/// Recomputes the certificate (log-likelihoods, fitted likelihoods, dual gap) for fixed weights.
inline FitCertificate certify_weights(const LogKernelMatrix& kernel, const Vector& weights) {
    FitCertificate cert;
    cert.log_fitted_L = row_log_likelihoods(kernel, weights);
    cert.fitted_L = cert.log_fitted_L.array().exp().matrix();
    cert.loglik = cert.log_fitted_L.mean();
    cert.dual_gap = dual_values(kernel, weights).maxCoeff();
    return cert;
}

/// Maximizes (1/n) Σ_i log Σ_j L_ij w_j over the simplex.
///
/// All algorithms start from uniform weights. After convergence, weights at
/// or below prune_weight_tol are zeroed and the rest renormalized, unless that
/// pushes a converged gap back over the tolerance. The certificate describes
/// the returned weights. Throws NonConvergenceError
/// (carrying the partial result) if the dual gap tolerance was not reached.
inline SolveResult solve_weights(const LogKernelMatrix& kernel, const SolverConfig& config,
                                 const IterateObserver& observe = {}) {
    config.validate();
    const Eigen::Index m = kernel.cols();
    detail::Objective obj(kernel);
    Vector w = Vector::Constant(m, 1.0 / static_cast<double>(m));
    require(obj.value(obj.row_sums(w)) > -std::numeric_limits<double>::infinity(),
            ErrorCode::AllWeightsOnUnderflowedAtoms, "some observation has zero likelihood at every grid atom");
    detail::Progress prog;
    prog.trace.push_back(obj.value(obj.row_sums(w)));
    if (observe)
        observe(0, w, prog.trace.back());

    switch (config.algorithm) {
    case Algorithm::EM:
        detail::run_em(obj, w, config.max_iters, config.dual_gap_tol, prog, observe);
        break;
    case Algorithm::FrankWolfe:
        detail::run_frank_wolfe(obj, w, config.max_iters, config.dual_gap_tol, config.rel_loglik_tol, prog, observe);
        break;
    case Algorithm::ProjNewton:
        detail::run_em(obj, w, std::min(config.em_warm_start, config.max_iters), config.dual_gap_tol, prog, observe);
        if (prog.gap > config.dual_gap_tol)
            detail::run_proj_newton(obj, w, config, prog, observe);
        break;
    }

    Vector pruned = (w.array() > config.prune_weight_tol).select(w, 0.0);
    if (pruned.sum() <= 0.0)
        pruned = w;
    pruned /= pruned.sum();
    if (obj.value(obj.row_sums(pruned)) == -std::numeric_limits<double>::infinity())
        pruned = w;

    SolveResult result;
    result.weights = pruned;
    result.certificate = certify_weights(kernel, pruned);
    if (result.certificate.dual_gap > config.dual_gap_tol && prog.gap <= config.dual_gap_tol) {
        // pruning must not undo a certified optimum
        result.weights = w;
        result.certificate = certify_weights(kernel, w);
    }
    result.certificate.iters = prog.iters;
    result.certificate.trace = std::move(prog.trace);
    result.certificate.algorithm = config.algorithm;
    result.certificate.converged = result.certificate.dual_gap <= config.dual_gap_tol;
    if (!result.certificate.converged)
        throw NonConvergenceError(std::move(result));
    return result;
}

} // namespace npmle
