#pragma once

#include "npmle/ebayes.hpp"
#include "npmle/error.hpp"
#include "npmle/fit.hpp"
#include "npmle/metrics.hpp"
#include "npmle/model.hpp"
#include "npmle/random.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace npmle {

/// Uniform on the circle of the given radius about the origin of ℝ².
struct CirclePrior {
    double radius = 2.0;
    int n_oracle_atoms = 2048;
};

struct DiscretePrior {
    MixingMeasure measure;
};

struct PointMassPrior {
    Vector mu;
};

using PriorSpec = std::variant<CirclePrior, DiscretePrior, PointMassPrior>;

/// Either independent uniform diagonal variances, or a fixed list of
/// covariances cycled through by observation index.
struct NoiseSpec {
    double low = 0.5;
    double high = 0.75;
    std::vector<Covariance> fixed;

    static NoiseSpec diagonal_range(double low, double high) {
        require(low > 0.0 && low <= high, ErrorCode::InvalidArgument, "noise range needs 0 < low <= high");
        return {low, high, {}};
    }
    static NoiseSpec fixed_list(std::vector<Covariance> list) {
        require(!list.empty(), ErrorCode::InvalidArgument, "fixed noise list is empty");
        return {0.0, 0.0, std::move(list)};
    }
};

inline Eigen::Index prior_dim(const PriorSpec& prior) {
    return std::visit(
        [](const auto& p) -> Eigen::Index {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, CirclePrior>)
                return 2;
            else if constexpr (std::is_same_v<T, DiscretePrior>)
                return p.measure.dim();
            else
                return p.mu.size();
        },
        prior);
}

inline void validate_prior(const PriorSpec& prior) {
    if (const auto* c = std::get_if<CirclePrior>(&prior)) {
        require(c->radius > 0.0, ErrorCode::InvalidArgument, "circle radius must be positive");
        require(c->n_oracle_atoms >= 64, ErrorCode::InvalidArgument, "circle oracle needs at least 64 atoms");
    }
}

/// The prior itself for discrete cases; for the circle, n_oracle_atoms equally spaced points.
inline MixingMeasure oracle_measure(const PriorSpec& prior) {
    validate_prior(prior);
    if (const auto* c = std::get_if<CirclePrior>(&prior)) {
        Matrix atoms(2, c->n_oracle_atoms);
        for (int k = 0; k < c->n_oracle_atoms; ++k) {
            const double t = 2.0 * M_PI * k / c->n_oracle_atoms;
            atoms(0, k) = c->radius * std::cos(t);
            atoms(1, k) = c->radius * std::sin(t);
        }
        return MixingMeasure(atoms, Vector::Constant(c->n_oracle_atoms, 1.0 / c->n_oracle_atoms));
    }
    if (const auto* d = std::get_if<DiscretePrior>(&prior))
        return d->measure;
    return MixingMeasure::point_mass(std::get<PointMassPrior>(prior).mu);
}

struct SimulatedData {
    Dataset data;
    std::vector<Vector> truth;
};

namespace detail {
inline constexpr std::uint64_t kObservationStream = 0x6f6273ULL;
} // namespace detail

/// X_i = θ_i + Σ_i^{1/2} Z_i with θ_i iid from the prior. Observation i draws
/// θ_i, then Σ_i, then Z_i from its own stream keyed by (seed, i).
inline SimulatedData generate(const PriorSpec& prior, const NoiseSpec& noise, std::size_t n, std::uint64_t seed) {
    require(n >= 1, ErrorCode::InvalidArgument, "n must be >= 1");
    validate_prior(prior);
    const Eigen::Index p = prior_dim(prior);
    if (noise.fixed.empty())
        require(noise.low > 0.0 && noise.low <= noise.high, ErrorCode::InvalidArgument,
                "noise range needs 0 < low <= high");
    for (const auto& c : noise.fixed)
        require(c.dim() == p, ErrorCode::DimensionMismatch, "noise covariance dimension differs from prior");
    std::optional<std::discrete_distribution<Eigen::Index>> pick;
    if (const auto* d = std::get_if<DiscretePrior>(&prior))
        pick.emplace(d->measure.weights().data(), d->measure.weights().data() + d->measure.size());

    std::vector<Observation> obs;
    std::vector<Vector> truth;
    obs.reserve(n);
    truth.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = keyed_engine(seed, detail::kObservationStream, i);
        Vector theta(p);
        if (const auto* c = std::get_if<CirclePrior>(&prior)) {
            const double t = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI)(rng);
            theta << c->radius * std::cos(t), c->radius * std::sin(t);
        } else if (const auto* d = std::get_if<DiscretePrior>(&prior)) {
            theta = d->measure.atom((*pick)(rng));
        } else {
            theta = std::get<PointMassPrior>(prior).mu;
        }
        Covariance sigma = Covariance::isotropic(p, 1.0);
        if (noise.fixed.empty()) {
            std::uniform_real_distribution<double> u(noise.low, noise.high);
            Vector d(p);
            for (Eigen::Index k = 0; k < p; ++k)
                d[k] = u(rng);
            sigma = Covariance::diagonal(d);
        } else {
            sigma = noise.fixed[i % noise.fixed.size()];
        }
        std::normal_distribution<double> z;
        Vector e(p);
        for (Eigen::Index k = 0; k < p; ++k)
            e[k] = z(rng);
        obs.push_back({theta + sigma.sqrt_multiply(e), sigma});
        truth.push_back(std::move(theta));
    }
    return {Dataset(std::move(obs)), std::move(truth)};
}

/// E_{G*}[θ_i | X_i], with the circle replaced by its equally spaced discretization.
inline std::vector<Vector> oracle_posterior_means(const Dataset& data, const PriorSpec& prior,
                                                  const std::optional<RegularizationPolicy>& policy = std::nullopt) {
    const auto summaries = denoise(data, oracle_measure(prior), policy);
    std::vector<Vector> out;
    out.reserve(summaries.size());
    for (const auto& s : summaries)
        out.push_back(s.mean);
    return out;
}

inline nlohmann::json prior_to_json(const PriorSpec& prior) {
    using nlohmann::json;
    if (const auto* c = std::get_if<CirclePrior>(&prior))
        return {{"kind", "circle"}, {"radius", c->radius}, {"n_oracle_atoms", c->n_oracle_atoms}};
    if (const auto* d = std::get_if<DiscretePrior>(&prior)) {
        json atoms = json::array();
        for (Eigen::Index j = 0; j < d->measure.size(); ++j)
            atoms.push_back(std::vector<double>(d->measure.atoms().col(j).data(),
                                                d->measure.atoms().col(j).data() + d->measure.dim()));
        return {{"kind", "discrete"},
                {"atoms", atoms},
                {"weights", std::vector<double>(d->measure.weights().data(),
                                                d->measure.weights().data() + d->measure.size())}};
    }
    const Vector& mu = std::get<PointMassPrior>(prior).mu;
    return {{"kind", "pointmass"}, {"mu", std::vector<double>(mu.data(), mu.data() + mu.size())}};
}

inline nlohmann::json noise_to_json(const NoiseSpec& noise) {
    if (noise.fixed.empty())
        return {{"kind", "diagonal_range"}, {"low", noise.low}, {"high", noise.high}};
    nlohmann::json list = nlohmann::json::array();
    for (const auto& c : noise.fixed)
        list.push_back(c.lower_triangle());
    return {{"kind", "fixed"}, {"lower_triangles", list}};
}

struct ExperimentConfig {
    std::string name = "circle";
    PriorSpec prior = CirclePrior{};
    NoiseSpec noise;
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    FitOptions fit;
    bool regularize = true; ///< regularized Tweedie with the default ρ for both EB and oracle rules
    std::optional<double> rho;

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json out = {{"name", name},
                              {"prior", prior_to_json(prior)},
                              {"noise", noise_to_json(noise)},
                              {"region", fit.region == RegionMode::Auto   ? "auto"
                                         : fit.region == RegionMode::Hull ? "hull"
                                         : fit.region == RegionMode::BBox ? "bbox"
                                                                          : "ball"},
                              {"solver", to_string(fit.solver.algorithm)},
                              {"dual_gap_tol", fit.solver.dual_gap_tol},
                              {"max_iters", fit.solver.max_iters},
                              {"regularize", regularize}};
        out["delta"] = fit.delta ? nlohmann::json(*fit.delta) : nlohmann::json(nullptr);
        out["rho"] = rho ? nlohmann::json(*rho) : nlohmann::json(nullptr);
        return out;
    }
};

struct ExperimentReport {
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::size_t n = 0;
    Eigen::Index p = 0;
    double mse_raw = 0.0;
    double mse_eb = 0.0;
    double mse_oracle = 0.0;
    double regret = 0.0;
    double loglik = 0.0;
    double dual_gap = 0.0;
    Eigen::Index atoms_kept = 0;
    double wall_ms = 0.0;
    double delta = 0.0;
    bool converged = false;

    // artifacts for plotting; not part of the JSON report
    std::optional<SimulatedData> sample;
    std::vector<Vector> eb_means;
    std::vector<Vector> oracle_means;
    std::optional<MixingMeasure> fitted;

    /// Report fields; wall_ms is the only nondeterministic entry.
    [[nodiscard]] nlohmann::json to_json(bool include_wall = true) const {
        nlohmann::json out = {{"config", config},     {"seed", seed},         {"n", n},
                              {"p", p},               {"mse_raw", mse_raw},   {"mse_eb", mse_eb},
                              {"mse_oracle", mse_oracle}, {"regret", regret}, {"loglik", loglik},
                              {"dual_gap", dual_gap}, {"atoms_kept", atoms_kept}};
        if (include_wall)
            out["wall_ms"] = wall_ms;
        return out;
    }
};

inline double mean_squared_error(const std::vector<Vector>& a, const std::vector<Vector>& b) { return regret(a, b); }

/// generate → fit → denoise, scored against the truth and the oracle rule.
inline ExperimentReport run_regret_experiment(const ExperimentConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    ExperimentReport r;
    r.config = config.to_json();
    r.seed = config.seed;
    r.n = config.n;
    r.p = prior_dim(config.prior);
    r.sample = generate(config.prior, config.noise, config.n, config.seed);
    const Dataset& data = r.sample->data;

    const FitOutput fit = fit_npmle(data, config.fit);
    r.loglik = fit.solve.certificate.loglik;
    r.dual_gap = fit.solve.certificate.dual_gap;
    r.converged = fit.solve.certificate.converged;
    r.atoms_kept = fit.measure.size();
    r.delta = fit.grid.delta;
    r.fitted = fit.measure;

    std::optional<RegularizationPolicy> policy;
    if (config.regularize)
        policy = config.rho ? RegularizationPolicy(*config.rho) : RegularizationPolicy::default_for(r.p, config.n);
    for (const auto& s : denoise(data, fit.measure, policy))
        r.eb_means.push_back(s.mean);
    r.oracle_means = oracle_posterior_means(data, config.prior, policy);

    std::vector<Vector> raw;
    for (const auto& o : data.observations())
        raw.push_back(o.x);
    r.mse_raw = mean_squared_error(raw, r.sample->truth);
    r.mse_eb = mean_squared_error(r.eb_means, r.sample->truth);
    r.mse_oracle = mean_squared_error(r.oracle_means, r.sample->truth);
    r.regret = regret(r.eb_means, r.oracle_means);
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return r;
}

inline double median(std::vector<double> v) {
    require(!v.empty(), ErrorCode::InvalidArgument, "median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline double std_error_of_mean(const std::vector<double>& v) {
    if (v.size() < 2)
        return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v)
        ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

struct ReplicationSummary {
    std::vector<ExperimentReport> runs;

    [[nodiscard]] std::vector<double> field(double ExperimentReport::*member) const {
        std::vector<double> out;
        for (const auto& r : runs)
            out.push_back(r.*member);
        return out;
    }

    [[nodiscard]] nlohmann::json to_json(bool include_wall = true) const {
        nlohmann::json reps = nlohmann::json::array();
        for (const auto& r : runs)
            reps.push_back(r.to_json(include_wall));
        nlohmann::json agg;
        for (const auto& [name, member] : std::vector<std::pair<const char*, double ExperimentReport::*>>{
                 {"mse_raw", &ExperimentReport::mse_raw},
                 {"mse_eb", &ExperimentReport::mse_eb},
                 {"mse_oracle", &ExperimentReport::mse_oracle},
                 {"regret", &ExperimentReport::regret}}) {
            const auto v = field(member);
            agg[name] = {{"median", median(v)}, {"std_error", std_error_of_mean(v)}};
        }
        return {{"replications", reps}, {"aggregate", agg}};
    }
};

/// Built-in designs: "circle" (radius 2), "discrete" (three atoms pairwise
/// 10√(3/4) apart) and "pointmass" (origin); all in two dimensions.
inline PriorSpec named_design(const std::string& name) {
    if (name == "circle")
        return CirclePrior{};
    if (name == "discrete") {
        const double s = 10.0 * std::sqrt(0.75);
        Matrix atoms(2, 3);
        atoms << 0.0, s, 0.0, 0.0, 0.0, s;
        return DiscretePrior{MixingMeasure(atoms, Vector::Constant(3, 1.0 / 3.0))};
    }
    if (name == "pointmass")
        return PointMassPrior{Vector::Zero(2)};
    throw Error(ErrorCode::InvalidArgument, "unknown design '" + name + "'");
}

/// Runs the experiment once per seed base.seed, base.seed + 1, ….
inline ReplicationSummary run_replications(ExperimentConfig base, int reps) {
    require(reps >= 1, ErrorCode::InvalidArgument, "reps must be >= 1");
    ReplicationSummary out;
    const std::uint64_t first = base.seed;
    for (int k = 0; k < reps; ++k) {
        base.seed = first + static_cast<std::uint64_t>(k);
        out.runs.push_back(run_regret_experiment(base));
    }
    return out;
}

struct W2TrendPoint {
    std::size_t n = 0;
    std::vector<double> w2; ///< one per seed
    double median_w2 = 0.0;
    bool support_in_region = true;
};

struct W2TrendReport {
    std::vector<W2TrendPoint> points;
    double slope = 0.0; ///< least-squares slope of log median W₂ against log n

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : points)
            pts.push_back({{"n", p.n}, {"w2", p.w2}, {"median_w2", p.median_w2},
                           {"support_in_region", p.support_in_region}});
        return {{"points", pts}, {"slope", slope}};
    }
};

/// Fits a point-mass-prior sample for each n and seed and records W₂(Ĝ, δ_μ).
inline W2TrendReport run_w2_trend(const PointMassPrior& prior, const std::vector<std::size_t>& n_list,
                                  const std::vector<std::uint64_t>& seeds, const NoiseSpec& noise = {},
                                  const FitOptions& fit = {}) {
    require(!n_list.empty() && !seeds.empty(), ErrorCode::InvalidArgument, "trend needs sizes and seeds");
    for (std::size_t k = 1; k < n_list.size(); ++k)
        require(n_list[k] > n_list[k - 1], ErrorCode::InvalidArgument, "n_list must be increasing");
    W2TrendReport report;
    for (std::size_t n : n_list) {
        W2TrendPoint point;
        point.n = n;
        for (std::uint64_t seed : seeds) {
            const auto sample = generate(prior, noise, n, seed);
            const FitOutput out = fit_npmle(sample.data, fit);
            point.w2.push_back(w2_to_point_mass(out.measure, prior.mu));
            for (Eigen::Index j = 0; j < out.measure.size(); ++j)
                point.support_in_region =
                    point.support_in_region &&
                    region_contains(out.region, out.measure.atom(j), 0.5 * std::sqrt(static_cast<double>(prior.mu.size())) * out.grid.delta);
        }
        point.median_w2 = median(point.w2);
        report.points.push_back(std::move(point));
    }
    if (report.points.size() >= 2) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double k = static_cast<double>(report.points.size());
        for (const auto& p : report.points) {
            const double x = std::log(static_cast<double>(p.n)), y = std::log(p.median_w2);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        report.slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    }
    return report;
}

} // namespace npmle
