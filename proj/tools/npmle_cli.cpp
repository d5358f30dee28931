// npmle: fit, denoise, simulate and certify from the command line.
//
// Exit codes: 0 success, 1 parse or validation error, 2 grid too large,
// 3 solver did not reach its dual-gap tolerance (model still written),
// 4 certification failed. Every flag can also be set through an
// environment variable named NPMLE_<FLAG>, e.g. NPMLE_DELTA=0.1.

#include "npmle/certify.hpp"
#include "npmle/ebayes.hpp"
#include "npmle/fit.hpp"
#include "npmle/io.hpp"
#include "npmle/sim.hpp"
#include "npmle/version.hpp"

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace npmle;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitGrid = 2;
constexpr int kExitNonConvergence = 3;
constexpr int kExitCertify = 4;

struct FitFlags {
    std::string region = "auto";
    std::optional<double> delta;
    std::string solver = "newton";
    double tol = 1e-6;
    int max_iters = 10000;
    double prune = 1e-10;
    std::uint64_t seed = 0;
    std::size_t grid_cap = kDefaultGridCap;

    [[nodiscard]] FitOptions options() const {
        FitOptions o;
        o.region = parse_region_mode(region);
        o.delta = delta;
        o.solver.algorithm = parse_algorithm(solver);
        o.solver.dual_gap_tol = tol;
        o.solver.max_iters = max_iters;
        o.solver.prune_weight_tol = prune;
        o.solver.validate();
        o.grid_cap = grid_cap;
        if (delta)
            require(*delta > 0.0, ErrorCode::InvalidArgument, "--delta must be positive");
        return o;
    }
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
    cmd->add_option("--region", f.region, "support region: auto|hull|bbox|ball")
        ->envname("NPMLE_REGION")
        ->check(CLI::IsMember({"auto", "hull", "bbox", "ball"}));
    cmd->add_option("--delta", f.delta, "grid width (default: chosen from n, p and the region)")->envname("NPMLE_DELTA");
    cmd->add_option("--solver", f.solver, "em|fw|newton")
        ->envname("NPMLE_SOLVER")
        ->check(CLI::IsMember({"em", "fw", "frank_wolfe", "newton", "proj_newton"}));
    cmd->add_option("--tol", f.tol, "dual-gap tolerance")->envname("NPMLE_TOL");
    cmd->add_option("--max-iters", f.max_iters, "solver iteration limit")->envname("NPMLE_MAX_ITERS");
    cmd->add_option("--prune", f.prune, "weights at or below this are dropped")->envname("NPMLE_PRUNE");
    cmd->add_option("--seed", f.seed, "random seed")->envname("NPMLE_SEED");
    cmd->add_option("--grid-cap", f.grid_cap, "largest admissible grid")->envname("NPMLE_GRID_CAP");
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-")
        std::cout << text;
    else
        write_file(path, text);
}

std::string vector_cells(const Vector& v) {
    std::string out;
    for (Eigen::Index k = 0; k < v.size(); ++k)
        out += (k > 0 ? "," : "") + format_double(v[k]);
    return out;
}

std::string coord_header(const std::string& stem, Eigen::Index p) {
    std::string out;
    for (Eigen::Index k = 1; k <= p; ++k)
        out += (k > 1 ? "," : "") + stem + "_" + std::to_string(k);
    return out;
}

int cmd_fit(const std::string& input, const std::string& output, const FitFlags& flags) {
    const auto parsed = read_input(input);
    const FitOptions options = flags.options();
    const FitOutput fit = fit_npmle(parsed.data, options);
    const Provenance prov{hash_label(read_file(input)), flags.seed, kVersion};
    const auto model = make_model_file(fit, parsed.data, prov, options.solver);
    emit(output, model_to_text(model));
    const auto& cert = fit.solve.certificate;
    std::cerr << "fit: n=" << parsed.data.size() << " p=" << parsed.data.dim() << " grid=" << fit.grid.size()
              << " delta=" << format_double(fit.grid.delta) << " atoms=" << fit.measure.size()
              << " loglik=" << format_double(cert.loglik) << " dual_gap=" << format_double(cert.dual_gap)
              << " iters=" << cert.iters << (cert.converged ? "" : " NOT CONVERGED") << "\n";
    return cert.converged ? kExitOk : kExitNonConvergence;
}

int cmd_denoise(const std::string& input, const std::string& model_path, const std::string& output,
                std::optional<double> rho) {
    const auto parsed = read_input(input);
    const auto model = read_model(model_path);
    const Dataset& data = parsed.data;
    require(model.dim == data.dim(), ErrorCode::DimensionMismatch,
            "model dimension " + std::to_string(model.dim) + " differs from input dimension " + std::to_string(data.dim()));
    const RegularizationPolicy policy =
        rho ? RegularizationPolicy(*rho) : RegularizationPolicy::default_for(data.dim(), data.size());
    const auto summaries = denoise(data, model.measure(), policy);

    std::ostringstream out;
    for (std::size_t k = 0; k < parsed.table.header.size(); ++k)
        out << (k > 0 ? "," : "") << parsed.table.header[k];
    out << "," << coord_header("thetahat", data.dim()) << ",max_responsibility,used_regularization\n";
    for (std::size_t i = 0; i < summaries.size(); ++i) {
        const auto& row = parsed.table.rows[i];
        for (std::size_t k = 0; k < row.size(); ++k)
            out << (k > 0 ? "," : "") << row[k];
        out << "," << vector_cells(summaries[i].mean) << "," << format_double(summaries[i].max_responsibility())
            << "," << (summaries[i].used_regularization ? 1 : 0) << "\n";
    }
    emit(output, out.str());
    return kExitOk;
}

void write_plot_files(const std::string& dir, const ExperimentReport& r) {
    std::filesystem::create_directories(dir);
    const Eigen::Index p = r.p;
    const auto& sample = *r.sample;
    std::ostringstream raw, eb, oracle, atoms;
    raw << coord_header("x", p) << "," << coord_header("theta", p) << "\n";
    eb << coord_header("thetahat", p) << "\n";
    oracle << coord_header("oracle", p) << "\n";
    for (std::size_t i = 0; i < sample.data.size(); ++i) {
        raw << vector_cells(sample.data[i].x) << "," << vector_cells(sample.truth[i]) << "\n";
        eb << vector_cells(r.eb_means[i]) << "\n";
        oracle << vector_cells(r.oracle_means[i]) << "\n";
    }
    atoms << coord_header("a", p) << ",weight\n";
    for (Eigen::Index j = 0; j < r.fitted->size(); ++j)
        atoms << vector_cells(r.fitted->atom(j)) << "," << format_double(r.fitted->weight(j)) << "\n";
    const std::filesystem::path base(dir);
    write_file((base / "raw.csv").string(), raw.str());
    write_file((base / "denoised.csv").string(), eb.str());
    write_file((base / "oracle.csv").string(), oracle.str());
    write_file((base / "atoms.csv").string(), atoms.str());
}

int cmd_simulate(const std::string& design, std::vector<std::size_t> n_list, int reps, std::optional<double> rho,
                 const std::string& output, const std::string& plot_dir, const FitFlags& flags) {
    require(reps >= 1, ErrorCode::InvalidArgument, "--reps must be >= 1");
    require(!n_list.empty(), ErrorCode::InvalidArgument, "--n needs at least one value");
    const PriorSpec prior = named_design(design);
    const FitOptions options = flags.options();

    if (n_list.size() > 1) {
        require(design == "pointmass", ErrorCode::InvalidArgument, "several --n values need --design pointmass");
        std::vector<std::uint64_t> seeds;
        for (int k = 0; k < reps; ++k)
            seeds.push_back(flags.seed + static_cast<std::uint64_t>(k));
        const auto trend = run_w2_trend(std::get<PointMassPrior>(prior), n_list, seeds, NoiseSpec{}, options);
        nlohmann::ordered_json j;
        j["kind"] = "w2_trend";
        j["design"] = design;
        j["seeds"] = seeds;
        j["delta"] = options.delta ? nlohmann::ordered_json(*options.delta) : nlohmann::ordered_json(nullptr);
        j["region"] = flags.region;
        j["trend"] = nlohmann::ordered_json::parse(trend.to_json().dump());
        emit(output, to_json_text(j));
        return kExitOk;
    }

    ExperimentConfig config;
    config.name = design;
    config.prior = prior;
    config.n = n_list.front();
    config.seed = flags.seed;
    config.fit = options;
    config.rho = rho;
    const auto summary = run_replications(config, reps);
    if (!plot_dir.empty())
        write_plot_files(plot_dir, summary.runs.front());
    const nlohmann::json report = reps == 1 ? summary.runs.front().to_json() : summary.to_json();
    emit(output, to_json_text(nlohmann::ordered_json::parse(report.dump())));
    return kExitOk;
}

int cmd_certify(const std::string& model_path, const std::string& input, std::optional<double> tol,
                std::size_t grid_cap) {
    const auto model = read_model(model_path);
    const auto parsed = read_input(input);
    const auto rep = certify_model(model, parsed.data, tol, grid_cap);
    for (const auto& c : rep.checks)
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
    std::cout << "certify: " << (rep.all_pass() ? "PASS" : "FAIL") << "\n";
    return rep.all_pass() ? kExitOk : kExitCertify;
}

int exit_code_for(const Error& e) {
    switch (e.code()) {
    case ErrorCode::GridTooLarge: return kExitGrid;
    case ErrorCode::NonConvergence: return kExitNonConvergence;
    default: return kExitInput;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Nonparametric maximum likelihood empirical Bayes for heteroscedastic Gaussian data"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "cap on worker threads (0: runtime default)")->envname("NPMLE_THREADS");

    FitFlags fit_flags;
    std::string fit_input, fit_output;
    auto* fit = app.add_subcommand("fit", "fit the NPMLE and write a model file");
    fit->add_option("input", fit_input, "observations (.csv, or .jsonl/.ndjson)")->required();
    fit->add_option("-o,--output", fit_output, "model path (default: stdout)");
    add_fit_flags(fit, fit_flags);

    std::string dn_input, dn_model, dn_output;
    std::optional<double> dn_rho;
    auto* dn = app.add_subcommand("denoise", "empirical Bayes posterior means under a fitted model");
    dn->add_option("input", dn_input, "observations")->required();
    dn->add_option("model", dn_model, "model file from 'fit'")->required();
    dn->add_option("-o,--output", dn_output, "CSV path (default: stdout)");
    dn->add_option("--rho", dn_rho, "density floor (default (2π)^(-p/2)/n)")->envname("NPMLE_RHO");

    FitFlags sim_flags;
    sim_flags.delta = 0.1;
    std::string sim_design = "circle", sim_output, sim_plot;
    std::vector<std::size_t> sim_n{1000};
    int sim_reps = 1;
    std::optional<double> sim_rho;
    auto* sim = app.add_subcommand("simulate", "run a simulation design and report errors");
    sim->add_option("--design", sim_design, "circle|discrete|pointmass")
        ->envname("NPMLE_DESIGN")
        ->check(CLI::IsMember({"circle", "discrete", "pointmass"}));
    sim->add_option("--n", sim_n, "sample size; a comma list runs the W2 trend (pointmass)")
        ->delimiter(',')
        ->envname("NPMLE_N");
    sim->add_option("--reps", sim_reps, "replications (seeds seed, seed+1, ...)")->envname("NPMLE_REPS");
    sim->add_option("--rho", sim_rho, "density floor for the denoising rule")->envname("NPMLE_RHO");
    sim->add_option("-o,--output", sim_output, "report path (default: stdout)");
    sim->add_option("--plot-dir", sim_plot, "write raw/denoised/oracle/atoms CSVs for the first replication");
    add_fit_flags(sim, sim_flags);

    std::string ct_model, ct_input;
    std::optional<double> ct_tol;
    std::size_t ct_cap = kDefaultGridCap;
    auto* ct = app.add_subcommand("certify", "recheck a model's optimality certificate against the data");
    ct->add_option("model", ct_model, "model file")->required();
    ct->add_option("input", ct_input, "observations the model was fitted to")->required();
    ct->add_option("--tol", ct_tol, "dual-gap tolerance (default: the model's)")->envname("NPMLE_TOL");
    ct->add_option("--grid-cap", ct_cap, "largest admissible grid")->envname("NPMLE_GRID_CAP");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

#ifdef _OPENMP
    if (threads > 0)
        omp_set_num_threads(threads);
#endif

    try {
        if (*fit)
            return cmd_fit(fit_input, fit_output, fit_flags);
        if (*dn)
            return cmd_denoise(dn_input, dn_model, dn_output, dn_rho);
        if (*sim)
            return cmd_simulate(sim_design, sim_n, sim_reps, sim_rho, sim_output, sim_plot, sim_flags);
        if (*ct)
            return cmd_certify(ct_model, ct_input, ct_tol, ct_cap);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}
