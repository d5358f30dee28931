#pragma once

#include "npmle/fit.hpp"
#include "npmle/model.hpp"
#include "npmle/support.hpp"
#include "npmle/version.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace npmle {

/// Shortest text that survives the trip through `%.17g` and back.
inline std::string format_double(double v) {
    require(std::isfinite(v), ErrorCode::InvalidArgument, "cannot serialize a non-finite number");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline void write_json(std::ostream& out, const nlohmann::ordered_json& j, int indent) {
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
    switch (j.type()) {
    case nlohmann::ordered_json::value_t::number_float:
        out << format_double(j.get<double>());
        return;
    case nlohmann::ordered_json::value_t::object: {
        if (j.empty()) {
            out << "{}";
            return;
        }
        out << "{\n";
        std::size_t k = 0;
        for (auto it = j.begin(); it != j.end(); ++it, ++k) {
            out << inner << nlohmann::ordered_json(it.key()).dump() << ": ";
            write_json(out, it.value(), indent + 1);
            out << (k + 1 < j.size() ? ",\n" : "\n");
        }
        out << pad << "}";
        return;
    }
    case nlohmann::ordered_json::value_t::array: {
        bool flat = true;
        for (const auto& e : j)
            flat = flat && !e.is_structured();
        out << "[";
        for (std::size_t k = 0; k < j.size(); ++k) {
            if (!flat)
                out << "\n" << inner;
            write_json(out, j[k], indent + 1);
            if (k + 1 < j.size())
                out << (flat ? ", " : ",");
        }
        if (!flat && !j.empty())
            out << "\n" << pad;
        out << "]";
        return;
    }
    default:
        out << j.dump();
    }
}

} // namespace detail

/// Two-space indented JSON, keys in insertion order, floats at 17 significant digits.
inline std::string to_json_text(const nlohmann::ordered_json& j) {
    std::ostringstream out;
    detail::write_json(out, j, 0);
    out << "\n";
    return out.str();
}

/// 64-bit FNV-1a, used to tie a model file to the exact input bytes.
inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::ParseError, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::InvalidArgument, "cannot write '" + path + "'");
    out << contents;
    require(static_cast<bool>(out), ErrorCode::InvalidArgument, "write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Observation input

enum class CovarianceEncoding { Isotropic, Diagonal, LowerTriangle };

/// Input cells as text, so denoised output can echo the original columns verbatim.
struct InputTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers; ///< 1-based source line of each row
};

struct ParsedInput {
    InputTable table;
    Dataset data;
    CovarianceEncoding encoding;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ','))
        out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

inline std::string row_label(const InputTable& t, std::size_t r) {
    return "row " + std::to_string(r + 1) + " (line " + std::to_string(t.line_numbers[r]) + ")";
}

inline double parse_number(const std::string& cell, const std::string& where) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = first + cell.size();
    if (!cell.empty() && *first == '+')
        ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    require(!cell.empty() && ec == std::errc() && ptr == last && std::isfinite(v), ErrorCode::ParseError,
            where + ": '" + cell + "' is not a finite number");
    return v;
}

} // namespace detail

inline InputTable parse_csv(const std::string& text) {
    InputTable t;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string body = detail::trim(line);
        if (body.empty() || body.front() == '#')
            continue;
        auto cells = detail::split_csv(body);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        require(cells.size() == t.header.size(), ErrorCode::ParseError,
                "row " + std::to_string(t.rows.size() + 1) + " (line " + std::to_string(number) + "): expected " +
                    std::to_string(t.header.size()) + " columns, found " + std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
        t.line_numbers.push_back(number);
    }
    require(!t.header.empty(), ErrorCode::ParseError, "input has no header row");
    return t;
}

/// One JSON object per line. "x" may be an array (expanded to x_1, x_2, …);
/// every other key is a column name with a numeric value.
inline InputTable parse_jsonl(const std::string& text) {
    InputTable t;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (detail::trim(line).empty())
            continue;
        const std::string where = "row " + std::to_string(t.rows.size() + 1) + " (line " + std::to_string(number) + ")";
        nlohmann::ordered_json obj;
        try {
            obj = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, where + ": " + e.what());
        }
        require(obj.is_object(), ErrorCode::ParseError, where + ": expected a JSON object");
        std::vector<std::string> names, cells;
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (it.key() == "x" && it.value().is_array()) {
                for (std::size_t k = 0; k < it.value().size(); ++k) {
                    require(it.value()[k].is_number(), ErrorCode::ParseError, where + ": x[" + std::to_string(k) + "] is not a number");
                    names.push_back("x_" + std::to_string(k + 1));
                    cells.push_back(format_double(it.value()[k].get<double>()));
                }
                continue;
            }
            require(it.value().is_number(), ErrorCode::ParseError, where + ": '" + it.key() + "' is not a number");
            names.push_back(it.key());
            cells.push_back(format_double(it.value().get<double>()));
        }
        if (t.header.empty())
            t.header = names;
        require(names == t.header, ErrorCode::ParseError, where + ": keys differ from the first row");
        t.rows.push_back(std::move(cells));
        t.line_numbers.push_back(number);
    }
    require(!t.header.empty(), ErrorCode::ParseError, "input has no rows");
    return t;
}

/// Builds observations from x_1..x_p and exactly one covariance encoding:
/// s2 (isotropic), s2_1..s2_p (diagonal), or cov_rc for r ≥ c (full).
inline ParsedInput table_to_dataset(InputTable table) {
    std::map<std::string, std::size_t> col;
    for (std::size_t k = 0; k < table.header.size(); ++k) {
        require(col.emplace(table.header[k], k).second, ErrorCode::ParseError,
                "duplicate column '" + table.header[k] + "'");
    }
    Eigen::Index p = 0;
    while (col.count("x_" + std::to_string(p + 1)))
        ++p;
    require(p >= 1, ErrorCode::ParseError, "input needs columns x_1..x_p");

    const bool iso = col.count("s2") > 0;
    const bool diag = col.count("s2_1") > 0;
    const bool full = col.count("cov_11") > 0;
    require(int(iso) + int(diag) + int(full) == 1, ErrorCode::ParseError,
            "input must declare exactly one covariance encoding (s2, s2_1..s2_p, or cov_11..)");
    std::vector<std::string> needed;
    CovarianceEncoding enc = CovarianceEncoding::Isotropic;
    if (iso) {
        needed.push_back("s2");
    } else if (diag) {
        enc = CovarianceEncoding::Diagonal;
        for (Eigen::Index k = 1; k <= p; ++k)
            needed.push_back("s2_" + std::to_string(k));
    } else {
        enc = CovarianceEncoding::LowerTriangle;
        for (Eigen::Index r = 1; r <= p; ++r)
            for (Eigen::Index c = 1; c <= r; ++c)
                needed.push_back("cov_" + std::to_string(r) + std::to_string(c));
    }
    for (const auto& name : needed)
        require(col.count(name) > 0, ErrorCode::ParseError, "missing covariance column '" + name + "'");
    require(!table.rows.empty(), ErrorCode::EmptyDataset, "input has a header but no rows");

    std::vector<Observation> obs;
    obs.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const std::string where = detail::row_label(table, r);
        auto cell = [&](const std::string& name) {
            return detail::parse_number(table.rows[r][col.at(name)], where + ", column '" + name + "'");
        };
        Vector x(p);
        for (Eigen::Index k = 0; k < p; ++k)
            x[k] = cell("x_" + std::to_string(k + 1));
        std::vector<double> values;
        for (const auto& name : needed)
            values.push_back(cell(name));
        try {
            if (enc == CovarianceEncoding::Isotropic)
                obs.push_back({x, Covariance::isotropic(p, values[0])});
            else if (enc == CovarianceEncoding::Diagonal)
                obs.push_back({x, Covariance::diagonal(Eigen::Map<Vector>(values.data(), p))});
            else
                obs.push_back({x, Covariance::full_from_lower(p, values)});
        } catch (const Error& e) {
            throw Error(ErrorCode::ParseError, where + ": " + e.what());
        }
    }
    Dataset data(std::move(obs));
    return {std::move(table), std::move(data), enc};
}

/// Reads CSV, or JSON lines when the path ends in .jsonl or .ndjson.
inline ParsedInput read_input(const std::string& path) {
    const std::string text = read_file(path);
    const auto ends = [&](const std::string& suffix) {
        return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return table_to_dataset(ends(".jsonl") || ends(".ndjson") ? parse_jsonl(text) : parse_csv(text));
}

/// CSV text for a dataset in the given encoding (diagonal and isotropic
/// encodings require covariances of that kind).
inline std::string dataset_to_csv(const Dataset& data, CovarianceEncoding enc) {
    const Eigen::Index p = data.dim();
    std::ostringstream out;
    for (Eigen::Index k = 1; k <= p; ++k)
        out << (k > 1 ? "," : "") << "x_" << k;
    if (enc == CovarianceEncoding::Isotropic)
        out << ",s2";
    else if (enc == CovarianceEncoding::Diagonal)
        for (Eigen::Index k = 1; k <= p; ++k)
            out << ",s2_" << k;
    else
        for (Eigen::Index r = 1; r <= p; ++r)
            for (Eigen::Index c = 1; c <= r; ++c)
                out << ",cov_" << r << c;
    out << "\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& o = data[i];
        for (Eigen::Index k = 0; k < p; ++k)
            out << (k > 0 ? "," : "") << format_double(o.x[k]);
        const Matrix s = o.sigma.dense();
        if (enc == CovarianceEncoding::Isotropic) {
            require(o.sigma.kind() == Covariance::Kind::Isotropic, ErrorCode::InvalidArgument, "covariance is not isotropic");
            out << "," << format_double(s(0, 0));
        } else if (enc == CovarianceEncoding::Diagonal) {
            require(o.sigma.kind() != Covariance::Kind::Full, ErrorCode::InvalidArgument, "covariance is not diagonal");
            for (Eigen::Index k = 0; k < p; ++k)
                out << "," << format_double(s(k, k));
        } else {
            for (Eigen::Index r = 0; r < p; ++r)
                for (Eigen::Index c = 0; c <= r; ++c)
                    out << "," << format_double(s(r, c));
        }
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Fitted model file

inline constexpr int kModelSchemaVersion = 1;

struct Provenance {
    std::string input_hash; ///< "fnv1a64:" + 16 hex digits
    std::uint64_t seed = 0;
    std::string tool_version = kVersion;
};

struct FittedModelFile {
    int schema_version = kModelSchemaVersion;
    Eigen::Index dim = 0;
    Matrix atoms;   ///< p × m
    Vector weights;
    double loglik = 0.0;
    double dual_gap = 0.0;
    Vector fitted_L;
    bool converged = false;
    int iters = 0;
    Region region;
    double delta = 0.0;
    double k_lower = 0.0;
    std::optional<double> bound;
    SolverConfig solver;
    Provenance provenance;

    [[nodiscard]] MixingMeasure measure() const { return MixingMeasure(atoms, weights); }
};

inline std::string hash_label(const std::string& bytes) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

inline FittedModelFile make_model_file(const FitOutput& fit, const Dataset& data, const Provenance& provenance,
                                       const SolverConfig& solver) {
    FittedModelFile m;
    m.dim = data.dim();
    m.atoms = fit.measure.atoms();
    m.weights = fit.measure.weights();
    m.loglik = fit.solve.certificate.loglik;
    m.dual_gap = fit.solve.certificate.dual_gap;
    m.fitted_L = fit.solve.certificate.fitted_L;
    m.converged = fit.solve.certificate.converged;
    m.iters = fit.solve.certificate.iters;
    m.region = fit.region;
    m.delta = fit.grid.delta;
    m.k_lower = data.k_lower();
    m.bound = fit.bound;
    m.solver = solver;
    m.provenance = provenance;
    return m;
}

namespace detail {

inline nlohmann::ordered_json vec_json(const Vector& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k)
        a.push_back(v[k]);
    return a;
}

inline nlohmann::ordered_json columns_json(const Matrix& m) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        a.push_back(vec_json(m.col(j)));
    return a;
}

inline Vector json_vec(const nlohmann::ordered_json& a) {
    require(a.is_array(), ErrorCode::ParseError, "expected an array of numbers");
    Vector v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t k = 0; k < a.size(); ++k) {
        require(a[k].is_number(), ErrorCode::ParseError, "expected a number");
        v[static_cast<Eigen::Index>(k)] = a[k].get<double>();
    }
    return v;
}

inline Matrix json_columns(const nlohmann::ordered_json& a, Eigen::Index rows) {
    require(a.is_array(), ErrorCode::ParseError, "expected an array of points");
    Matrix m(rows, static_cast<Eigen::Index>(a.size()));
    for (std::size_t j = 0; j < a.size(); ++j) {
        const Vector v = json_vec(a[j]);
        require(v.size() == rows, ErrorCode::ParseError, "point has wrong dimension");
        m.col(static_cast<Eigen::Index>(j)) = v;
    }
    return m;
}

} // namespace detail

inline nlohmann::ordered_json region_to_json(const Region& r) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(r.kind);
    j["lower"] = detail::vec_json(r.lower);
    j["upper"] = detail::vec_json(r.upper);
    j["diameter"] = r.diameter;
    if (r.kind == Region::Kind::Ball) {
        j["center"] = detail::vec_json(r.center);
        j["radius"] = r.radius;
    }
    if (r.kind == Region::Kind::Hull)
        j["vertices"] = detail::columns_json(r.vertices);
    return j;
}

inline Region region_from_json(const nlohmann::ordered_json& j) {
    Region r;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "hull")
        r.kind = Region::Kind::Hull;
    else if (kind == "bbox")
        r.kind = Region::Kind::BBox;
    else if (kind == "ball")
        r.kind = Region::Kind::Ball;
    else
        throw Error(ErrorCode::ParseError, "unknown region kind '" + kind + "'");
    r.lower = detail::json_vec(j.at("lower"));
    r.upper = detail::json_vec(j.at("upper"));
    require(r.lower.size() == r.upper.size() && r.lower.size() >= 1, ErrorCode::ParseError, "region corners disagree");
    r.diameter = j.at("diameter").get<double>();
    if (r.kind == Region::Kind::Ball) {
        r.center = detail::json_vec(j.at("center"));
        r.radius = j.at("radius").get<double>();
    }
    if (r.kind == Region::Kind::Hull)
        r.vertices = detail::json_columns(j.at("vertices"), r.lower.size());
    return r;
}

inline nlohmann::ordered_json solver_to_json(const SolverConfig& s) {
    nlohmann::ordered_json j;
    j["algorithm"] = to_string(s.algorithm);
    j["dual_gap_tol"] = s.dual_gap_tol;
    j["max_iters"] = s.max_iters;
    j["rel_loglik_tol"] = s.rel_loglik_tol;
    j["prune_weight_tol"] = s.prune_weight_tol;
    j["em_warm_start"] = s.em_warm_start;
    return j;
}

inline SolverConfig solver_from_json(const nlohmann::ordered_json& j) {
    SolverConfig s;
    s.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
    s.dual_gap_tol = j.at("dual_gap_tol").get<double>();
    s.max_iters = j.at("max_iters").get<int>();
    s.rel_loglik_tol = j.at("rel_loglik_tol").get<double>();
    s.prune_weight_tol = j.at("prune_weight_tol").get<double>();
    s.em_warm_start = j.at("em_warm_start").get<int>();
    s.validate();
    return s;
}

inline nlohmann::ordered_json model_to_json(const FittedModelFile& m) {
    nlohmann::ordered_json j;
    j["schema_version"] = m.schema_version;
    j["dim"] = m.dim;
    j["atoms"] = detail::columns_json(m.atoms);
    j["weights"] = detail::vec_json(m.weights);
    j["loglik"] = m.loglik;
    j["dual_gap"] = m.dual_gap;
    j["converged"] = m.converged;
    j["iters"] = m.iters;
    j["fitted_L"] = detail::vec_json(m.fitted_L);
    j["region"] = region_to_json(m.region);
    j["delta"] = m.delta;
    j["k_lower"] = m.k_lower;
    j["bound"] = m.bound ? nlohmann::ordered_json(*m.bound) : nlohmann::ordered_json(nullptr);
    j["solver"] = solver_to_json(m.solver);
    j["provenance"] = {{"input_hash", m.provenance.input_hash},
                       {"seed", m.provenance.seed},
                       {"tool_version", m.provenance.tool_version}};
    return j;
}

/// Parses and checks a model: schema version, array lengths, simplex weights.
inline FittedModelFile model_from_json(const nlohmann::ordered_json& j) {
    try {
        FittedModelFile m;
        m.schema_version = j.at("schema_version").get<int>();
        require(m.schema_version == kModelSchemaVersion, ErrorCode::ParseError,
                "unsupported schema_version " + std::to_string(m.schema_version));
        m.dim = j.at("dim").get<Eigen::Index>();
        require(m.dim >= 1, ErrorCode::ParseError, "dim must be >= 1");
        m.atoms = detail::json_columns(j.at("atoms"), m.dim);
        m.weights = detail::json_vec(j.at("weights"));
        require(m.weights.size() == m.atoms.cols() && m.weights.size() >= 1, ErrorCode::ParseError,
                "atoms and weights have different lengths");
        require(m.weights.minCoeff() >= 0.0 && std::abs(m.weights.sum() - 1.0) <= MixingMeasure::kSimplexTol,
                ErrorCode::ParseError, "weights are not on the simplex");
        m.loglik = j.at("loglik").get<double>();
        m.dual_gap = j.at("dual_gap").get<double>();
        m.converged = j.at("converged").get<bool>();
        m.iters = j.at("iters").get<int>();
        m.fitted_L = detail::json_vec(j.at("fitted_L"));
        m.region = region_from_json(j.at("region"));
        require(m.region.dim() == m.dim, ErrorCode::ParseError, "region dimension differs from dim");
        m.delta = j.at("delta").get<double>();
        m.k_lower = j.at("k_lower").get<double>();
        if (!j.at("bound").is_null())
            m.bound = j.at("bound").get<double>();
        m.solver = solver_from_json(j.at("solver"));
        const auto& prov = j.at("provenance");
        m.provenance.input_hash = prov.at("input_hash").get<std::string>();
        m.provenance.seed = prov.at("seed").get<std::uint64_t>();
        m.provenance.tool_version = prov.at("tool_version").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("model file: ") + e.what());
    }
}

inline std::string model_to_text(const FittedModelFile& m) { return to_json_text(model_to_json(m)); }

inline FittedModelFile model_from_text(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("model file: ") + e.what());
    }
    return model_from_json(j);
}

inline void write_model(const std::string& path, const FittedModelFile& m) { write_file(path, model_to_text(m)); }

inline FittedModelFile read_model(const std::string& path) { return model_from_text(read_file(path)); }

} // namespace npmle
