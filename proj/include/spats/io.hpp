#pragma once

// JSON documents (models, graphs, weights, scenarios), trajectory CSV and
// result serialization. Input problems raise DocumentError; numerical
// problems keep raising spats::Error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "spats/decompose.hpp"
#include "spats/protocol.hpp"
#include "spats/sim.hpp"

namespace spats::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

class DocumentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DocumentError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DocumentError("cannot write " + tmp.string());
        }
        out << content;
        out.flush();
        if (!out) {
            throw DocumentError("write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw DocumentError("cannot replace " + path.string());
    }
}

inline json parse_json_file(const fs::path& path) {
    const std::string text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DocumentError(path.string() + ": " + e.what());
    }
}

/// Accepts a JSON number or a string holding a decimal or a ratio "p/q".
inline double parse_scalar(const json& value, const std::string& what) {
    if (value.is_number()) {
        return value.get<double>();
    }
    if (value.is_string()) {
        const std::string text = value.get<std::string>();
        const auto parse_part = [&](const std::string& s) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(s, &used);
            } catch (const std::exception&) {
                throw DocumentError(what + ": cannot parse '" + text + "'");
            }
            if (used != s.size()) {
                throw DocumentError(what + ": cannot parse '" + text + "'");
            }
            return v;
        };
        const auto slash = text.find('/');
        if (slash == std::string::npos) {
            return parse_part(text);
        }
        const double den = parse_part(text.substr(slash + 1));
        if (den == 0.0) {
            throw DocumentError(what + ": zero denominator");
        }
        return parse_part(text.substr(0, slash)) / den;
    }
    throw DocumentError(what + " must be a number");
}

inline double parse_scalar(const std::string& text, const std::string& what) {
    return parse_scalar(json(text), what);
}

inline Matrix matrix_from_json(const json& value, const std::string& what) {
    if (!value.is_array() || value.empty()) {
        throw DocumentError(what + " must be a non-empty array of rows");
    }
    const auto rows = static_cast<Index>(value.size());
    Index cols = -1;
    Matrix out;
    for (Index i = 0; i < rows; ++i) {
        const json& row = value[static_cast<std::size_t>(i)];
        if (!row.is_array() || row.empty()) {
            throw DocumentError(what + ": every row must be a non-empty array");
        }
        if (cols < 0) {
            cols = static_cast<Index>(row.size());
            out.resize(rows, cols);
        } else if (static_cast<Index>(row.size()) != cols) {
            throw DocumentError(what + ": ragged rows");
        }
        for (Index j = 0; j < cols; ++j) {
            const json& x = row[static_cast<std::size_t>(j)];
            if (!x.is_number()) {
                throw DocumentError(what + ": entries must be numbers");
            }
            out(i, j) = x.get<double>();
        }
    }
    if (!out.allFinite()) {
        throw DocumentError(what + ": non-finite entry");
    }
    return out;
}

inline Vector vector_from_json(const json& value, const std::string& what) {
    if (!value.is_array()) {
        throw DocumentError(what + " must be an array of numbers");
    }
    Vector out(static_cast<Index>(value.size()));
    for (std::size_t i = 0; i < value.size(); ++i) {
        if (!value[i].is_number()) {
            throw DocumentError(what + ": entries must be numbers");
        }
        out(static_cast<Index>(i)) = value[i].get<double>();
    }
    return out;
}

inline json to_json(const Matrix& A) {
    json rows = json::array();
    for (Index i = 0; i < A.rows(); ++i) {
        json row = json::array();
        for (Index j = 0; j < A.cols(); ++j) {
            row.push_back(A(i, j));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json to_json(const Vector& v) {
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i) {
        out.push_back(v(i));
    }
    return out;
}

inline json to_json(const ComplexSpectrum& s) {
    json out = json::array();
    for (const auto& z : s) {
        out.push_back(json::array({z.real(), z.imag()}));
    }
    return out;
}

inline json optional_number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

namespace detail {

inline const json& require_field(const json& doc, const char* key, const std::string& what) {
    if (!doc.is_object() || !doc.contains(key)) {
        throw DocumentError(what + ": missing field '" + key + "'");
    }
    return doc.at(key);
}

inline Index require_dimension(const json& doc, const char* key, const std::string& what) {
    const json& v = require_field(doc, key, what);
    if (!v.is_number_integer() || v.get<long long>() <= 0) {
        throw DocumentError(what + ": '" + key + "' must be a positive integer");
    }
    return static_cast<Index>(v.get<long long>());
}

inline void expect_shape(const Matrix& A, Index rows, Index cols, const std::string& what) {
    if (A.rows() != rows || A.cols() != cols) {
        throw DocumentError(what + " must be " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

} // namespace detail

struct ModelDocument {
    std::string name;
    PartitionedLinearModel model;
};

/// Parses a model document. Shape problems are DocumentErrors; the fast
/// block regularity gate still raises spats::Error(SingularFastBlock).
inline ModelDocument parse_model_document(const json& doc, std::optional<double> epsilon_override = std::nullopt) {
    const std::string what = "model";
    if (!doc.is_object()) {
        throw DocumentError("model document must be a JSON object");
    }
    ModelDocument out;
    out.name = doc.value("name", std::string("unnamed"));
    const std::string kind = detail::require_field(doc, "kind", what).is_string()
                                 ? doc.at("kind").get<std::string>()
                                 : std::string();
    ModelKind model_kind;
    if (kind == "continuous") {
        model_kind = ModelKind::continuous;
    } else if (kind == "discrete") {
        model_kind = ModelKind::discrete;
    } else {
        throw DocumentError("model: kind must be \"continuous\" or \"discrete\"");
    }
    const double epsilon =
        epsilon_override ? *epsilon_override : parse_scalar(detail::require_field(doc, "epsilon", what), "epsilon");
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
        throw DocumentError("model: epsilon must lie in (0, 1)");
    }
    const Index n1 = detail::require_dimension(doc, "n1", what);
    const Index n2 = detail::require_dimension(doc, "n2", what);
    const Index m = detail::require_dimension(doc, "m", what);

    const bool full = doc.contains("A") || doc.contains("B");
    const bool blocks = doc.contains("A1") || doc.contains("A2") || doc.contains("A3") || doc.contains("A4") ||
                        doc.contains("B1") || doc.contains("B2");
    if (full == blocks) {
        throw DocumentError("model: give exactly one of {A, B} or {A1..A4, B1, B2}");
    }
    if (full) {
        const Matrix A = matrix_from_json(detail::require_field(doc, "A", what), "A");
        const Matrix B = matrix_from_json(detail::require_field(doc, "B", what), "B");
        detail::expect_shape(A, n1 + n2, n1 + n2, "A");
        detail::expect_shape(B, n1 + n2, m, "B");
        out.model = partition_full_model(A, B, n1, n2, epsilon, model_kind);
        return out;
    }
    PartitionedLinearModel& mdl = out.model;
    mdl.kind = model_kind;
    mdl.epsilon = epsilon;
    mdl.A1 = matrix_from_json(detail::require_field(doc, "A1", what), "A1");
    mdl.A2 = matrix_from_json(detail::require_field(doc, "A2", what), "A2");
    mdl.A3 = matrix_from_json(detail::require_field(doc, "A3", what), "A3");
    mdl.A4 = matrix_from_json(detail::require_field(doc, "A4", what), "A4");
    mdl.B1 = matrix_from_json(detail::require_field(doc, "B1", what), "B1");
    mdl.B2 = matrix_from_json(detail::require_field(doc, "B2", what), "B2");
    detail::expect_shape(mdl.A1, n1, n1, "A1");
    detail::expect_shape(mdl.A2, n1, n2, "A2");
    detail::expect_shape(mdl.A3, n2, n1, "A3");
    detail::expect_shape(mdl.A4, n2, n2, "A4");
    detail::expect_shape(mdl.B1, n1, m, "B1");
    detail::expect_shape(mdl.B2, n2, m, "B2");
    mdl.validate_shapes();
    mdl.require_regular_fast_block();
    return out;
}

inline ModelDocument load_model(const fs::path& path, std::optional<double> epsilon_override = std::nullopt) {
    return parse_model_document(parse_json_file(path), epsilon_override);
}

inline CommGraph parse_graph_document(const json& doc) {
    const Matrix adjacency = matrix_from_json(detail::require_field(doc, "adjacency", "graph"), "adjacency");
    const Vector pinning = vector_from_json(detail::require_field(doc, "pinning", "graph"), "pinning");
    if (adjacency.rows() != adjacency.cols() || pinning.size() != adjacency.rows()) {
        throw DocumentError("graph: adjacency must be NxN and pinning length N");
    }
    return build_graph(adjacency, pinning);
}

inline CommGraph load_graph(const fs::path& path) { return parse_graph_document(parse_json_file(path)); }

inline SubsystemWeights parse_weights_document(const json& doc, Index n1, Index n2, Index m) {
    SubsystemWeights w = SubsystemWeights::defaults(n1, n2, m);
    if (doc.is_null()) {
        return w;
    }
    if (!doc.is_object()) {
        throw DocumentError("weights must be a JSON object");
    }
    const auto take = [&](const char* key, Matrix& target, Index n) {
        if (doc.contains(key)) {
            target = matrix_from_json(doc.at(key), key);
            detail::expect_shape(target, n, n, key);
        }
    };
    take("Q_s", w.Q_s, n1);
    take("Q_f", w.Q_f, n2);
    take("R_s", w.R_s, m);
    take("R_f", w.R_f, m);
    return w;
}

/// Coupling request: automatic, one gain for both subsystems, or a pair.
struct CouplingSpec {
    bool automatic = true;
    double c_s = 0.0;
    double c_f = 0.0;

    static CouplingSpec single(double c) { return {false, c, c}; }
};

inline CouplingSpec parse_coupling(const json& value) {
    if (value.is_null()) {
        return {};
    }
    if (value.is_string() && value.get<std::string>() == "auto") {
        return {};
    }
    if (value.is_object()) {
        if (value.contains("c")) {
            return CouplingSpec::single(parse_scalar(value.at("c"), "coupling.c"));
        }
        return {false, parse_scalar(detail::require_field(value, "c_s", "coupling"), "coupling.c_s"),
                parse_scalar(detail::require_field(value, "c_f", "coupling"), "coupling.c_f")};
    }
    const double c = parse_scalar(value, "coupling");
    if (!(c > 0.0)) {
        throw DocumentError("coupling must be positive");
    }
    return CouplingSpec::single(c);
}

struct ScenarioOutputs {
    std::optional<fs::path> csv_path;
    std::optional<fs::path> json_path;
    bool plot = false;
};

struct ScenarioDocument {
    ModelDocument model;
    CommGraph graph;
    SubsystemWeights weights;
    CouplingSpec coupling;
    Vector leader_init;
    std::vector<Vector> follower_inits;
    double horizon = 0.0;
    std::optional<double> step;
    double threshold = 1e-2;
    ScenarioOutputs outputs;
};

inline ScenarioDocument parse_scenario_document(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) {
        throw DocumentError("scenario document must be a JSON object");
    }
    const auto resolve = [&](const json& ref) { return base_dir / fs::path(ref.get<std::string>()); };
    ScenarioDocument out;

    const json& model_ref = detail::require_field(doc, "model", "scenario");
    out.model = model_ref.is_string() ? load_model(resolve(model_ref)) : parse_model_document(model_ref);
    const auto& mdl = out.model.model;

    const json& graph_ref = detail::require_field(doc, "graph", "scenario");
    out.graph = graph_ref.is_string() ? load_graph(resolve(graph_ref)) : parse_graph_document(graph_ref);

    json weights = doc.value("weights", json());
    if (weights.is_string()) {
        weights = parse_json_file(resolve(weights));
    }
    out.weights = parse_weights_document(weights, mdl.n1(), mdl.n2(), mdl.m());
    out.coupling = parse_coupling(doc.value("coupling", json("auto")));

    const json& inits = detail::require_field(doc, "inits", "scenario");
    out.leader_init = vector_from_json(detail::require_field(inits, "leader", "inits"), "inits.leader");
    const json& followers = detail::require_field(inits, "followers", "inits");
    if (!followers.is_array() || followers.empty()) {
        throw DocumentError("inits.followers must list at least one follower state");
    }
    for (const auto& f : followers) {
        out.follower_inits.push_back(vector_from_json(f, "inits.followers[]"));
    }
    if (static_cast<Index>(out.follower_inits.size()) != out.graph.n_agents) {
        throw DocumentError("inits.followers count differs from the graph's agent count");
    }
    if (out.leader_init.size() != mdl.n()) {
        throw DocumentError("inits.leader has wrong length");
    }
    for (const auto& f : out.follower_inits) {
        if (f.size() != mdl.n()) {
            throw DocumentError("inits.followers[] has wrong length");
        }
    }

    const bool continuous = mdl.kind == ModelKind::continuous;
    out.horizon = doc.contains("horizon")
                      ? parse_scalar(doc.at("horizon"), "horizon")
                      : (continuous ? kDefaultContinuousHorizon : static_cast<double>(kDefaultDiscreteSteps));
    if (!(out.horizon > 0.0)) {
        throw DocumentError("horizon must be positive");
    }
    if (doc.contains("step") && !doc.at("step").is_null()) {
        out.step = parse_scalar(doc.at("step"), "step");
        if (!(*out.step > 0.0)) {
            throw DocumentError("step must be positive");
        }
    }
    if (doc.contains("threshold")) {
        out.threshold = parse_scalar(doc.at("threshold"), "threshold");
    }

    const json outputs = doc.value("outputs", json::object());
    if (outputs.contains("csv_path")) {
        out.outputs.csv_path = resolve(outputs.at("csv_path"));
    }
    if (outputs.contains("json_path")) {
        out.outputs.json_path = resolve(outputs.at("json_path"));
    }
    out.outputs.plot = outputs.value("plot", false);
    return out;
}

inline ScenarioDocument load_scenario(const fs::path& path) {
    return parse_scenario_document(parse_json_file(path), path.parent_path());
}

inline json decomposition_to_json(const std::string& name, const PartitionedLinearModel& model,
                                  const ChangDecomposition& d, const DecompositionReport& report) {
    json out;
    out["name"] = name;
    out["kind"] = std::string(to_string(model.kind));
    out["epsilon"] = model.epsilon;
    out["M"] = to_json(d.M);
    out["N"] = to_json(d.N);
    out["A_s"] = to_json(d.A_s);
    out["B_s"] = to_json(d.B_s);
    out["A_f"] = to_json(d.A_f);
    out["B_f"] = to_json(d.B_f);
    out["newton_iterations"] = d.newton_iterations;
    out["residual_M"] = report.residual_M;
    out["residual_N"] = report.residual_N;
    out["spectra_overlap_warning"] = d.spectra_overlap_warning;
    out["spectrum"] = {{"full", to_json(report.spectrum_full)},
                       {"union", to_json(report.spectrum_union)},
                       {"max_eigen_gap", report.max_eigen_gap}};
    out["passed"] = report.passed();
    return out;
}

inline json gains_to_json(const SynchronizationGains& k) {
    json out;
    out["kind"] = std::string(to_string(k.kind));
    out["K_s"] = to_json(k.K_s);
    out["K_f"] = to_json(k.K_f);
    out["P_s"] = to_json(k.P_s);
    out["P_f"] = to_json(k.P_f);
    out["weights"] = {{"Q_s", to_json(k.weights.Q_s)},
                      {"Q_f", to_json(k.weights.Q_f)},
                      {"R_s", to_json(k.weights.R_s)},
                      {"R_f", to_json(k.weights.R_f)}};
    if (k.kind == ModelKind::continuous) {
        out["c"] = k.c;
    } else {
        out["c_s"] = k.c_s;
        out["c_f"] = k.c_f;
        out["r_s"] = optional_number(k.r_s);
        out["r_f"] = optional_number(k.r_f);
        out["r0_s"] = k.r0_s;
        out["r0_f"] = k.r0_f;
    }
    return out;
}

inline json certificates_to_json(const std::vector<CertificateEntry>& entries) {
    json out = json::array();
    for (const auto& e : entries) {
        out.push_back({{"subsystem", std::string(1, e.subsystem)},
                       {"lambda", json::array({e.lambda.real(), e.lambda.imag()})},
                       {"margin", e.margin},
                       {"ok", e.ok}});
    }
    return out;
}

inline json metrics_to_json(const ConvergenceMetrics& m) {
    json out;
    out["threshold"] = m.threshold;
    out["synchronized"] = m.synchronized;
    out["final_error"] = m.final_error;
    json settle = json::array();
    for (const auto& t : m.settling_time) {
        settle.push_back(t ? json(*t) : json(nullptr));
    }
    out["settling_time"] = std::move(settle);
    return out;
}

inline std::string format_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string csv_header(Index n1, Index n2, Index m) {
    std::string h = "t,agent";
    for (Index i = 1; i <= n1; ++i) {
        h += ",x1_" + std::to_string(i);
    }
    for (Index i = 1; i <= n2; ++i) {
        h += ",x2_" + std::to_string(i);
    }
    for (Index i = 1; i <= m; ++i) {
        h += ",u_" + std::to_string(i);
    }
    return h + ",err_inf";
}

/// Rows ordered by sample then agent; agent 0 is the leader (zero control).
inline std::string trajectory_csv(const TrajectoryLog& log) {
    std::string out = csv_header(log.n1, log.n2, log.m) + "\n";
    const auto row = [&](double t, std::size_t agent, const Vector& x, const Vector& u, double err) {
        out += format_number(t);
        out += ',';
        out += std::to_string(agent);
        for (Index i = 0; i < x.size(); ++i) {
            out += ',';
            out += format_number(x(i));
        }
        for (Index i = 0; i < u.size(); ++i) {
            out += ',';
            out += format_number(u(i));
        }
        out += ',';
        out += format_number(err);
        out += '\n';
    };
    const Vector zero_u = Vector::Zero(log.m);
    for (std::size_t k = 0; k < log.samples(); ++k) {
        row(log.times[k], 0, log.leader_states[k], zero_u, 0.0);
        for (std::size_t a = 0; a < log.agents(); ++a) {
            row(log.times[k], a + 1, log.follower_states[a][k], log.controls[a][k], log.error_norms[a][k]);
        }
    }
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline CsvTable parse_csv(const std::string& text) {
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    const auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(s);
        while (std::getline(ls, cell, ',')) {
            cells.push_back(cell);
        }
        return cells;
    };
    if (!std::getline(in, line)) {
        throw DocumentError("empty CSV");
    }
    table.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto cells = split(line);
        if (cells.size() != table.header.size()) {
            throw DocumentError("CSV row width differs from header");
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            row.push_back(std::strtod(c.c_str(), nullptr));
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

/// Gnuplot script drawing every state column and the tracking error per agent.
inline std::string gnuplot_script(const fs::path& csv_path, const TrajectoryLog& log) {
    const Index n = log.n1 + log.n2;
    const std::string csv = csv_path.filename().string();
    std::string png = csv_path.stem().string() + ".png";
    const auto agents = log.agents();
    std::ostringstream gp;
    gp << "# gnuplot script for " << csv << "\n";
    gp << "set datafile separator ','\n";
    gp << "set terminal pngcairo size 900," << 260 * (n + 1) << "\n";
    gp << "set output '" << png << "'\n";
    gp << "set multiplot layout " << (n + 1) << ",1\n";
    gp << "set xlabel '" << (log.kind == ModelKind::continuous ? "t [s]" : "k") << "'\n";
    const auto header = csv_header(log.n1, log.n2, log.m);
    std::vector<std::string> names;
    {
        std::istringstream hs(header);
        std::string cell;
        while (std::getline(hs, cell, ',')) {
            names.push_back(cell);
        }
    }
    for (Index c = 0; c < n; ++c) {
        const auto column = 3 + c;
        gp << "set title '" << names[static_cast<std::size_t>(column - 1)] << "'\n";
        gp << "plot for [a=0:" << agents << "] '" << csv << "' every ::1 using ($2==a ? $1 : 1/0):" << column
           << " with lines title (a==0 ? 'leader' : sprintf('agent %d', a))\n";
    }
    const auto err_column = names.size();
    gp << "set title 'tracking error ||x_i - x_0||_inf'\n";
    gp << "plot for [a=1:" << agents << "] '" << csv << "' every ::1 using ($2==a ? $1 : 1/0):" << err_column
       << " with lines title sprintf('agent %d', a)\n";
    gp << "unset multiplot\n";
    return gp.str();
}

} // namespace spats::io
