// spats: decompose two-time-scale plants, synthesize leader-follower
// synchronization gains, simulate formations and run the reference
// regression.
//
// Exit codes: 0 success, 1 input/IO error, 2 numerical or feasibility failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "spats/io.hpp"
#include "spats/pipeline.hpp"
#include "spats/regression.hpp"

#ifndef SPATS_DATA_DIR
#define SPATS_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using spats::io::json;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kNumericError = 2;

void emit(const json& doc, const std::string& out_path) {
    const std::string text = doc.dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << text;
    } else {
        spats::io::write_file_atomic(out_path, text);
    }
}

// Runs a command body and maps exceptions onto the exit-code contract.
template <typename Body>
int guarded(Body&& body) {
    try {
        return body();
    } catch (const spats::io::DocumentError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const json::exception& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const spats::Error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumericError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kInputError;
    }
}

int cmd_decompose(const std::string& model_path, std::optional<double> epsilon, const std::string& out_path) {
    return guarded([&] {
        const auto doc = spats::io::load_model(model_path, epsilon);
        const auto d = spats::decompose(doc.model);
        const auto report = spats::verify_decomposition(doc.model, d);
        emit(spats::io::decomposition_to_json(doc.name, doc.model, d, report), out_path);
        if (d.spectra_overlap_warning) {
            std::cerr << "warning: slow and fast spectra are not separated\n";
        }
        if (!report.residual_M_ok) {
            std::cerr << "numeric failure: residual_M " << report.residual_M << " exceeds " << report.tolerance
                      << "\n";
        }
        if (!report.residual_N_ok) {
            std::cerr << "numeric failure: residual_N " << report.residual_N << " exceeds tolerance\n";
        }
        if (!report.spectrum_ok) {
            std::cerr << "numeric failure: eigenvalue gap " << report.max_eigen_gap << "\n";
        }
        return report.passed() ? kOk : kNumericError;
    });
}

json graph_summary(const spats::CommGraph& g) {
    return {{"laplacian", spats::io::to_json(g.laplacian)},
            {"degree", spats::io::to_json(g.degree)},
            {"pinning", spats::io::to_json(g.pinning)},
            {"gamma", spats::io::to_json(g.gamma)},
            {"eig_L_plus_B", spats::io::to_json(spats::sorted(spats::eigvals(g.laplacian_plus_pinning())))},
            {"eig_gamma", spats::io::to_json(spats::sorted(spats::eigvals(g.gamma)))}};
}

int cmd_synthesize(const std::string& model_path, const std::string& graph_path, const std::string& weights_path,
                   const std::string& coupling, const std::string& out_path) {
    return guarded([&] {
        const auto doc = spats::io::load_model(model_path);
        const auto& model = doc.model;
        const auto graph = spats::io::load_graph(graph_path);
        const json weights_doc = weights_path.empty() ? json() : spats::io::parse_json_file(weights_path);
        const auto weights = spats::io::parse_weights_document(weights_doc, model.n1(), model.n2(), model.m());
        const auto spec = spats::io::parse_coupling(json(coupling));

        const auto d = spats::decompose(model);
        const auto gains = spats::synthesize(d, graph, weights, spec);
        const auto certificates = spats::subsystem_certificates(d, graph, gains);

        json out = spats::io::gains_to_json(gains);
        out["graph"] = graph_summary(graph);
        out["certificates"] = spats::io::certificates_to_json(certificates);
        bool feasible = true;
        if (gains.kind == spats::ModelKind::continuous) {
            const double c_min = spats::continuous_coupling_bound(graph);
            out["c_min"] = c_min;
            feasible = gains.c >= c_min;
        } else {
            feasible = spats::discrete_couplings_feasible(gains);
        }
        out["feasible"] = feasible;
        emit(out, out_path);
        if (!feasible) {
            std::cerr << "numeric failure: Infeasible coupling gain for this graph\n";
            return kNumericError;
        }
        return kOk;
    });
}

int cmd_simulate(const std::string& scenario_path) {
    return guarded([&] {
        const auto doc = spats::io::load_scenario(scenario_path);
        const auto scenario = spats::build_scenario(doc);

        if (scenario.gains.kind == spats::ModelKind::continuous) {
            const double c_min = spats::continuous_coupling_bound(scenario.graph);
            if (scenario.gains.c < c_min) {
                std::cerr << "warning: coupling c = " << scenario.gains.c << " is below the bound " << c_min << "\n";
            }
        } else if (!spats::discrete_couplings_feasible(scenario.gains)) {
            std::cerr << "warning: coupling violates c * r0 < r\n";
        }
        for (const auto& cert : spats::subsystem_certificates(scenario.decomp, scenario.graph, scenario.gains)) {
            if (!cert.ok) {
                std::cerr << "warning: certificate fails for subsystem " << cert.subsystem << " at lambda "
                          << cert.lambda << " (margin " << cert.margin << ")\n";
            }
        }

        const auto log = spats::simulate(scenario);
        const auto metrics = spats::compute_metrics(log, doc.threshold);

        if (doc.outputs.csv_path) {
            spats::io::write_file_atomic(*doc.outputs.csv_path, spats::io::trajectory_csv(log));
            if (doc.outputs.plot) {
                fs::path script = *doc.outputs.csv_path;
                script.replace_extension(".gp");
                spats::io::write_file_atomic(script, spats::io::gnuplot_script(*doc.outputs.csv_path, log));
            }
        }
        json metrics_doc = spats::io::metrics_to_json(metrics);
        if (doc.outputs.json_path) {
            spats::io::write_file_atomic(*doc.outputs.json_path, metrics_doc.dump(2) + "\n");
        }
        std::cout << metrics_doc.dump(2) << "\n";
        if (!metrics.synchronized) {
            std::cerr << "followers did not settle below " << doc.threshold << "\n";
            return kNumericError;
        }
        return kOk;
    });
}

int cmd_verify(const std::string& data_dir, bool inject_bad_seed) {
    const auto start = std::chrono::steady_clock::now();
    spats::regression::Fixtures fixtures;
    try {
        fixtures = spats::regression::load_fixtures(data_dir);
    } catch (const spats::io::DocumentError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const spats::Error& e) {
        std::cerr << "input error: bundled fixture rejected: " << e.what() << "\n";
        return kInputError;
    }
    spats::regression::Options opts;
    opts.corrupt_newton_seed = inject_bad_seed;
    const auto results = spats::regression::run_all(fixtures, opts);
    int failures = 0;
    for (const auto& r : results) {
        std::cout << spats::regression::format_row(r) << "\n";
        failures += r.passed ? 0 : 1;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (results.size() - static_cast<std::size_t>(failures)) << "/" << results.size() << " criteria passed in "
              << seconds << " s\n";
    return failures == 0 ? kOk : kNumericError;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-time-scale decomposition and leader-follower synchronization"};
    app.require_subcommand(1);

    std::string model_path, graph_path, weights_path, out_path, scenario_path;
    std::string coupling = "auto";
    std::string data_dir = SPATS_DATA_DIR;
    std::optional<double> epsilon;
    bool inject_bad_seed = false;

    auto* decompose = app.add_subcommand("decompose", "Compute M, N and the pure-slow/pure-fast subsystems");
    decompose->add_option("model", model_path, "Model document (JSON)")->required();
    decompose->add_option("--epsilon", epsilon, "Override the perturbation parameter");
    decompose->add_option("--out", out_path, "Write JSON here instead of stdout");

    auto* synthesize = app.add_subcommand("synthesize", "Synthesize synchronization gains for a graph");
    synthesize->add_option("model", model_path, "Model document (JSON)")->required();
    synthesize->add_option("graph", graph_path, "Graph document (JSON)")->required();
    synthesize->add_option("--weights", weights_path, "Weights document with Q_s, Q_f, R_s, R_f");
    synthesize->add_option("--coupling", coupling, "auto, a number, or a ratio such as 12/7");
    synthesize->add_option("--out", out_path, "Write JSON here instead of stdout");

    auto* simulate = app.add_subcommand("simulate", "Simulate a leader-follower scenario");
    simulate->add_option("scenario", scenario_path, "Scenario document (JSON)")->required();

    auto* verify = app.add_subcommand("verify-paper", "Run the bundled aircraft reference regression");
    verify->add_option("--data-dir", data_dir, "Directory holding the bundled fixtures");
    verify->add_flag("--inject-bad-seed", inject_bad_seed, "Negative control: corrupt the Newton seed")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInputError;
    }

    if (*decompose) {
        return cmd_decompose(model_path, epsilon, out_path);
    }
    if (*synthesize) {
        return cmd_synthesize(model_path, graph_path, weights_path, coupling, out_path);
    }
    if (*simulate) {
        return cmd_simulate(scenario_path);
    }
    return cmd_verify(data_dir, inject_bad_seed);
}
