#pragma once

// Glue from documents to runnable scenarios.

#include <optional>
#include <vector>

#include "spats/decompose.hpp"
#include "spats/io.hpp"
#include "spats/protocol.hpp"
#include "spats/sim.hpp"

namespace spats {

inline SynchronizationGains synthesize(const ChangDecomposition& d, const CommGraph& g, const SubsystemWeights& w,
                                       const io::CouplingSpec& coupling) {
    if (d.kind == ModelKind::continuous) {
        if (!coupling.automatic && coupling.c_s != coupling.c_f) {
            throw Error(ErrorKind::InvalidParameter, "continuous protocol takes a single coupling gain");
        }
        return synthesize_continuous(d, g, w, coupling.automatic ? std::nullopt : std::optional(coupling.c_s));
    }
    if (coupling.automatic) {
        return synthesize_discrete(d, g, w, std::nullopt, std::nullopt);
    }
    return synthesize_discrete(d, g, w, coupling.c_s, coupling.c_f);
}

inline Scenario build_scenario(const PartitionedLinearModel& model, const CommGraph& graph,
                               const SubsystemWeights& weights, const io::CouplingSpec& coupling, Vector leader_init,
                               std::vector<Vector> follower_inits, double horizon, std::optional<double> step,
                               const NewtonOptions& newton = {}) {
    Scenario s;
    s.model = model;
    s.decomp = decompose(model, newton);
    s.graph = graph;
    s.gains = synthesize(s.decomp, graph, weights, coupling);
    s.leader_init = std::move(leader_init);
    s.follower_inits = std::move(follower_inits);
    s.horizon = horizon;
    s.step = step;
    return s;
}

inline Scenario build_scenario(const io::ScenarioDocument& doc, const NewtonOptions& newton = {}) {
    return build_scenario(doc.model.model, doc.graph, doc.weights, doc.coupling, doc.leader_init,
                          doc.follower_inits, doc.horizon, doc.step, newton);
}

} // namespace spats
