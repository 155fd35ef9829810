#pragma once

// Stage-1 wiring (neighbor tables and the consensus problem for the
// energy-trading schedule) plus the convergence diagnostics: empirical
// inner-rate fitting, the closed-form iteration bounds, and the
// tuning-free learning-rate rule.

#include <cmath>
#include <span>
#include <vector>

#include "p2pflow/consensus.hpp"
#include "p2pflow/decision_index.hpp"
#include "p2pflow/objective.hpp"
#include "p2pflow/polyhedron.hpp"
#include "p2pflow/scenario.hpp"

namespace p2pflow {

/// Neighbor set N_c of every offset: the prosumers whose constraint sets
/// reference it. Trade variables couple exactly their two endpoints; a
/// net-output variable couples every prosumer sharing a line with its
/// owner. Verifies the neighbor symmetry that the message protocol
/// relies on and reports the offending line pair when the topology
/// breaks it.
inline std::vector<std::vector<int>> neighbor_sets(const CommunityScenario& sc,
                                                   const DecisionIndex& index) {
    const int np = sc.num_prosumers();
    std::vector<std::vector<int>> coline(np);
    for (int i = 0; i < np; ++i) coline[i].push_back(i);
    for (const auto& line : sc.topology.lines)
        for (int a : line.members)
            for (int b : line.members)
                if (a != b) coline[a].push_back(b);
    for (auto& v : coline) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }

    // Symmetry of the net-output neighbor sets; with a radial line family
    // this holds by construction, so a failure pinpoints a bad topology.
    for (const auto& line : sc.topology.lines)
        for (int a : line.members)
            for (int b : line.members)
                if (coline[a] != coline[b])
                    throw ScenarioError(
                        "line " + std::to_string(line.id) +
                        ": prosumers " + std::to_string(a) + " and " + std::to_string(b) +
                        " share it but disagree on their line neighborhoods; "
                        "the line family is not nested");

    std::vector<std::vector<int>> nc(index.total_len());
    for (int r = 0; r < index.total_len(); ++r) {
        const VarRef& v = index.describe(r);
        switch (v.kind) {
            case VarKind::TradeSell:
            case VarKind::TradeBuy:
                nc[r] = {std::min(v.prosumer, v.device), std::max(v.prosumer, v.device)};
                break;
            case VarKind::NetOutput:
                nc[r] = coline[v.prosumer];
                break;
            default:
                nc[r] = {v.prosumer};
                break;
        }
    }
    return nc;
}

/// Assembles the full stage-1 consensus problem: one stage-1 polyhedron
/// per prosumer, the separable social-cost objective, neighbor tables.
inline ConsensusProblem build_stage1_problem(const CommunityScenario& sc,
                                             const DecisionIndex& index) {
    ConsensusProblem prob;
    prob.num_agents = sc.num_prosumers();
    prob.dimension = index.total_len();
    prob.owner.resize(prob.dimension);
    prob.coupled.resize(prob.dimension);
    for (int r = 0; r < prob.dimension; ++r) {
        prob.owner[r] = index.owner(r);
        prob.coupled[r] = index.is_coupled(r) ? 1 : 0;
    }
    prob.neighbor_sets = neighbor_sets(sc, index);
    prob.objective = build_stage1_objective(sc, index);
    prob.sets.reserve(prob.num_agents);
    for (int i = 0; i < prob.num_agents; ++i)
        prob.sets.push_back(build_stage1_set(sc, index, i));
    return prob;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct EtaEstimate {
    double eta = 0.0;
    double fit_r2 = 0.0;
    int samples = 0;
};

/// Fits the inner residual sequence to the geometric model eta^(d/2) by
/// least squares on the log residuals. Residuals at or below `floor`
/// are excluded; fewer than five usable samples means the sequence
/// converged too fast to fit.
inline EtaEstimate estimate_eta(std::span<const double> inner_residuals,
                                double floor = 1e-13) {
    std::vector<double> xs, ys;
    for (size_t d = 0; d < inner_residuals.size(); ++d) {
        if (inner_residuals[d] > floor) {
            xs.push_back(static_cast<double>(d));
            ys.push_back(std::log(inner_residuals[d]));
        }
    }
    const int n = static_cast<int>(xs.size());
    if (n < 5)
        throw SolverError("estimate_eta: only " + std::to_string(n) +
                          " residuals above the tolerance floor; the inner iteration "
                          "converged too fast to fit a rate");
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (int i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
        syy += ys[i] * ys[i];
    }
    const double denom = n * sxx - sx * sx;
    const double slope = (n * sxy - sx * sy) / denom;
    EtaEstimate est;
    est.eta = std::exp(2.0 * slope);
    est.samples = n;
    const double sse_num = (n * syy - sy * sy) * denom - (n * sxy - sx * sy) * (n * sxy - sx * sy);
    const double total = (n * syy - sy * sy) * denom;
    est.fit_r2 = total > 0 ? 1.0 - sse_num / total : 1.0;
    return est;
}

struct IterationBound {
    double k_bar = 0.0;   // outer iterations
    double n_bar = 0.0;   // inner iterations per outer
    double n_max = 0.0;   // total steps, k_bar * n_bar
};

/// Conservative closed-form bound on the steps needed to reach an
/// epsilon-accurate averaged iterate, given the smoothness constant, the
/// initial distance and the inner contraction rate. Diagnostic only.
inline IterationBound iteration_bound(double learning_rate_l, double r0, double epsilon,
                                      double eta) {
    if (learning_rate_l <= 0 || r0 <= 0 || epsilon <= 0)
        throw SolverError("iteration_bound: L, R0 and epsilon must be positive");
    if (eta < 0.5 || eta >= 1.0)
        throw SolverError("iteration_bound: eta must lie in [0.5, 1)");
    const double L = learning_rate_l;
    const double se = std::sqrt(epsilon);
    const double log_inv_eta = std::log(1.0 / eta);

    IterationBound b;
    b.k_bar = std::max({2.0 * L * r0 / epsilon,
                        std::sqrt(2.0) * L * L * r0 * r0 / se, 1.0});

    const double r0_2 = r0 * r0, r0_3 = r0_2 * r0, r0_4 = r0_2 * r0_2, r0_6 = r0_3 * r0_3;
    const double L2 = L * L, L4 = L2 * L2, L5 = L4 * L, L6 = L4 * L2;
    const double a1 = 8.0 * std::sqrt(2.0) * L * r0_3 / (epsilon * se) * (L5 * r0_3 + L2 + 1.0);
    const double a2 = 8.0 * std::sqrt(2.0) * L6 * r0_6 / (epsilon * se) +
                      24.0 * L4 * r0_4 / epsilon +
                      8.0 * std::sqrt(2.0) * L * (L2 + 1.0) * r0_3 / (epsilon * se) +
                      4.0 * L * r0_2 / epsilon + (8.0 * L2 + 4.0) * r0 / (epsilon * L);
    const double a3 = 8.0 * L2 * (2.0 * L2 + 1.0) * r0_4 / (epsilon * epsilon * epsilon) +
                      16.0 * L * (L2 + 1.0) * r0_3 / (epsilon * epsilon) +
                      8.0 * (L2 + 1.0) * r0_2 / epsilon;
    const double a4 = 4.0 * L4 * (2.0 * L2 + 1.0) * r0_6 / (epsilon * epsilon) +
                      8.0 * std::sqrt(2.0) * L2 * (L2 + 1.0) * r0_4 / (epsilon * se) +
                      8.0 * (L2 + 1.0) * r0_2 / epsilon;
    auto safe_log = [](double a) { return a > 1.0 ? std::log(a) : 0.0; };
    b.n_bar = std::max({2.0 * safe_log(a1) / log_inv_eta, 2.0 * safe_log(a2) / log_inv_eta,
                        safe_log(a3) / log_inv_eta, safe_log(a4) / log_inv_eta, 1.0});
    b.n_max = b.k_bar * b.n_bar;
    return b;
}

/// Learning-rate rule. The safety default doubles twice the largest
/// quadratic coefficient of the objective (guaranteeing a contractive
/// gradient map); the reproduce-paper mode returns the largest quadratic
/// coefficient itself. Falls back to 1 when the objective is purely
/// linear, where the projection alone bounds the iterates.
inline double default_learning_rate(const CommunityScenario& sc, bool reproduce_paper = false,
                                    double safety_factor = 2.0) {
    double max_coeff = 0.0;
    for (const auto& p : sc.prosumers) {
        for (const auto& fl : p.flexible_loads) max_coeff = std::max(max_coeff, fl.beta2);
        for (const auto& de : p.diesels) max_coeff = std::max(max_coeff, de.lambda1);
    }
    if (max_coeff <= 0.0) return 1.0;
    return reproduce_paper ? max_coeff : safety_factor * 2.0 * max_coeff;
}

/// Same rule for an arbitrary separable objective (the stage-2 price
/// problem feeds its own quadratic form through this).
inline double default_learning_rate(const SeparableQuadratic& objective,
                                    double safety_factor = 2.0) {
    const double max_coeff = objective.quad.size() ? objective.quad.maxCoeff() : 0.0;
    if (max_coeff <= 0.0) return 1.0;
    return safety_factor * max_coeff;
}

}  // namespace p2pflow
