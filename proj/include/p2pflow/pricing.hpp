#pragma once

// Stage 2: clearing prices for the stage-1 trade schedule. One price
// variable per ordered pair with active trade; sellers pull toward the
// price cap, buyers toward the floor, subject to price symmetry, the
// price window, and each prosumer's benefit bound (no one pays more than
// their no-trading cost). The same consensus engine solves it, with the
// two endpoints of every pair as neighbors.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "p2pflow/consensus.hpp"
#include "p2pflow/decision_index.hpp"
#include "p2pflow/objective.hpp"
#include "p2pflow/oracle.hpp"
#include "p2pflow/scenario.hpp"

namespace p2pflow {

class PricingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PricePairKey {
    int seller_view;  // prosumer owning this lambda
    int partner;
    int step;

    friend bool operator==(const PricePairKey&, const PricePairKey&) = default;
};

/// Flat index over the ordered active pairs (i, j, t). The mirror pairing
/// (i,j,t) <-> (j,i,t) is a perfect matching by construction: activity is
/// decided from the undirected pair's traded power.
class PriceIndex {
public:
    PriceIndex() = default;

    PriceIndex(const CommunityScenario& sc, const DecisionIndex& index,
               const Eigen::VectorXd& stage1_solution, double activity_tol = 1e-4) {
        const int np = sc.num_prosumers();
        const int T = index.num_steps();
        activity_tol_ = activity_tol;
        for (int i = 0; i < np; ++i)
            for (int j = 0; j < np; ++j) {
                if (j == i) continue;
                const int ops = index.block_start(i, VarKind::TradeSell, j);
                const int opb = index.block_start(i, VarKind::TradeBuy, j);
                const int ops_ji = index.block_start(j, VarKind::TradeSell, i);
                const int opb_ji = index.block_start(j, VarKind::TradeBuy, i);
                for (int t = 0; t < T; ++t) {
                    const double undirected =
                        std::max({stage1_solution[ops + t], stage1_solution[opb + t],
                                  stage1_solution[ops_ji + t], stage1_solution[opb_ji + t]});
                    if (undirected <= activity_tol) continue;
                    Entry e;
                    e.owner = i;
                    e.partner = j;
                    e.step = t;
                    e.sell_power = stage1_solution[ops + t];
                    e.buy_power = stage1_solution[opb + t];
                    entries_.push_back(e);
                }
            }
        mirror_.assign(entries_.size(), -1);
        for (size_t a = 0; a < entries_.size(); ++a)
            for (size_t b = 0; b < entries_.size(); ++b)
                if (entries_[b].owner == entries_[a].partner &&
                    entries_[b].partner == entries_[a].owner &&
                    entries_[b].step == entries_[a].step)
                    mirror_[a] = static_cast<int>(b);
        for (size_t a = 0; a < entries_.size(); ++a)
            if (mirror_[a] < 0)
                throw PricingError("price index is not mirror-matched; stage-1 "
                                   "reciprocity must have been violated");
    }

    struct Entry {
        int owner;
        int partner;
        int step;
        double sell_power;  // stage-1 P_ps of (owner -> partner)
        double buy_power;   // stage-1 P_pb of (owner <- partner)
    };

    int size() const { return static_cast<int>(entries_.size()); }
    bool empty() const { return entries_.empty(); }
    const Entry& entry(int k) const { return entries_[k]; }
    int mirror(int k) const { return mirror_[k]; }
    double activity_tol() const { return activity_tol_; }

    int locate(int owner, int partner, int step) const {
        for (size_t k = 0; k < entries_.size(); ++k)
            if (entries_[k].owner == owner && entries_[k].partner == partner &&
                entries_[k].step == step)
                return static_cast<int>(k);
        return -1;
    }

private:
    std::vector<Entry> entries_;
    std::vector<int> mirror_;
    double activity_tol_ = 1e-4;
};

/// Sellers are pulled toward lambda_max, buyers toward lambda_min, one
/// squared-distance term per active direction.
inline SeparableQuadratic build_stage2_objective(const CommunityScenario& sc,
                                                 const PriceIndex& prices) {
    SeparableQuadratic f;
    f.quad = Eigen::VectorXd::Zero(prices.size());
    f.lin = Eigen::VectorXd::Zero(prices.size());
    for (int k = 0; k < prices.size(); ++k) {
        const auto& e = prices.entry(k);
        if (e.sell_power > prices.activity_tol()) {
            f.quad[k] += 1.0;
            f.lin[k] += -2.0 * sc.tariffs.lambda_max;
            f.constant += sc.tariffs.lambda_max * sc.tariffs.lambda_max;
        }
        if (e.buy_power > prices.activity_tol()) {
            f.quad[k] += 1.0;
            f.lin[k] += -2.0 * sc.tariffs.lambda_min;
            f.constant += sc.tariffs.lambda_min * sc.tariffs.lambda_min;
        }
    }
    return f;
}

struct BaselineResult {
    Eigen::VectorXd x0_star;
    std::vector<double> costs;  // f^i(X0*) per prosumer
    double total = 0.0;
};

/// Optimal schedules with all bilateral trades pinned to zero, and the
/// per-prosumer costs the prices must beat.
inline BaselineResult solve_no_trade_baseline(const CommunityScenario& sc,
                                              const DecisionIndex& index) {
    oracle::OracleSolution sol = oracle::solve_centralized(sc, index, /*pin_trades=*/true);
    if (sol.status != oracle::OracleStatus::Optimal) {
        // name the prosumer whose own constraints cannot be met
        for (int i = 0; i < sc.num_prosumers(); ++i) {
            CommunityScenario solo;
            solo.name = sc.name + ":solo";
            solo.time = sc.time;
            solo.tariffs = sc.tariffs;
            solo.prosumers = {sc.prosumers[i]};
            solo.topology.distance = {{0.0}};
            DecisionIndex solo_index(solo);
            auto qp = oracle::assemble_stage1(solo, solo_index, true);
            auto cert = oracle::certify_feasibility(qp);
            if (!cert.feasible) {
                std::string rows;
                for (const auto& [label, v] : cert.worst_rows) rows += " " + label;
                throw PricingError("no-trade baseline infeasible for prosumer " +
                                   std::to_string(i) + "; contradicting rows:" + rows);
            }
        }
        throw PricingError("no-trade baseline solve failed: " + sol.message);
    }
    BaselineResult base;
    base.x0_star = sol.x_star;
    for (int i = 0; i < sc.num_prosumers(); ++i) {
        // trades are zero, so the trade price is irrelevant here
        base.costs.push_back(prosumer_cost(sc, index, sol.x_star, i, 0.0).total());
        base.total += base.costs.back();
    }
    return base;
}

/// Prosumer i's stage-2 feasible set over the price index: the price
/// window on its own pairs, symmetry with each partner's mirror price,
/// and the linear benefit bound derived from the stage-1 schedule.
/// Prosumers without active trades get the empty marker.
inline Polyhedron build_stage2_set(const CommunityScenario& sc, const DecisionIndex& index,
                                   const PriceIndex& prices, int i,
                                   const Eigen::VectorXd& stage1_solution,
                                   const std::vector<double>& baseline_costs) {
    const double dt = sc.time.step_hours;
    std::vector<LinearRow> rows;
    LinearRow benefit;
    benefit.equality = false;
    benefit.family = ConstraintFamily::TradeReciprocity;
    benefit.label = "benefit,p" + std::to_string(i);
    bool any = false;
    for (int k = 0; k < prices.size(); ++k) {
        const auto& e = prices.entry(k);
        if (e.owner != i) continue;
        any = true;
        const std::string pair = std::to_string(i) + "->" + std::to_string(e.partner) +
                                 ",t=" + std::to_string(e.step);
        rows.push_back(LinearRow{false, {{k, 1.0}}, sc.tariffs.lambda_max,
                                 ConstraintFamily::FlBox, "price_hi," + pair});
        rows.push_back(LinearRow{false, {{k, -1.0}}, -sc.tariffs.lambda_min,
                                 ConstraintFamily::FlBox, "price_lo," + pair});
        rows.push_back(LinearRow{true, {{k, 1.0}, {prices.mirror(k), -1.0}}, 0.0,
                                 ConstraintFamily::TradeReciprocity, "symmetry," + pair});
        benefit.terms.emplace_back(k, dt * (e.buy_power - e.sell_power));
    }
    if (!any) return make_polyhedron(i, {});

    const double trade_free_cost =
        prosumer_cost(sc, index, stage1_solution, i, 0.0).total_excluding_trade();
    benefit.rhs = baseline_costs[i] - trade_free_cost;
    rows.push_back(std::move(benefit));
    Polyhedron poly = make_polyhedron(i, std::move(rows));

    // the benefit row must admit some price in the window
    double lo = 0.0;
    for (const auto& row : poly.rows) {
        if (row.label.rfind("benefit", 0) != 0) continue;
        for (const auto& [k, c] : row.terms)
            lo += c > 0 ? c * sc.tariffs.lambda_min : c * sc.tariffs.lambda_max;
        if (lo > row.rhs + 1e-9)
            throw PricingError("no price in the window satisfies the benefit bound of "
                               "prosumer " +
                               std::to_string(i) + " (slack " + std::to_string(row.rhs - lo) +
                               " $); the stage-1 schedule cannot gain for everyone");
    }
    return poly;
}

struct PriceVector {
    PriceIndex index;
    Eigen::VectorXd values;  // $/kWh per entry

    std::optional<double> price(int owner, int partner, int step) const {
        const int k = index.locate(owner, partner, step);
        if (k < 0) return std::nullopt;
        return values[k];
    }
};

struct StageTwoProblem {
    PriceIndex prices;
    ConsensusProblem consensus;
    BaselineResult baseline;
};

/// Assembles the stage-2 consensus problem (price index, objective, one
/// set per prosumer, endpoint neighbor tables).
inline StageTwoProblem build_stage2_problem(const CommunityScenario& sc,
                                            const DecisionIndex& index,
                                            const Eigen::VectorXd& stage1_solution,
                                            double activity_tol = 1e-4) {
    StageTwoProblem st;
    st.prices = PriceIndex(sc, index, stage1_solution, activity_tol);
    st.baseline = solve_no_trade_baseline(sc, index);
    st.consensus.num_agents = sc.num_prosumers();
    st.consensus.dimension = st.prices.size();
    st.consensus.owner.resize(st.prices.size());
    st.consensus.coupled.assign(st.prices.size(), 1);
    st.consensus.neighbor_sets.resize(st.prices.size());
    for (int k = 0; k < st.prices.size(); ++k) {
        const auto& e = st.prices.entry(k);
        st.consensus.owner[k] = e.owner;
        st.consensus.neighbor_sets[k] = {std::min(e.owner, e.partner),
                                         std::max(e.owner, e.partner)};
    }
    st.consensus.objective = build_stage2_objective(sc, st.prices);
    for (int i = 0; i < sc.num_prosumers(); ++i)
        st.consensus.sets.push_back(
            build_stage2_set(sc, index, st.prices, i, stage1_solution, st.baseline.costs));
    return st;
}

struct PriceSolveResult {
    PriceVector prices;
    ConvergenceTrace trace;
    BaselineResult baseline;
};

/// Decentralized stage-2 solve with the given configuration, whose
/// learning rate the caller owns.
inline PriceSolveResult solve_prices(const CommunityScenario& sc, const DecisionIndex& index,
                                     const Eigen::VectorXd& stage1_solution,
                                     const SolverConfig& cfg, double activity_tol = 1e-4) {
    StageTwoProblem st = build_stage2_problem(sc, index, stage1_solution, activity_tol);
    PriceSolveResult out;
    out.baseline = std::move(st.baseline);
    out.prices.index = st.prices;
    if (st.prices.empty()) {
        out.prices.values.resize(0);
        return out;
    }
    RunResult run = run_consensus(st.consensus, cfg);
    out.prices.values = std::move(run.solution);
    out.trace = std::move(run.trace);
    return out;
}

/// Same, with the learning rate derived from the price objective's
/// quadratic form by the standard rule.
inline PriceSolveResult solve_prices(const CommunityScenario& sc, const DecisionIndex& index,
                                     const Eigen::VectorXd& stage1_solution,
                                     double activity_tol = 1e-4) {
    StageTwoProblem st = build_stage2_problem(sc, index, stage1_solution, activity_tol);
    PriceSolveResult out;
    out.baseline = std::move(st.baseline);
    out.prices.index = st.prices;
    if (st.prices.empty()) {
        out.prices.values.resize(0);
        return out;
    }
    SolverConfig cfg;
    cfg.learning_rate_l = default_learning_rate(st.consensus.objective);
    RunResult run = run_consensus(st.consensus, cfg);
    out.prices.values = std::move(run.solution);
    out.trace = std::move(run.trace);
    return out;
}

}  // namespace p2pflow
