#pragma once

// One prosumer's feasible set as sparse linear rows over the global
// decision index, restricted to the offsets it actually references
// (its own variables plus coupled mirrors held by neighbors).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "p2pflow/decision_index.hpp"
#include "p2pflow/objective.hpp"
#include "p2pflow/scenario.hpp"

namespace p2pflow {

struct LinearRow {
    bool equality = false;
    // (global offset, coefficient), offsets strictly ascending
    std::vector<std::pair<int, double>> terms;
    double rhs = 0.0;
    ConstraintFamily family = ConstraintFamily::FlBox;
    std::string label;
};

struct Polyhedron {
    int owner = -1;
    std::vector<int> support;      // sorted global offsets with nonzero coefficients
    std::vector<LinearRow> rows;   // equalities first
    // terms of rows, rewritten to indices into `support`
    std::vector<std::vector<std::pair<int, double>>> local_terms;

    int dim() const { return static_cast<int>(support.size()); }
    int num_rows() const { return static_cast<int>(rows.size()); }
    int num_equalities() const {
        int n = 0;
        for (const auto& r : rows) n += r.equality ? 1 : 0;
        return n;
    }
    bool empty_marker = false;  // set has no rows and no variables (valid, skip)

    double eval_local(int row, const Eigen::VectorXd& local) const {
        double acc = 0.0;
        for (const auto& [k, c] : local_terms[row]) acc += c * local[k];
        return acc;
    }

    /// Local-coordinate positions of the support offsets.
    int local_of(int global_offset) const {
        auto it = std::lower_bound(support.begin(), support.end(), global_offset);
        if (it == support.end() || *it != global_offset) return -1;
        return static_cast<int>(it - support.begin());
    }
};

namespace detail {

/// Sorts rows (equalities first), drops all-zero rows, deduplicates exact
/// duplicates, computes the support and local-index rewrite.
inline Polyhedron finalize_polyhedron(int owner, std::vector<LinearRow> rows) {
    Polyhedron poly;
    poly.owner = owner;

    std::vector<LinearRow> kept;
    std::set<std::string> seen_keys;
    for (auto& r : rows) {
        std::sort(r.terms.begin(), r.terms.end());
        // merge duplicate offsets, drop zero coefficients
        std::vector<std::pair<int, double>> merged;
        for (const auto& [off, c] : r.terms) {
            if (!merged.empty() && merged.back().first == off)
                merged.back().second += c;
            else
                merged.emplace_back(off, c);
        }
        merged.erase(std::remove_if(merged.begin(), merged.end(),
                                    [](const auto& t) { return t.second == 0.0; }),
                     merged.end());
        r.terms = std::move(merged);
        if (r.terms.empty()) continue;  // degenerate all-zero row
        std::string key(r.equality ? "E" : "I");
        char buf[64];
        for (const auto& [off, c] : r.terms) {
            std::snprintf(buf, sizeof buf, "|%d:%.17g", off, c);
            key += buf;
        }
        std::snprintf(buf, sizeof buf, "<%.17g", r.rhs);
        key += buf;
        if (!seen_keys.insert(key).second) continue;  // duplicate row
        kept.push_back(std::move(r));
    }

    std::stable_sort(kept.begin(), kept.end(),
                     [](const LinearRow& a, const LinearRow& b) {
                         return a.equality && !b.equality;
                     });

    for (const auto& r : kept)
        for (const auto& [off, c] : r.terms) poly.support.push_back(off);
    std::sort(poly.support.begin(), poly.support.end());
    poly.support.erase(std::unique(poly.support.begin(), poly.support.end()),
                       poly.support.end());

    poly.local_terms.reserve(kept.size());
    for (const auto& r : kept) {
        std::vector<std::pair<int, double>> loc;
        loc.reserve(r.terms.size());
        for (const auto& [off, c] : r.terms) loc.emplace_back(poly.local_of(off), c);
        poly.local_terms.push_back(std::move(loc));
    }
    poly.rows = std::move(kept);
    poly.empty_marker = poly.rows.empty();
    return poly;
}

}  // namespace detail

/// Assembles a polyhedron from raw rows (deduplicated, zero rows
/// dropped, support computed).
inline Polyhedron make_polyhedron(int owner, std::vector<LinearRow> rows) {
    return detail::finalize_polyhedron(owner, std::move(rows));
}

/// Builds prosumer i's stage-1 feasible set: device constraints, grid and
/// trade nonnegativity, trade reciprocity against neighbors' sell
/// variables, both power-balance identities, and the flow limits of every
/// line whose transported power depends on this prosumer.
inline Polyhedron build_stage1_set(const CommunityScenario& sc, const DecisionIndex& index,
                                   int i) {
    const double dt = sc.time.step_hours;
    const int T = index.num_steps();
    const int np = sc.num_prosumers();
    const auto& p = sc.prosumers[i];
    std::vector<LinearRow> rows;
    auto row = [&](bool eq, ConstraintFamily fam, std::string label,
                   std::vector<std::pair<int, double>> terms, double rhs) {
        rows.push_back(LinearRow{eq, std::move(terms), rhs, fam, std::move(label)});
    };

    for (size_t m = 0; m < p.flexible_loads.size(); ++m) {
        const auto& fl = p.flexible_loads[m];
        const int o = index.block_start(i, VarKind::FlexLoad, static_cast<int>(m));
        double cap = 0.0;
        LinearRow energy;
        energy.equality = false;
        energy.family = ConstraintFamily::FlEnergy;
        energy.label = "fl" + std::to_string(m);
        for (int t = 0; t < T; ++t) {
            const std::string at = "fl" + std::to_string(m) + ",t=" + std::to_string(t);
            row(false, ConstraintFamily::FlBox, at + ",hi", {{o + t, 1.0}}, fl.p_max[t]);
            row(false, ConstraintFamily::FlBox, at + ",lo", {{o + t, -1.0}}, -fl.p_min[t]);
            energy.terms.emplace_back(o + t, -dt);
            cap += fl.p_max[t] * dt;
        }
        energy.rhs = -fl.energy_ref;
        if (fl.energy_ref > cap + 1e-9)
            throw ScenarioError(
                "prosumer " + std::to_string(i) + " fl" + std::to_string(m) +
                ": energy requirement " + std::to_string(fl.energy_ref) +
                " kWh contradicts the box rows (reachable energy " +
                std::to_string(cap) + " kWh)");
        rows.push_back(std::move(energy));
    }

    for (size_t q = 0; q < p.storages.size(); ++q) {
        const auto& es = p.storages[q];
        const int oc = index.block_start(i, VarKind::StorageCharge, static_cast<int>(q));
        const int od = index.block_start(i, VarKind::StorageDischarge, static_cast<int>(q));
        std::vector<std::pair<int, double>> running;
        for (int t = 0; t < T; ++t) {
            const std::string at = "ess" + std::to_string(q) + ",t=" + std::to_string(t);
            row(false, ConstraintFamily::ChargeBox, at + ",hi", {{oc + t, 1.0}}, es.p_charge_max);
            row(false, ConstraintFamily::ChargeBox, at + ",lo", {{oc + t, -1.0}}, 0.0);
            row(false, ConstraintFamily::DischargeBox, at + ",hi", {{od + t, 1.0}},
                es.p_discharge_max);
            row(false, ConstraintFamily::DischargeBox, at + ",lo", {{od + t, -1.0}}, 0.0);
            running.emplace_back(oc + t, es.eta_c * dt);
            running.emplace_back(od + t, -dt / es.eta_d);
            auto neg = running;
            for (auto& [off, c] : neg) c = -c;
            row(false, ConstraintFamily::SocWindow, at + ",hi", running,
                es.soc_max * es.w_nominal - es.w0);
            row(false, ConstraintFamily::SocWindow, at + ",lo", std::move(neg),
                es.w0 - es.soc_min * es.w_nominal);
        }
        auto neg = running;
        for (auto& [off, c] : neg) c = -c;
        row(false, ConstraintFamily::DayEnergyWindow, "ess" + std::to_string(q) + ",hi",
            running, es.w_day_max);
        row(false, ConstraintFamily::DayEnergyWindow, "ess" + std::to_string(q) + ",lo",
            std::move(neg), -es.w_day_min);
    }

    for (size_t d = 0; d < p.diesels.size(); ++d) {
        const auto& de = p.diesels[d];
        const int o = index.block_start(i, VarKind::Diesel, static_cast<int>(d));
        for (int t = 0; t < T; ++t) {
            const std::string at = "de" + std::to_string(d) + ",t=" + std::to_string(t);
            row(false, ConstraintFamily::DieselBox, at + ",hi", {{o + t, 1.0}}, de.p_max[t]);
            row(false, ConstraintFamily::DieselBox, at + ",lo", {{o + t, -1.0}}, -de.p_min[t]);
            if (t == 0) {
                row(false, ConstraintFamily::DieselRamp, at + ",up", {{o, 1.0}},
                    de.p_initial + dt * de.ramp_max[0]);
                row(false, ConstraintFamily::DieselRamp, at + ",down", {{o, -1.0}},
                    -(de.p_initial + dt * de.ramp_min[0]));
            } else {
                row(false, ConstraintFamily::DieselRamp, at + ",up",
                    {{o + t, 1.0}, {o + t - 1, -1.0}}, dt * de.ramp_max[t]);
                row(false, ConstraintFamily::DieselRamp, at + ",down",
                    {{o + t, -1.0}, {o + t - 1, 1.0}}, -dt * de.ramp_min[t]);
            }
        }
    }

    {
        const int os = index.block_start(i, VarKind::GridSell);
        const int ob = index.block_start(i, VarKind::GridBuy);
        for (int t = 0; t < T; ++t) {
            row(false, ConstraintFamily::GridNonneg, "gs,t=" + std::to_string(t),
                {{os + t, -1.0}}, 0.0);
            row(false, ConstraintFamily::GridNonneg, "gb,t=" + std::to_string(t),
                {{ob + t, -1.0}}, 0.0);
        }
    }

    for (int j = 0; j < np; ++j) {
        if (j == i) continue;
        const int ops = index.block_start(i, VarKind::TradeSell, j);
        const int opb = index.block_start(i, VarKind::TradeBuy, j);
        const int ops_ji = index.block_start(j, VarKind::TradeSell, i);
        for (int t = 0; t < T; ++t) {
            const std::string pair =
                std::to_string(i) + "->" + std::to_string(j) + ",t=" + std::to_string(t);
            row(false, ConstraintFamily::TradeNonneg, "ps," + pair, {{ops + t, -1.0}}, 0.0);
            row(false, ConstraintFamily::TradeNonneg, "pb," + pair, {{opb + t, -1.0}}, 0.0);
            row(true, ConstraintFamily::TradeReciprocity, pair,
                {{opb + t, 1.0}, {ops_ji + t, -1.0}}, 0.0);
        }
    }

    {
        const int oo = index.block_start(i, VarKind::NetOutput);
        const int os = index.block_start(i, VarKind::GridSell);
        const int ob = index.block_start(i, VarKind::GridBuy);
        for (int t = 0; t < T; ++t) {
            std::vector<std::pair<int, double>> dev{{oo + t, 1.0}};
            for (size_t d = 0; d < p.diesels.size(); ++d)
                dev.emplace_back(index.block_start(i, VarKind::Diesel, static_cast<int>(d)) + t, -1.0);
            for (size_t q = 0; q < p.storages.size(); ++q) {
                dev.emplace_back(index.block_start(i, VarKind::StorageCharge, static_cast<int>(q)) + t, -1.0);
                dev.emplace_back(index.block_start(i, VarKind::StorageDischarge, static_cast<int>(q)) + t, 1.0);
            }
            for (size_t m = 0; m < p.flexible_loads.size(); ++m)
                dev.emplace_back(index.block_start(i, VarKind::FlexLoad, static_cast<int>(m)) + t, 1.0);
            row(true, ConstraintFamily::BalanceDevices, "t=" + std::to_string(t),
                std::move(dev), p.nondispatchable_gen[t] - p.inflexible_load[t]);

            std::vector<std::pair<int, double>> trade{{oo + t, 1.0}, {os + t, -1.0}, {ob + t, 1.0}};
            for (int j = 0; j < np; ++j) {
                if (j == i) continue;
                trade.emplace_back(index.block_start(i, VarKind::TradeSell, j) + t, -1.0);
                trade.emplace_back(index.block_start(i, VarKind::TradeBuy, j) + t, 1.0);
            }
            row(true, ConstraintFamily::BalanceTrades, "t=" + std::to_string(t),
                std::move(trade), 0.0);
        }
    }

    for (const auto& line : sc.topology.lines) {
        if (std::find(line.members.begin(), line.members.end(), i) == line.members.end())
            continue;
        for (int t = 0; t < T; ++t) {
            std::vector<std::pair<int, double>> flow;
            for (int j : line.members)
                flow.emplace_back(index.block_start(j, VarKind::NetOutput) + t, 1.0);
            auto neg = flow;
            for (auto& [off, c] : neg) c = -c;
            const std::string at = "line" + std::to_string(line.id) + ",t=" + std::to_string(t);
            row(false, ConstraintFamily::LineFlow, at + ",hi", std::move(flow), line.c_max);
            row(false, ConstraintFamily::LineFlow, at + ",lo", std::move(neg), -line.c_min);
        }
    }

    return detail::finalize_polyhedron(i, std::move(rows));
}

/// Text dump of a polyhedron for diffing: one row per line,
/// "E|I rhs nterms off:coeff ...", offsets global, coefficients %.17g.
inline std::string dump_polyhedron(const Polyhedron& poly) {
    std::string out = "polyhedron owner=" + std::to_string(poly.owner) +
                      " dim=" + std::to_string(poly.dim()) +
                      " rows=" + std::to_string(poly.num_rows()) + "\n";
    char buf[64];
    for (const auto& r : poly.rows) {
        out += r.equality ? "E " : "I ";
        std::snprintf(buf, sizeof buf, "%.17g", r.rhs);
        out += buf;
        std::snprintf(buf, sizeof buf, " %zu", r.terms.size());
        out += buf;
        for (const auto& [off, c] : r.terms) {
            std::snprintf(buf, sizeof buf, " %d:%.17g", off, c);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

}  // namespace p2pflow
