#pragma once

// Stage-1 social-cost objective f(X), its per-prosumer components, the
// element-wise gradient, and direct evaluation of every physical and
// trading constraint on a decision vector.
//
// f is separable: every variable enters through at most one quadratic
// and one linear term, so the gradient of component r depends on x_r
// alone. The solver consumes the (quad, lin) coefficient arrays; the
// component-wise evaluators below exist for reporting and as an
// independent cross-check of those arrays.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "p2pflow/decision_index.hpp"
#include "p2pflow/scenario.hpp"

namespace p2pflow {

// ---------------------------------------------------------------------------
// Separable quadratic form  f(x) = sum_r quad_r x_r^2 + lin_r x_r + constant
// ---------------------------------------------------------------------------

struct SeparableQuadratic {
    Eigen::VectorXd quad;
    Eigen::VectorXd lin;
    double constant = 0.0;

    double value(const Eigen::VectorXd& x) const {
        double acc = constant;
        for (Eigen::Index r = 0; r < x.size(); ++r)
            acc += (quad[r] * x[r] + lin[r]) * x[r];
        return acc;
    }

    double partial(int r, double xr) const { return 2.0 * quad[r] * xr + lin[r]; }

    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
        Eigen::VectorXd g(x.size());
        for (Eigen::Index r = 0; r < x.size(); ++r)
            g[r] = partial(static_cast<int>(r), x[r]);
        return g;
    }
};

/// Coefficient arrays of the stage-1 objective over the canonical index.
inline SeparableQuadratic build_stage1_objective(const CommunityScenario& sc,
                                                 const DecisionIndex& index) {
    const double dt = sc.time.step_hours;
    const double lp = sc.stage1_trade_price;
    SeparableQuadratic f;
    f.quad = Eigen::VectorXd::Zero(index.total_len());
    f.lin = Eigen::VectorXd::Zero(index.total_len());

    for (int r = 0; r < index.total_len(); ++r) {
        const VarRef& v = index.describe(r);
        const ProsumerSpec& p = sc.prosumers[v.prosumer];
        switch (v.kind) {
            case VarKind::FlexLoad: {
                const auto& fl = p.flexible_loads[v.device];
                f.quad[r] = fl.beta2;
                f.lin[r] = fl.beta1 * dt - 2.0 * fl.beta2 * fl.ref_profile[v.step];
                break;
            }
            case VarKind::StorageCharge:
            case VarKind::StorageDischarge:
                f.lin[r] = p.storages[v.device].lambda_ess * dt;
                break;
            case VarKind::Diesel: {
                const auto& de = p.diesels[v.device];
                f.quad[r] = de.lambda1;
                f.lin[r] = de.lambda2;
                break;
            }
            case VarKind::GridSell:
                f.lin[r] = -sc.tariffs.lambda_gs * dt;
                break;
            case VarKind::GridBuy:
                f.lin[r] = sc.tariffs.lambda_gb * dt;
                break;
            case VarKind::TradeSell:
            case VarKind::TradeBuy: {
                const double fee =
                    sc.tariffs.lambda_o +
                    sc.tariffs.lambda_d * sc.topology.distance[v.prosumer][v.device];
                const double trade = (v.kind == VarKind::TradeBuy) ? lp : -lp;
                f.lin[r] = (fee + trade) * dt;
                break;
            }
            case VarKind::NetOutput:
                break;
        }
    }
    for (const ProsumerSpec& p : sc.prosumers)
        for (const auto& fl : p.flexible_loads) {
            f.constant -= fl.beta1 * fl.energy_ref;
            for (double ref : fl.ref_profile) f.constant += fl.beta2 * ref * ref;
        }
    return f;
}

// ---------------------------------------------------------------------------
// Component-wise cost evaluation
// ---------------------------------------------------------------------------

struct ProsumerCost {
    double f_om = 0.0;        // storage and diesel operation
    double convenience = 0.0; // S, entering the total with a minus sign
    double f_grid = 0.0;
    double f_o = 0.0;         // operation + distance fees on trades
    double f_trade = 0.0;     // bilateral payments at the stage-1 price

    double total() const { return f_om - convenience + f_grid + f_o + f_trade; }
    double total_excluding_trade() const { return f_om - convenience + f_grid + f_o; }
};

/// Per-prosumer cost components at x, trades priced at `trade_price`
/// (pass scenario.stage1_trade_price for the stage-1 objective).
inline ProsumerCost prosumer_cost(const CommunityScenario& sc, const DecisionIndex& index,
                                  const Eigen::VectorXd& x, int i, double trade_price) {
    const double dt = sc.time.step_hours;
    const int T = index.num_steps();
    const auto& p = sc.prosumers[i];
    ProsumerCost c;

    for (size_t q = 0; q < p.storages.size(); ++q) {
        const int oc = index.block_start(i, VarKind::StorageCharge, static_cast<int>(q));
        const int od = index.block_start(i, VarKind::StorageDischarge, static_cast<int>(q));
        for (int t = 0; t < T; ++t)
            c.f_om += p.storages[q].lambda_ess * (x[od + t] + x[oc + t]) * dt;
    }
    for (size_t d = 0; d < p.diesels.size(); ++d) {
        const int o = index.block_start(i, VarKind::Diesel, static_cast<int>(d));
        for (int t = 0; t < T; ++t)
            c.f_om += p.diesels[d].lambda1 * x[o + t] * x[o + t] +
                      p.diesels[d].lambda2 * x[o + t];
    }
    for (size_t m = 0; m < p.flexible_loads.size(); ++m) {
        const auto& fl = p.flexible_loads[m];
        const int o = index.block_start(i, VarKind::FlexLoad, static_cast<int>(m));
        double energy = 0.0, deviation = 0.0;
        for (int t = 0; t < T; ++t) {
            energy += x[o + t] * dt;
            const double d = x[o + t] - fl.ref_profile[t];
            deviation += fl.beta2 * d * d;
        }
        c.convenience += fl.beta1 * (fl.energy_ref - energy) - deviation;
    }
    {
        const int os = index.block_start(i, VarKind::GridSell);
        const int ob = index.block_start(i, VarKind::GridBuy);
        for (int t = 0; t < T; ++t)
            c.f_grid += (sc.tariffs.lambda_gb * x[ob + t] - sc.tariffs.lambda_gs * x[os + t]) * dt;
    }
    for (int j = 0; j < sc.num_prosumers(); ++j) {
        if (j == i) continue;
        const int ops = index.block_start(i, VarKind::TradeSell, j);
        const int opb = index.block_start(i, VarKind::TradeBuy, j);
        const double fee = sc.tariffs.lambda_o + sc.tariffs.lambda_d * sc.topology.distance[i][j];
        for (int t = 0; t < T; ++t) {
            c.f_o += fee * (x[opb + t] + x[ops + t]) * dt;
            c.f_trade += trade_price * (x[opb + t] - x[ops + t]) * dt;
        }
    }
    return c;
}

/// Right-hand side of the net-output identity: generation minus
/// consumption from the device schedules (not the P_o variable itself).
inline double net_output(const CommunityScenario& sc, const DecisionIndex& index,
                         const Eigen::VectorXd& x, int i, int t) {
    const auto& p = sc.prosumers[i];
    double out = p.nondispatchable_gen[t] - p.inflexible_load[t];
    for (size_t d = 0; d < p.diesels.size(); ++d)
        out += x[index.block_start(i, VarKind::Diesel, static_cast<int>(d)) + t];
    for (size_t q = 0; q < p.storages.size(); ++q)
        out += x[index.block_start(i, VarKind::StorageCharge, static_cast<int>(q)) + t] -
               x[index.block_start(i, VarKind::StorageDischarge, static_cast<int>(q)) + t];
    for (size_t m = 0; m < p.flexible_loads.size(); ++m)
        out -= x[index.block_start(i, VarKind::FlexLoad, static_cast<int>(m)) + t];
    return out;
}

/// Total social cost f(X) = sum of per-prosumer totals at the fixed
/// stage-1 trade price.
inline double objective(const CommunityScenario& sc, const DecisionIndex& index,
                        const Eigen::VectorXd& x) {
    double f = 0.0;
    for (int i = 0; i < sc.num_prosumers(); ++i)
        f += prosumer_cost(sc, index, x, i, sc.stage1_trade_price).total();
    return f;
}

inline Eigen::VectorXd gradient(const CommunityScenario& sc, const DecisionIndex& index,
                                const Eigen::VectorXd& x) {
    return build_stage1_objective(sc, index).gradient(x);
}

// ---------------------------------------------------------------------------
// Constraint residuals
// ---------------------------------------------------------------------------

enum class ConstraintFamily : std::uint8_t {
    FlBox,
    FlEnergy,
    SocWindow,
    ChargeBox,
    DischargeBox,
    DayEnergyWindow,
    DieselBox,
    DieselRamp,
    GridNonneg,
    TradeNonneg,
    TradeReciprocity,
    BalanceDevices,
    BalanceTrades,
    LineFlow,
};

inline const char* to_string(ConstraintFamily f) {
    switch (f) {
        case ConstraintFamily::FlBox: return "fl_box";
        case ConstraintFamily::FlEnergy: return "fl_energy";
        case ConstraintFamily::SocWindow: return "soc_window";
        case ConstraintFamily::ChargeBox: return "charge_box";
        case ConstraintFamily::DischargeBox: return "discharge_box";
        case ConstraintFamily::DayEnergyWindow: return "day_energy_window";
        case ConstraintFamily::DieselBox: return "diesel_box";
        case ConstraintFamily::DieselRamp: return "diesel_ramp";
        case ConstraintFamily::GridNonneg: return "grid_nonneg";
        case ConstraintFamily::TradeNonneg: return "trade_nonneg";
        case ConstraintFamily::TradeReciprocity: return "trade_reciprocity";
        case ConstraintFamily::BalanceDevices: return "balance_devices";
        case ConstraintFamily::BalanceTrades: return "balance_trades";
        case ConstraintFamily::LineFlow: return "line_flow";
    }
    return "?";
}

struct ResidualEntry {
    ConstraintFamily family;
    int prosumer;  // owning prosumer, or -1 for shared line rows
    std::string label;
    bool equality;
    double residual;  // lhs - bound; for inequalities, positive means violated

    double violation() const {
        return equality ? std::abs(residual) : std::max(residual, 0.0);
    }
};

struct ResidualReport {
    std::vector<ResidualEntry> entries;

    double max_violation() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.violation());
        return m;
    }

    const ResidualEntry* worst() const {
        const ResidualEntry* w = nullptr;
        for (const auto& e : entries)
            if (!w || e.violation() > w->violation()) w = &e;
        return w;
    }

    /// Largest violation per (prosumer, family), for compact diagnostics.
    std::vector<ResidualEntry> summary() const {
        std::vector<ResidualEntry> out;
        for (const auto& e : entries) {
            ResidualEntry* slot = nullptr;
            for (auto& s : out)
                if (s.family == e.family && s.prosumer == e.prosumer) slot = &s;
            if (!slot) {
                out.push_back(e);
            } else if (e.violation() > slot->violation()) {
                *slot = e;
            }
        }
        return out;
    }
};

/// Evaluates every constraint family on x directly from the scenario
/// (independent of the polyhedron builders).
inline ResidualReport constraint_residuals(const CommunityScenario& sc,
                                           const DecisionIndex& index,
                                           const Eigen::VectorXd& x) {
    const double dt = sc.time.step_hours;
    const int T = index.num_steps();
    const int np = sc.num_prosumers();
    ResidualReport rep;
    auto add = [&](ConstraintFamily fam, int pro, std::string label, bool eq, double res) {
        rep.entries.push_back(ResidualEntry{fam, pro, std::move(label), eq, res});
    };

    for (int i = 0; i < np; ++i) {
        const auto& p = sc.prosumers[i];
        for (size_t m = 0; m < p.flexible_loads.size(); ++m) {
            const auto& fl = p.flexible_loads[m];
            const int o = index.block_start(i, VarKind::FlexLoad, static_cast<int>(m));
            double energy = 0.0;
            for (int t = 0; t < T; ++t) {
                const std::string at = "fl" + std::to_string(m) + ",t=" + std::to_string(t);
                add(ConstraintFamily::FlBox, i, at + ",hi", false, x[o + t] - fl.p_max[t]);
                add(ConstraintFamily::FlBox, i, at + ",lo", false, fl.p_min[t] - x[o + t]);
                energy += x[o + t] * dt;
            }
            add(ConstraintFamily::FlEnergy, i, "fl" + std::to_string(m), false,
                fl.energy_ref - energy);
        }
        for (size_t q = 0; q < p.storages.size(); ++q) {
            const auto& es = p.storages[q];
            const int oc = index.block_start(i, VarKind::StorageCharge, static_cast<int>(q));
            const int od = index.block_start(i, VarKind::StorageDischarge, static_cast<int>(q));
            double stored = es.w0;
            for (int t = 0; t < T; ++t) {
                const std::string at = "ess" + std::to_string(q) + ",t=" + std::to_string(t);
                add(ConstraintFamily::ChargeBox, i, at + ",hi", false, x[oc + t] - es.p_charge_max);
                add(ConstraintFamily::ChargeBox, i, at + ",lo", false, -x[oc + t]);
                add(ConstraintFamily::DischargeBox, i, at + ",hi", false,
                    x[od + t] - es.p_discharge_max);
                add(ConstraintFamily::DischargeBox, i, at + ",lo", false, -x[od + t]);
                stored += (x[oc + t] * es.eta_c - x[od + t] / es.eta_d) * dt;
                add(ConstraintFamily::SocWindow, i, at + ",hi", false,
                    stored - es.soc_max * es.w_nominal);
                add(ConstraintFamily::SocWindow, i, at + ",lo", false,
                    es.soc_min * es.w_nominal - stored);
            }
            add(ConstraintFamily::DayEnergyWindow, i, "ess" + std::to_string(q) + ",hi", false,
                (stored - es.w0) - es.w_day_max);
            add(ConstraintFamily::DayEnergyWindow, i, "ess" + std::to_string(q) + ",lo", false,
                es.w_day_min - (stored - es.w0));
        }
        for (size_t d = 0; d < p.diesels.size(); ++d) {
            const auto& de = p.diesels[d];
            const int o = index.block_start(i, VarKind::Diesel, static_cast<int>(d));
            for (int t = 0; t < T; ++t) {
                const std::string at = "de" + std::to_string(d) + ",t=" + std::to_string(t);
                add(ConstraintFamily::DieselBox, i, at + ",hi", false, x[o + t] - de.p_max[t]);
                add(ConstraintFamily::DieselBox, i, at + ",lo", false, de.p_min[t] - x[o + t]);
                const double prev = (t == 0) ? de.p_initial : x[o + t - 1];
                const double ramp = x[o + t] - prev;
                add(ConstraintFamily::DieselRamp, i, at + ",up", false, ramp - dt * de.ramp_max[t]);
                add(ConstraintFamily::DieselRamp, i, at + ",down", false, dt * de.ramp_min[t] - ramp);
            }
        }
        {
            const int os = index.block_start(i, VarKind::GridSell);
            const int ob = index.block_start(i, VarKind::GridBuy);
            for (int t = 0; t < T; ++t) {
                add(ConstraintFamily::GridNonneg, i, "gs,t=" + std::to_string(t), false, -x[os + t]);
                add(ConstraintFamily::GridNonneg, i, "gb,t=" + std::to_string(t), false, -x[ob + t]);
            }
        }
        for (int j = 0; j < np; ++j) {
            if (j == i) continue;
            const int ops = index.block_start(i, VarKind::TradeSell, j);
            const int opb = index.block_start(i, VarKind::TradeBuy, j);
            const int ops_ji = index.block_start(j, VarKind::TradeSell, i);
            for (int t = 0; t < T; ++t) {
                const std::string pair = std::to_string(i) + "->" + std::to_string(j) +
                                         ",t=" + std::to_string(t);
                add(ConstraintFamily::TradeNonneg, i, "ps," + pair, false, -x[ops + t]);
                add(ConstraintFamily::TradeNonneg, i, "pb," + pair, false, -x[opb + t]);
                add(ConstraintFamily::TradeReciprocity, i, pair, true,
                    x[opb + t] - x[ops_ji + t]);
            }
        }
        {
            const int oo = index.block_start(i, VarKind::NetOutput);
            const int os = index.block_start(i, VarKind::GridSell);
            const int ob = index.block_start(i, VarKind::GridBuy);
            for (int t = 0; t < T; ++t) {
                add(ConstraintFamily::BalanceDevices, i, "t=" + std::to_string(t), true,
                    x[oo + t] - net_output(sc, index, x, i, t));
                double traded = x[os + t] - x[ob + t];
                for (int j = 0; j < np; ++j) {
                    if (j == i) continue;
                    traded += x[index.block_start(i, VarKind::TradeSell, j) + t] -
                              x[index.block_start(i, VarKind::TradeBuy, j) + t];
                }
                add(ConstraintFamily::BalanceTrades, i, "t=" + std::to_string(t), true,
                    x[oo + t] - traded);
            }
        }
    }
    for (const auto& line : sc.topology.lines) {
        for (int t = 0; t < T; ++t) {
            double flow = 0.0;
            for (int j : line.members)
                flow += x[index.block_start(j, VarKind::NetOutput) + t];
            const std::string at = "line" + std::to_string(line.id) + ",t=" + std::to_string(t);
            add(ConstraintFamily::LineFlow, -1, at + ",hi", false, flow - line.c_max);
            add(ConstraintFamily::LineFlow, -1, at + ",lo", false, line.c_min - flow);
        }
    }
    return rep;
}

}  // namespace p2pflow
