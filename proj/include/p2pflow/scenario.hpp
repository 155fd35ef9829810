#pragma once

// Static description of a P2P energy community: prosumers with their
// devices, tariffs, network topology and the scheduling time grid.
// All powers are kW, energies kWh, prices $/kWh. Series are indexed by
// time step (step length TimeGrid::step_hours).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace p2pflow {

class ScenarioError : public std::runtime_error {
public:
    explicit ScenarioError(const std::string& what) : std::runtime_error(what) {}
};

struct TimeGrid {
    double horizon_hours = 24.0;
    double step_hours = 1.0;

    int num_steps() const {
        return static_cast<int>(std::lround(horizon_hours / step_hours));
    }
};

/// One flexible load: a box-constrained consumption schedule with a
/// daily minimum-energy requirement and a preferred reference profile.
struct FlexibleLoadSpec {
    std::vector<double> p_min;        // kW, per step
    std::vector<double> p_max;        // kW, per step
    double energy_ref = 0.0;          // kWh, minimum daily consumption
    std::vector<double> ref_profile;  // kW, per step
    double beta1 = 0.0;               // $/kWh
    double beta2 = 0.0;               // $/kW^2, deviation penalty
};

/// One energy storage system. SOC bounds apply to the running stored
/// energy; the day window bounds the net charged energy over the horizon.
struct StorageSpec {
    double p_charge_max = 0.0;     // kW
    double p_discharge_max = 0.0;  // kW
    double eta_c = 1.0;
    double eta_d = 1.0;
    double soc_min = 0.0;
    double soc_max = 1.0;
    double w0 = 0.0;         // kWh, initial stored energy
    double w_nominal = 0.0;  // kWh
    double w_day_min = 0.0;  // kWh, net charge over the day
    double w_day_max = 0.0;  // kWh
    double lambda_ess = 0.0; // $/kWh operation fee
};

struct DieselSpec {
    std::vector<double> p_min;     // kW, per step
    std::vector<double> p_max;     // kW, per step
    std::vector<double> ramp_min;  // kW/h, per step (nonpositive)
    std::vector<double> ramp_max;  // kW/h, per step (nonnegative)
    double p_initial = 0.0;        // kW, output before the first step
    double lambda1 = 0.0;          // $/kW^2
    double lambda2 = 0.0;          // $/kW
};

struct ProsumerSpec {
    int id = 0;
    std::vector<FlexibleLoadSpec> flexible_loads;
    std::vector<StorageSpec> storages;
    std::vector<DieselSpec> diesels;
    std::vector<double> inflexible_load;     // kW, per step
    std::vector<double> nondispatchable_gen; // kW, per step
};

struct Tariffs {
    double lambda_gs = 0.0;   // grid sell price
    double lambda_gb = 0.0;   // grid buy price
    double lambda_min = 0.0;  // P2P price floor
    double lambda_max = 0.0;  // P2P price cap
    double lambda_o = 0.0;    // system operation fee, $/kWh traded
    double lambda_d = 0.0;    // distance fee, $/kWh per hop
};

struct LineSpec {
    int id = 0;
    double c_min = 0.0;  // kW
    double c_max = 0.0;  // kW
    std::vector<int> members;  // prosumer indices (0-based) with Y_l = 1
};

struct Topology {
    std::vector<LineSpec> lines;
    // distance[i][j]: hops between prosumers i and j; symmetric, zero diagonal
    std::vector<std::vector<double>> distance;
};

struct CommunityScenario {
    std::string name;
    TimeGrid time;
    std::vector<ProsumerSpec> prosumers;
    Tariffs tariffs;
    Topology topology;
    // Fixed symmetric trade price used inside the stage-1 objective. The
    // buyer and seller terms cancel pairwise on the feasible set, so any
    // symmetric value leaves the constrained minimizer unchanged.
    double stage1_trade_price = 0.0;

    int num_prosumers() const { return static_cast<int>(prosumers.size()); }
    int num_steps() const { return time.num_steps(); }
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ScenarioError(msg);
}

inline void check_series(const std::vector<double>& s, int n, const std::string& field) {
    require(static_cast<int>(s.size()) == n,
            field + ": expected " + std::to_string(n) + " entries, got " +
                std::to_string(s.size()));
}

}  // namespace detail

/// Validates every structural invariant of a scenario. Throws
/// ScenarioError with a field-precise message on the first violation.
inline void validate(const CommunityScenario& sc) {
    using detail::check_series;
    using detail::require;

    require(sc.time.step_hours > 0, "time.step_hours must be positive");
    require(sc.time.horizon_hours > 0, "time.horizon_hours must be positive");
    const double ratio = sc.time.horizon_hours / sc.time.step_hours;
    require(std::abs(ratio - std::lround(ratio)) < 1e-9,
            "time.horizon_hours must be an exact multiple of step_hours");
    const int T = sc.time.num_steps();
    require(T >= 1, "time grid must have at least one step");
    require(!sc.prosumers.empty(), "scenario needs at least one prosumer");

    const double dt = sc.time.step_hours;
    const int np = sc.num_prosumers();
    for (int i = 0; i < np; ++i) {
        const auto& p = sc.prosumers[i];
        const std::string tag = "prosumers[" + std::to_string(i) + "]";
        check_series(p.inflexible_load, T, tag + ".inflexible_load");
        check_series(p.nondispatchable_gen, T, tag + ".nondispatchable_gen");
        for (double v : p.inflexible_load)
            require(v >= 0, tag + ".inflexible_load must be nonnegative");
        for (double v : p.nondispatchable_gen)
            require(v >= 0, tag + ".nondispatchable_gen must be nonnegative");

        for (size_t m = 0; m < p.flexible_loads.size(); ++m) {
            const auto& fl = p.flexible_loads[m];
            const std::string ftag = tag + ".flexible_loads[" + std::to_string(m) + "]";
            check_series(fl.p_min, T, ftag + ".p_min");
            check_series(fl.p_max, T, ftag + ".p_max");
            check_series(fl.ref_profile, T, ftag + ".ref_profile");
            double cap = 0.0;
            for (int t = 0; t < T; ++t) {
                require(fl.p_min[t] >= 0, ftag + ".p_min must be nonnegative");
                require(fl.p_min[t] <= fl.p_max[t], ftag + ": p_min > p_max at step " + std::to_string(t));
                cap += fl.p_max[t] * dt;
            }
            require(fl.beta2 >= 0, ftag + ".beta2 must be nonnegative");
            require(fl.energy_ref <= cap + 1e-9,
                    ftag + ": energy_ref " + std::to_string(fl.energy_ref) +
                        " kWh exceeds reachable energy " + std::to_string(cap) + " kWh");
        }

        for (size_t q = 0; q < p.storages.size(); ++q) {
            const auto& es = p.storages[q];
            const std::string stag = tag + ".storages[" + std::to_string(q) + "]";
            require(es.eta_c > 0 && es.eta_c <= 1, stag + ".eta_c must be in (0,1]");
            require(es.eta_d > 0 && es.eta_d <= 1, stag + ".eta_d must be in (0,1]");
            require(es.p_charge_max >= 0, stag + ".p_charge_max must be nonnegative");
            require(es.p_discharge_max >= 0, stag + ".p_discharge_max must be nonnegative");
            require(es.soc_min >= 0 && es.soc_min < es.soc_max && es.soc_max <= 1,
                    stag + ": need 0 <= soc_min < soc_max <= 1");
            require(es.w_nominal > 0, stag + ".w_nominal must be positive");
            const double soc0 = es.w0 / es.w_nominal;
            require(soc0 >= es.soc_min - 1e-9 && soc0 <= es.soc_max + 1e-9,
                    stag + ": initial SOC outside [soc_min, soc_max]");
            require(es.w_day_min <= es.w_day_max, stag + ": w_day_min > w_day_max");
        }

        for (size_t d = 0; d < p.diesels.size(); ++d) {
            const auto& de = p.diesels[d];
            const std::string dtag = tag + ".diesels[" + std::to_string(d) + "]";
            check_series(de.p_min, T, dtag + ".p_min");
            check_series(de.p_max, T, dtag + ".p_max");
            check_series(de.ramp_min, T, dtag + ".ramp_min");
            check_series(de.ramp_max, T, dtag + ".ramp_max");
            require(de.lambda1 >= 0, dtag + ".lambda1 must be nonnegative");
            for (int t = 0; t < T; ++t) {
                require(de.p_min[t] <= de.p_max[t], dtag + ": p_min > p_max at step " + std::to_string(t));
                require(de.ramp_min[t] <= 0 && 0 <= de.ramp_max[t],
                        dtag + ": ramp window must contain zero at step " + std::to_string(t));
            }
        }
    }

    require(sc.tariffs.lambda_gs <= sc.tariffs.lambda_gb,
            "tariffs: lambda_gs > lambda_gb would allow grid arbitrage");
    require(sc.tariffs.lambda_min <= sc.tariffs.lambda_max,
            "tariffs: lambda_min > lambda_max");

    const auto& topo = sc.topology;
    require(static_cast<int>(topo.distance.size()) == np,
            "topology.distance must be a square matrix of prosumer count");
    for (int i = 0; i < np; ++i) {
        require(static_cast<int>(topo.distance[i].size()) == np,
                "topology.distance row " + std::to_string(i) + " has wrong length");
        require(topo.distance[i][i] == 0.0,
                "topology.distance diagonal must be zero");
        for (int j = 0; j < np; ++j)
            require(topo.distance[i][j] == topo.distance[j][i],
                    "topology.distance must be symmetric");
    }
    for (const auto& line : topo.lines) {
        require(line.c_min <= line.c_max,
                "line " + std::to_string(line.id) + ": c_min > c_max");
        for (int m : line.members)
            require(m >= 0 && m < np,
                    "line " + std::to_string(line.id) + ": member out of range");
    }
    // Radial premise: member sets of any two lines are nested or disjoint.
    for (size_t a = 0; a < topo.lines.size(); ++a) {
        for (size_t b = a + 1; b < topo.lines.size(); ++b) {
            const auto& A = topo.lines[a].members;
            const auto& B = topo.lines[b].members;
            int common = 0;
            for (int x : A)
                for (int y : B)
                    if (x == y) ++common;
            const bool nested = common == 0 ||
                                common == static_cast<int>(A.size()) ||
                                common == static_cast<int>(B.size());
            require(nested, "topology is not radial: lines " +
                                std::to_string(topo.lines[a].id) + " and " +
                                std::to_string(topo.lines[b].id) +
                                " overlap without nesting");
        }
    }
}

}  // namespace p2pflow
