#pragma once

// Scenario builders and small numeric oracles shared by the test suites.

#include <random>
#include <vector>

#include "p2pflow/decision_index.hpp"
#include "p2pflow/objective.hpp"
#include "p2pflow/scenario.hpp"

namespace testsup {

using namespace p2pflow;

inline FlexibleLoadSpec table1_flex_load(int T, double dt) {
    FlexibleLoadSpec fl;
    fl.p_min.assign(T, 0.0);
    fl.p_max.assign(T, 10.0);
    fl.energy_ref = 40.0;
    fl.ref_profile.assign(T, 40.0 / (T * dt));
    fl.beta1 = 0.01;
    fl.beta2 = 0.01;
    return fl;
}

inline StorageSpec table1_storage() {
    StorageSpec es;
    es.p_charge_max = 10.0;
    es.p_discharge_max = 10.0;
    es.eta_c = 0.95;
    es.eta_d = 0.95;
    es.soc_min = 0.15;
    es.soc_max = 0.85;
    es.w0 = 25.0;
    es.w_nominal = 50.0;
    es.w_day_min = -5.0;
    es.w_day_max = 5.0;
    es.lambda_ess = 0.1;
    return es;
}

inline DieselSpec table1_diesel(int T) {
    DieselSpec de;
    de.p_min.assign(T, 0.0);
    de.p_max.assign(T, 10.0);
    de.ramp_min.assign(T, -2.0);
    de.ramp_max.assign(T, 2.0);
    de.p_initial = 0.0;
    de.lambda1 = 0.0;
    de.lambda2 = 0.2214;
    return de;
}

/// Minimal valid community: `np` prosumers, each with one flexible load
/// and one storage; no diesel, no lines.
inline CommunityScenario small_scenario(int np, int T = 12, double dt = 2.0) {
    CommunityScenario sc;
    sc.name = "test";
    sc.time = TimeGrid{T * dt, dt};
    sc.tariffs = Tariffs{0.1, 0.23, 0.1, 0.23, 0.01, 0.001};
    for (int i = 0; i < np; ++i) {
        ProsumerSpec p;
        p.id = i + 1;
        p.inflexible_load.assign(T, 3.0);
        p.nondispatchable_gen.assign(T, i % 2 ? 5.0 : 0.0);
        p.flexible_loads.push_back(table1_flex_load(T, dt));
        p.storages.push_back(table1_storage());
        sc.prosumers.push_back(std::move(p));
    }
    sc.topology.distance.assign(np, std::vector<double>(np, 1.0));
    for (int i = 0; i < np; ++i) sc.topology.distance[i][i] = 0.0;
    validate(sc);
    return sc;
}

/// Random radial line family: a random tree over the prosumers, one line
/// per edge whose member set is the subtree below it.
inline Topology random_radial_topology(std::mt19937& rng, int np) {
    Topology topo;
    std::vector<int> parent(np, -1);
    for (int k = 1; k < np; ++k)
        parent[k] = std::uniform_int_distribution<int>(0, k - 1)(rng);
    std::vector<std::vector<int>> children(np);
    for (int k = 1; k < np; ++k) children[parent[k]].push_back(k);
    // subtree membership per node
    std::vector<std::vector<int>> subtree(np);
    for (int k = np - 1; k >= 0; --k) {
        subtree[k].push_back(k);
        for (int c : children[k])
            subtree[k].insert(subtree[k].end(), subtree[c].begin(), subtree[c].end());
        std::sort(subtree[k].begin(), subtree[k].end());
    }
    int lid = 1;
    for (int k = 1; k < np; ++k)
        topo.lines.push_back(LineSpec{lid++, -100.0, 100.0, subtree[k]});
    if (np >= 1) topo.lines.push_back(LineSpec{lid++, -100.0, 100.0, subtree[0]});
    // hop distances on the tree
    auto depth_path = [&](int a) {
        std::vector<int> path{a};
        while (parent[path.back()] >= 0) path.push_back(parent[path.back()]);
        return path;
    };
    topo.distance.assign(np, std::vector<double>(np, 0.0));
    for (int a = 0; a < np; ++a)
        for (int b = a + 1; b < np; ++b) {
            auto pa = depth_path(a), pb = depth_path(b);
            int hops = 0;
            bool done = false;
            for (size_t x = 0; x < pa.size() && !done; ++x)
                for (size_t y = 0; y < pb.size(); ++y)
                    if (pa[x] == pb[y]) {
                        hops = static_cast<int>(x + y);
                        done = true;
                        break;
                    }
            topo.distance[a][b] = topo.distance[b][a] = hops;
        }
    return topo;
}

/// Random valid scenario for counting and robustness checks.
inline CommunityScenario random_scenario(std::mt19937& rng, int max_np = 5, int max_T = 6) {
    std::uniform_int_distribution<int> np_d(1, max_np), T_d(2, max_T), dev_d(0, 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int np = np_d(rng);
    const int T = T_d(rng);
    const double dt = 1.0 + u(rng);
    CommunityScenario sc;
    sc.name = "random";
    sc.time = TimeGrid{T * dt, dt};
    sc.tariffs = Tariffs{0.1, 0.2 + 0.1 * u(rng), 0.1, 0.3, 0.01 * u(rng), 0.001};
    for (int i = 0; i < np; ++i) {
        ProsumerSpec p;
        p.id = i + 1;
        p.inflexible_load.assign(T, 2.0 * u(rng));
        p.nondispatchable_gen.assign(T, 3.0 * u(rng));
        const int nfl = dev_d(rng), nes = dev_d(rng), nde = dev_d(rng);
        for (int m = 0; m < nfl; ++m) {
            FlexibleLoadSpec fl;
            fl.p_min.assign(T, 0.0);
            fl.p_max.assign(T, 5.0 + 5.0 * u(rng));
            fl.energy_ref = 0.5 * fl.p_max[0] * T * dt * u(rng);
            fl.ref_profile.assign(T, u(rng));
            fl.beta1 = 0.01 * u(rng);
            fl.beta2 = 0.005 + 0.01 * u(rng);
            p.flexible_loads.push_back(std::move(fl));
        }
        for (int q = 0; q < nes; ++q) {
            StorageSpec es = table1_storage();
            es.p_charge_max = 5.0 + 5.0 * u(rng);
            es.w0 = 20.0 + 10.0 * u(rng);
            p.storages.push_back(es);
        }
        for (int d = 0; d < nde; ++d) {
            DieselSpec de = table1_diesel(T);
            de.lambda1 = 0.01 * u(rng);
            p.diesels.push_back(std::move(de));
        }
        sc.prosumers.push_back(std::move(p));
    }
    sc.topology = random_radial_topology(rng, np);
    validate(sc);
    return sc;
}

/// An exactly feasible point of the stage-1 set: no trades, idle
/// storage, flexible loads flat at their minimum-energy profile, net
/// output absorbed by the grid. The balance identities hold bitwise by
/// construction.
inline Eigen::VectorXd construct_feasible_point(const CommunityScenario& sc,
                                                const DecisionIndex& index) {
    const int T = index.num_steps();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(index.total_len());
    for (int i = 0; i < sc.num_prosumers(); ++i) {
        const auto& p = sc.prosumers[i];
        for (size_t m = 0; m < p.flexible_loads.size(); ++m) {
            const auto& fl = p.flexible_loads[m];
            const int o = index.block_start(i, VarKind::FlexLoad, static_cast<int>(m));
            const double flat = fl.energy_ref / (T * sc.time.step_hours);
            for (int t = 0; t < T; ++t) {
                double v = std::min(std::max(flat, fl.p_min[t]), fl.p_max[t]);
                x[o + t] = v;
            }
        }
        for (size_t d = 0; d < p.diesels.size(); ++d) {
            const auto& de = p.diesels[d];
            const int o = index.block_start(i, VarKind::Diesel, static_cast<int>(d));
            for (int t = 0; t < T; ++t) x[o + t] = de.p_min[t];
        }
        const int oo = index.block_start(i, VarKind::NetOutput);
        const int os = index.block_start(i, VarKind::GridSell);
        const int ob = index.block_start(i, VarKind::GridBuy);
        for (int t = 0; t < T; ++t) {
            const double out = net_output(sc, index, x, i, t);
            x[oo + t] = out;
            x[os + t] = std::max(out, 0.0);
            x[ob + t] = std::max(-out, 0.0);
        }
    }
    return x;
}

/// Independent descriptor count: walks the canonical layout the same way
/// a human would read it off, without touching DecisionIndex.
inline long brute_force_variable_count(const CommunityScenario& sc) {
    long count = 0;
    const int T = sc.time.num_steps();
    const int np = sc.num_prosumers();
    for (const auto& p : sc.prosumers) {
        for (size_t m = 0; m < p.flexible_loads.size(); ++m) count += T;
        for (size_t q = 0; q < p.storages.size(); ++q) count += 2 * T;
        for (size_t d = 0; d < p.diesels.size(); ++d) count += T;
        count += T;             // grid sell
        count += T;             // grid buy
        count += (np - 1) * T;  // trade sell
        count += (np - 1) * T;  // trade buy
        count += T;             // net output
    }
    return count;
}

}  // namespace testsup
