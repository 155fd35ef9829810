#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "p2pflow/consensus.hpp"
#include "p2pflow/oracle.hpp"
#include "p2pflow/scenario_io.hpp"
#include "p2pflow/solver.hpp"
#include "support/replay.hpp"
#include "support/scenarios.hpp"

using namespace p2pflow;
using Catch::Approx;

TEST_CASE("averaged projections on two half lines") {
    auto prob = testsup::half_line_problem(1.0, 2.0);
    SolverConfig cfg;
    cfg.learning_rate_l = 1.0;
    cfg.n_inner = 1;
    cfg.n_outer = 1;
    ConsensusRunner runner(prob, cfg);

    runner.inner_round(0, 0);
    REQUIRE(runner.assemble()[0] == Approx(1.5));
    runner.inner_round(0, 1);
    REQUIRE(runner.assemble()[0] == Approx(1.75));
    for (int d = 2; d < 60; ++d) runner.inner_round(0, d);
    REQUIRE(runner.assemble()[0] == Approx(2.0).margin(1e-9));
}

TEST_CASE("neighbor tables") {
    SECTION("a trade variable couples exactly its endpoints") {
        auto sc = testsup::small_scenario(3);
        DecisionIndex index(sc);
        auto nc = neighbor_sets(sc, index);
        const int r = index.locate({VarKind::TradeBuy, 0, 1, 0});
        REQUIRE(nc[r] == std::vector<int>{0, 1});
    }
    SECTION("an isolated prosumer's net output couples only itself") {
        auto sc = testsup::small_scenario(2);
        sc.topology.lines = {LineSpec{1, -50, 50, {0}}, LineSpec{2, -50, 50, {1}}};
        DecisionIndex index(sc);
        auto nc = neighbor_sets(sc, index);
        REQUIRE(nc[index.locate({VarKind::NetOutput, 0, -1, 0})] == std::vector<int>{0});
        REQUIRE(nc[index.locate({VarKind::NetOutput, 1, -1, 0})] == std::vector<int>{1});
    }
    SECTION("neighbor symmetry holds on random radial trees") {
        std::mt19937 rng(41);
        for (int trial = 0; trial < 50; ++trial) {
            const int np = std::uniform_int_distribution<int>(2, 7)(rng);
            auto sc = testsup::small_scenario(np, 4, 2.0);
            sc.topology = testsup::random_radial_topology(rng, np);
            validate(sc);
            DecisionIndex index(sc);
            auto nc = neighbor_sets(sc, index);
            // every coupled pair (r, rbar) shares one neighbor set
            for (int i = 0; i < np; ++i)
                for (int j = 0; j < np; ++j) {
                    if (i == j) continue;
                    for (int t = 0; t < 4; ++t) {
                        const int r = index.locate({VarKind::TradeSell, i, j, t});
                        const int rbar = index.locate({VarKind::TradeBuy, j, i, t});
                        REQUIRE(nc[r] == nc[rbar]);
                    }
                }
            for (const auto& line : sc.topology.lines)
                for (int a : line.members)
                    for (int b : line.members) {
                        const int r = index.locate({VarKind::NetOutput, a, -1, 0});
                        const int rbar = index.locate({VarKind::NetOutput, b, -1, 0});
                        REQUIRE(nc[r] == nc[rbar]);
                    }
        }
    }
    SECTION("a non-nested line family is rejected with the line pair named") {
        auto sc = testsup::small_scenario(3);
        sc.topology.lines = {LineSpec{7, -50, 50, {0, 1}}, LineSpec{8, -50, 50, {1, 2}}};
        DecisionIndex index(sc);
        REQUIRE_THROWS_AS(validate(sc), ScenarioError);
    }
}

TEST_CASE("gradient round matches the central step and keeps the protocol oblivious") {
    auto file = bundled_ieee13();
    const auto& sc = file.scenario;
    DecisionIndex index(sc);
    auto prob = build_stage1_problem(sc, index);
    SolverConfig cfg;
    cfg.learning_rate_l = 0.01;
    std::mt19937 rng(13);
    std::normal_distribution<double> g(0.0, 2.0);

    for (int trial = 0; trial < 5; ++trial) {
        Eigen::VectorXd x0(prob.dimension);
        for (int r = 0; r < prob.dimension; ++r) x0[r] = g(rng);
        cfg.initial = x0;
        ConsensusRunner runner(prob, cfg);
        const long long before = runner.bus().total_messages();
        runner.gradient_round(0);
        Eigen::VectorXd got = runner.assemble();
        for (int r = 0; r < prob.dimension; ++r) {
            const double want = gradient_step_value(x0[r], prob.objective.quad[r],
                                                    prob.objective.lin[r], 0.01);
            REQUIRE(got[r] == want);
        }
        REQUIRE(runner.bus().total_messages() - before == 30);  // every ordered pair
    }

    SECTION("zero-gradient coordinates still travel") {
        cfg.initial = Eigen::VectorXd::Zero(prob.dimension);
        ConsensusRunner runner(prob, cfg);
        long long count = 0;
        runner.bus().log_sink = [&](const Message& m) { count += 1; };
        runner.gradient_round(0);
        REQUIRE(count == 30);
    }
}

TEST_CASE("decentralized rounds equal the centralized replay bitwise") {
    SECTION("bundled community, random states") {
        auto file = bundled_ieee13();
        const auto& sc = file.scenario;
        DecisionIndex index(sc);
        auto prob = build_stage1_problem(sc, index);
        std::mt19937 rng(902);
        std::normal_distribution<double> g(0.0, 3.0);
        Eigen::VectorXd x0(prob.dimension);
        for (int r = 0; r < prob.dimension; ++r) x0[r] = g(rng);

        SolverConfig cfg;
        cfg.learning_rate_l = 0.01;
        cfg.n_inner = 5;
        cfg.n_outer = 3;
        cfg.initial = x0;

        testsup::CentralReplay replay(prob, cfg.projection_tol, x0);
        int mismatches = 0;
        auto observer = [&](int k, int d, const Eigen::VectorXd& assembled) {
            if (d < 0)
                replay.gradient_round(cfg.learning_rate_l);
            else
                replay.inner_round();
            if (assembled != replay.state()) ++mismatches;
        };
        run_consensus(prob, cfg, nullptr, observer);
        REQUIRE(mismatches == 0);
    }
    SECTION("toy problem") {
        auto prob = testsup::half_line_problem(-1.0, 3.0);
        SolverConfig cfg;
        cfg.n_inner = 4;
        cfg.n_outer = 2;
        cfg.learning_rate_l = 1.0;
        testsup::CentralReplay replay(prob, cfg.projection_tol,
                                      Eigen::VectorXd::Zero(1));
        int mismatches = 0;
        run_consensus(prob, cfg, nullptr, [&](int, int d, const Eigen::VectorXd& got) {
            if (d < 0)
                replay.gradient_round(cfg.learning_rate_l);
            else
                replay.inner_round();
            if (got != replay.state()) ++mismatches;
        });
        REQUIRE(mismatches == 0);
    }
}

TEST_CASE("message locality") {
    auto sc = testsup::small_scenario(3);
    sc.topology.lines = {LineSpec{1, -50, 50, {0}}, LineSpec{2, -50, 50, {1}},
                         LineSpec{3, -50, 50, {2}}};
    validate(sc);
    DecisionIndex index(sc);
    auto prob = build_stage1_problem(sc, index);
    SolverConfig cfg;
    cfg.learning_rate_l = 0.01;
    cfg.n_inner = 3;
    cfg.n_outer = 2;

    std::vector<Message> log;
    ConsensusRunner runner(prob, cfg);
    runner.bus().log_sink = [&](const Message& m) { log.push_back(m); };
    for (int k = 0; k < cfg.n_outer; ++k) {
        runner.gradient_round(k);
        for (int d = 0; d < cfg.n_inner; ++d) runner.inner_round(k, d);
    }
    REQUIRE_FALSE(log.empty());
    for (const auto& m : log) {
        REQUIRE(!m.payload.empty());
        for (const auto& [off, value] : m.payload) {
            const auto& nc = prob.neighbor_sets[off];
            REQUIRE(std::binary_search(nc.begin(), nc.end(), m.to));
            // isolated net outputs never travel
            REQUIRE(index.describe(off).kind != VarKind::NetOutput);
        }
    }
    // per inner round, the message count is bounded by the neighbor degrees
    long long per_round_cap = 0;
    for (int i = 0; i < prob.num_agents; ++i) {
        std::set<int> nb;
        for (int r = 0; r < prob.dimension; ++r)
            if (prob.owner[r] == i && prob.coupled[r])
                for (int j : prob.neighbor_sets[r])
                    if (j != i) nb.insert(j);
        per_round_cap += static_cast<long long>(nb.size());
    }
    long long inner_msgs = 0;
    for (const auto& m : log)
        if (m.phase == RoundPhase::PostProjection && m.outer_k == 0 && m.inner_d == 0)
            ++inner_msgs;
    REQUIRE(inner_msgs <= per_round_cap);
}

TEST_CASE("full runs") {
    SECTION("single prosumer run approaches its oracle optimum") {
        auto sc = testsup::small_scenario(1);
        DecisionIndex index(sc);
        auto prob = build_stage1_problem(sc, index);
        SolverConfig cfg;
        cfg.learning_rate_l = default_learning_rate(sc);
        cfg.n_inner = 40;
        cfg.n_outer = 300;
        auto res = run_consensus(prob, cfg);
        auto ref = oracle::solve_centralized(sc, index);
        REQUIRE(ref.status == oracle::OracleStatus::Optimal);
        const double gap =
            std::abs(res.trace.outer.back().objective - ref.objective) /
            std::max(1.0, std::abs(ref.objective));
        REQUIRE(gap <= 1e-3);
    }
    SECTION("a feasible optimum is a fixed point when projections are exact") {
        // with one agent the inner loop reaches the exact projection in a
        // single round, so starting at the optimum must stay there
        auto sc = testsup::small_scenario(1);
        DecisionIndex index(sc);
        auto prob = build_stage1_problem(sc, index);
        auto ref = oracle::solve_centralized(sc, index);
        REQUIRE(ref.status == oracle::OracleStatus::Optimal);
        SolverConfig cfg;
        cfg.learning_rate_l = default_learning_rate(sc);
        cfg.n_inner = 2;
        cfg.n_outer = 5;
        cfg.initial = ref.x_star;
        auto res = run_consensus(prob, cfg, &ref.x_star);
        REQUIRE((res.solution - ref.x_star).lpNorm<Eigen::Infinity>() <=
                10 * cfg.projection_tol + 1e-7);
    }
    SECTION("divergence is detected") {
        auto sc = testsup::small_scenario(2);
        DecisionIndex index(sc);
        auto prob = build_stage1_problem(sc, index);
        SolverConfig cfg;
        cfg.learning_rate_l = 1e-9;  // absurd step length
        cfg.n_inner = 1;
        cfg.n_outer = 50;
        cfg.divergence_limit = 1e6;
        REQUIRE_THROWS_AS(run_consensus(prob, cfg), SolverError);
    }
    SECTION("worker count changes nothing") {
        auto sc = testsup::small_scenario(3);
        DecisionIndex index(sc);
        auto prob = build_stage1_problem(sc, index);
        SolverConfig cfg;
        cfg.learning_rate_l = default_learning_rate(sc);
        cfg.n_inner = 10;
        cfg.n_outer = 5;
        auto res1 = run_consensus(prob, cfg);
        cfg.workers = 4;
        auto res4 = run_consensus(prob, cfg);
        REQUIRE(res1.solution == res4.solution);
    }
}

TEST_CASE("inner-rate estimation") {
    SECTION("synthetic geometric sequence recovers its rate") {
        std::vector<double> res;
        for (int d = 0; d < 40; ++d) res.push_back(std::pow(0.8, d / 2.0));
        auto est = estimate_eta(res);
        REQUIRE(est.eta == Approx(0.8).margin(1e-6));
    }
    SECTION("half-line toy contracts at its exact geometric factor") {
        auto prob = testsup::half_line_problem(1.0, 2.0);
        SolverConfig cfg;
        cfg.learning_rate_l = 1.0;
        ConsensusRunner runner(prob, cfg);
        std::vector<double> residuals;
        double prev = 0.0;
        for (int d = 0; d < 30; ++d) {
            runner.inner_round(0, d);
            const double cur = runner.assemble()[0];
            if (d > 0) residuals.push_back(std::abs(cur - prev));
            prev = cur;
        }
        auto est = estimate_eta(residuals);
        // each round halves the distance, so the fitted eta is 1/4
        REQUIRE(est.eta == Approx(0.25).margin(1e-6));
    }
    SECTION("too-short sequences are refused") {
        std::vector<double> res{1.0, 0.5, 1e-20, 1e-20, 1e-20, 1e-20};
        REQUIRE_THROWS_AS(estimate_eta(res), SolverError);
    }
}

TEST_CASE("iteration bound") {
    SECTION("unit example") {
        auto b = iteration_bound(1.0, 1.0, 1.0, 0.5);
        REQUIRE(b.k_bar == Approx(2.0));
    }
    SECTION("large epsilon floors the outer count at one") {
        auto b = iteration_bound(1.0, 1.0, 1e9, 0.5);
        REQUIRE(b.k_bar == Approx(1.0));
    }
    SECTION("monotone in epsilon and the initial radius") {
        double prev = std::numeric_limits<double>::infinity();
        for (double eps : {0.01, 0.1, 1.0, 10.0}) {
            auto b = iteration_bound(1.0, 1.0, eps, 0.7);
            REQUIRE(b.n_max <= prev + 1e-12);
            prev = b.n_max;
        }
        prev = 0.0;
        for (double r0 : {0.5, 1.0, 2.0, 4.0}) {
            auto b = iteration_bound(1.0, r0, 1.0, 0.7);
            REQUIRE(b.n_max >= prev - 1e-12);
            prev = b.n_max;
        }
    }
    SECTION("domain errors") {
        REQUIRE_THROWS_AS(iteration_bound(1.0, 1.0, 1.0, 0.3), SolverError);
        REQUIRE_THROWS_AS(iteration_bound(1.0, 1.0, 1.0, 1.0), SolverError);
        REQUIRE_THROWS_AS(iteration_bound(-1.0, 1.0, 1.0, 0.5), SolverError);
    }
}

TEST_CASE("learning-rate rule") {
    auto file = bundled_ieee13();
    SECTION("reproduce-paper mode recovers the published step") {
        const double L = default_learning_rate(file.scenario, true);
        REQUIRE(L == Approx(0.01));
        REQUIRE(1.0 / L == Approx(100.0));
    }
    SECTION("safety mode doubles twice") {
        REQUIRE(default_learning_rate(file.scenario) == Approx(0.04));
    }
    SECTION("largest coefficient wins") {
        auto sc = file.scenario;
        sc.prosumers[4].diesels[0].lambda1 = 0.03;
        REQUIRE(default_learning_rate(sc, true) == Approx(0.03));
    }
    SECTION("purely linear objective falls back to one") {
        auto sc = testsup::small_scenario(1);
        sc.prosumers[0].flexible_loads[0].beta2 = 0.0;
        REQUIRE(default_learning_rate(sc) == Approx(1.0));
    }
}

TEST_CASE("Fejer monotonicity toward a feasible point") {
    auto file = bundled_ieee13();
    const auto& sc = file.scenario;
    DecisionIndex index(sc);
    auto prob = build_stage1_problem(sc, index);
    Eigen::VectorXd z = testsup::construct_feasible_point(sc, index);
    REQUIRE(constraint_residuals(sc, index, z).max_violation() <= 1e-9);

    SolverConfig cfg;
    cfg.learning_rate_l = 0.01;
    std::mt19937 rng(7);
    std::normal_distribution<double> g(0.0, 4.0);
    Eigen::VectorXd x0(prob.dimension);
    for (int r = 0; r < prob.dimension; ++r) x0[r] = g(rng);
    cfg.initial = x0;
    ConsensusRunner runner(prob, cfg);
    double prev = (runner.assemble() - z).norm();
    for (int d = 0; d < 25; ++d) {
        runner.inner_round(0, d);
        const double cur = (runner.assemble() - z).norm();
        REQUIRE(cur <= prev + 1e-10);
        prev = cur;
    }
}
