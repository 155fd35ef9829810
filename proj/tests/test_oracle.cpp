#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "p2pflow/oracle.hpp"
#include "p2pflow/scenario_io.hpp"
#include "support/kkt_oracle.hpp"
#include "support/scenarios.hpp"

using namespace p2pflow;
using namespace p2pflow::oracle;
using Catch::Approx;

namespace {

LinearRow ineq(std::vector<std::pair<int, double>> terms, double rhs, std::string label = "") {
    return LinearRow{false, std::move(terms), rhs, ConstraintFamily::FlBox, std::move(label)};
}

LinearRow eq(std::vector<std::pair<int, double>> terms, double rhs, std::string label = "") {
    return LinearRow{true, std::move(terms), rhs, ConstraintFamily::TradeReciprocity,
                     std::move(label)};
}

QpProblem toy_box_qp() {
    // min (x-3)^2 on [0, 2]
    QpProblem qp;
    qp.dimension = 1;
    qp.quad = Eigen::VectorXd::Constant(1, 1.0);
    qp.lin = Eigen::VectorXd::Constant(1, -6.0);
    qp.constant = 9.0;
    qp.ineq_rows = {ineq({{0, 1.0}}, 2.0, "hi"), ineq({{0, -1.0}}, 0.0, "lo")};
    return qp;
}

}  // namespace

TEST_CASE("interior point solves the toy box problem") {
    auto sol = solve_qp(toy_box_qp());
    REQUIRE(sol.status == OracleStatus::Optimal);
    REQUIRE(sol.x_star[0] == Approx(2.0).margin(1e-7));
    REQUIRE(sol.objective == Approx(1.0).margin(1e-6));
}

TEST_CASE("interior point agrees with the combinatorial oracle on random QPs") {
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
        // random strictly convex diagonal QP over a random micro polyhedron
        auto poly = testsup::random_micro_polyhedron(rng, 6, 6);
        const int n = poly.dim();
        Eigen::VectorXd quad(n), lin(n);
        for (int k = 0; k < n; ++k) {
            quad[k] = 0.5 + std::abs(u(rng));
            lin[k] = 2.0 * u(rng);
        }
        QpProblem qp;
        qp.dimension = n;
        qp.quad = quad;
        qp.lin = lin;
        for (size_t j = 0; j < poly.rows.size(); ++j) {
            LinearRow r = poly.rows[j];
            r.terms = poly.local_terms[j];  // express rows in 0..dim-1
            (r.equality ? qp.eq_rows : qp.ineq_rows).push_back(std::move(r));
        }

        auto sol = solve_qp(qp);
        REQUIRE(sol.status == OracleStatus::Optimal);

        // same problem as a least-distance instance in scaled coordinates:
        // u_k = sqrt(quad_k) x_k turns the objective into |u - u0|^2.
        std::vector<LinearRow> scaled_rows;
        for (const auto& r : qp.eq_rows) {
            LinearRow s = r;
            for (auto& [k, c] : s.terms) c /= std::sqrt(quad[k]);
            scaled_rows.push_back(std::move(s));
        }
        for (const auto& r : qp.ineq_rows) {
            LinearRow s = r;
            for (auto& [k, c] : s.terms) c /= std::sqrt(quad[k]);
            scaled_rows.push_back(std::move(s));
        }
        auto scaled = make_polyhedron(0, std::move(scaled_rows));
        Eigen::VectorXd u0(n);
        for (int k = 0; k < n; ++k) u0[k] = -lin[k] / (2.0 * std::sqrt(quad[k]));
        // the scaled polyhedron re-sorts its support, but dimensions match
        auto expect_u = testsup::project_bruteforce(scaled, u0);
        REQUIRE(expect_u.has_value());
        for (int k = 0; k < n; ++k)
            REQUIRE(sol.x_star[k] == Approx((*expect_u)[k] / std::sqrt(quad[k])).margin(2e-6));
    }
}

TEST_CASE("interior point certifies infeasibility") {
    QpProblem qp;
    qp.dimension = 1;
    qp.quad = Eigen::VectorXd::Zero(1);
    qp.lin = Eigen::VectorXd::Zero(1);
    qp.ineq_rows = {ineq({{0, 1.0}}, -1.0, "x<=-1"), ineq({{0, -1.0}}, -1.0, "x>=1")};
    auto cert = certify_feasibility(qp);
    REQUIRE_FALSE(cert.feasible);
    REQUIRE(cert.max_violation > 0.5);
    REQUIRE_FALSE(cert.worst_rows.empty());
}

TEST_CASE("brute force") {
    SECTION("toy box on a grid") {
        auto best = brute_force_small(toy_box_qp(), 0.01);
        REQUIRE(best.feasible_point_found);
        REQUIRE(best.best[0] == Approx(2.0).margin(1e-9));
    }
    SECTION("two-variable trade toy with reciprocity") {
        // min 0.3 a - 0.1 b  s.t.  a = b, 0 <= a <= 2, 0 <= b <= 2
        QpProblem qp;
        qp.dimension = 2;
        qp.quad = Eigen::VectorXd::Zero(2);
        qp.lin.resize(2);
        qp.lin << 0.3, -0.1;
        qp.eq_rows = {eq({{0, 1.0}, {1, -1.0}}, 0.0, "recip")};
        qp.ineq_rows = {ineq({{0, 1.0}}, 2.0), ineq({{0, -1.0}}, 0.0), ineq({{1, 1.0}}, 2.0),
                        ineq({{1, -1.0}}, 0.0)};
        auto grid = brute_force_small(qp, 0.01);
        auto sol = solve_qp(qp);
        REQUIRE(grid.feasible_point_found);
        REQUIRE(sol.status == OracleStatus::Optimal);
        REQUIRE((grid.best - sol.x_star).lpNorm<Eigen::Infinity>() <= 0.011);
    }
    SECTION("infeasible box is flagged") {
        QpProblem qp;
        qp.dimension = 1;
        qp.quad = Eigen::VectorXd::Zero(1);
        qp.lin = Eigen::VectorXd::Zero(1);
        qp.ineq_rows = {ineq({{0, 1.0}}, -1.0), ineq({{0, -1.0}}, -1.0)};
        auto best = brute_force_small(qp, 0.05);
        REQUIRE_FALSE(best.feasible_point_found);
    }
    SECTION("too many free dimensions is a refusal") {
        QpProblem qp;
        qp.dimension = 5;
        qp.quad = Eigen::VectorXd::Ones(5);
        qp.lin = Eigen::VectorXd::Zero(5);
        REQUIRE_THROWS_AS(brute_force_small(qp, 0.5), SolverError);
    }
}

TEST_CASE("centralized stage-1 solve of the bundled community") {
    auto file = bundled_ieee13();
    const auto& sc = file.scenario;
    DecisionIndex index(sc);
    auto sol = solve_centralized(sc, index);
    INFO(sol.message);
    REQUIRE(sol.status == OracleStatus::Optimal);
    REQUIRE(sol.kkt_residual <= 1e-8);
    REQUIRE(std::isfinite(sol.objective));
    REQUIRE(constraint_residuals(sc, index, sol.x_star).max_violation() <= 1e-6);

    SECTION("no-trade baseline costs at least as much in total") {
        auto base = solve_centralized(sc, index, /*pin_trades=*/true);
        REQUIRE(base.status == OracleStatus::Optimal);
        REQUIRE(base.objective >= sol.objective - 1e-6);
        // pinned trades are actually zero
        for (int r = 0; r < index.total_len(); ++r) {
            const VarRef& d = index.describe(r);
            if (d.kind == VarKind::TradeSell || d.kind == VarKind::TradeBuy)
                REQUIRE(std::abs(base.x_star[r]) <= 1e-7);
        }
    }
}
