#pragma once

// Combinatorial projection oracle for micro polyhedra: enumerates every
// subset of active rows, projects onto each subset's affine hull by a
// rank-revealing least-squares solve, and keeps the feasible candidate
// nearest to the query point. The true projection lies on some face, so
// it is always among the candidates; every other feasible candidate is
// at least as far away. Deliberately shares nothing with the production
// projector beyond the row container.

#include <Eigen/Dense>
#include <optional>
#include <random>
#include <vector>

#include "p2pflow/polyhedron.hpp"

namespace testsup {

using p2pflow::LinearRow;
using p2pflow::Polyhedron;

inline Eigen::MatrixXd dense_rows(const Polyhedron& poly, const std::vector<int>& which) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(which.size(), poly.dim());
    for (size_t r = 0; r < which.size(); ++r)
        for (const auto& [k, c] : poly.local_terms[which[r]]) A(r, k) = c;
    return A;
}

inline std::optional<Eigen::VectorXd> project_bruteforce(const Polyhedron& poly,
                                                         const Eigen::VectorXd& w,
                                                         double feas_tol = 1e-9) {
    const int m = poly.num_rows();
    std::vector<int> eqs, ineqs;
    for (int j = 0; j < m; ++j)
        (poly.rows[j].equality ? eqs : ineqs).push_back(j);
    if (ineqs.size() > 16)
        throw std::runtime_error("project_bruteforce: too many inequality rows");

    auto feasible = [&](const Eigen::VectorXd& y) {
        for (int j = 0; j < m; ++j) {
            const double v = poly.eval_local(j, y) - poly.rows[j].rhs;
            if (poly.rows[j].equality ? std::abs(v) > feas_tol : v > feas_tol) return false;
        }
        return true;
    };

    std::optional<Eigen::VectorXd> best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (unsigned mask = 0; mask < (1u << ineqs.size()); ++mask) {
        std::vector<int> active = eqs;
        for (size_t b = 0; b < ineqs.size(); ++b)
            if (mask & (1u << b)) active.push_back(ineqs[b]);
        Eigen::VectorXd y;
        if (active.empty()) {
            y = w;
        } else {
            Eigen::MatrixXd A = dense_rows(poly, active);
            Eigen::VectorXd b(active.size());
            for (size_t r = 0; r < active.size(); ++r) b[r] = poly.rows[active[r]].rhs;
            // projection onto {A y = b}: y = w - A^T (A A^T)^+ (A w - b)
            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A * A.transpose());
            Eigen::VectorXd mult = cod.solve(A * w - b);
            y = w - A.transpose() * mult;
            if ((A * y - b).cwiseAbs().maxCoeff() > feas_tol) continue;  // inconsistent hull
        }
        if (!feasible(y)) continue;
        const double dist = (y - w).norm();
        if (dist < best_dist) {
            best_dist = dist;
            best = y;
        }
    }
    return best;
}

/// Random micro polyhedron, guaranteed nonempty: rows are supporting or
/// slack hyperplanes of a hidden witness point. Roughly a third of the
/// inequalities are tight at the witness to exercise degenerate corners.
inline Polyhedron random_micro_polyhedron(std::mt19937& rng, int max_dim = 6,
                                          int max_rows = 8) {
    std::uniform_int_distribution<int> dim_d(1, max_dim);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int n = dim_d(rng);
    const int rows = std::uniform_int_distribution<int>(1, max_rows)(rng);
    const int eqs = std::uniform_int_distribution<int>(0, std::min(2, n - 1))(rng);
    Eigen::VectorXd witness(n);
    for (int k = 0; k < n; ++k) witness[k] = 2.0 * u(rng);

    std::vector<LinearRow> out;
    for (int j = 0; j < rows; ++j) {
        LinearRow row;
        row.equality = j < eqs;
        double ax = 0.0;
        bool nonzero = false;
        for (int k = 0; k < n; ++k) {
            const double c = u(rng);
            if (std::abs(c) < 0.15) continue;
            row.terms.emplace_back(k, c);
            ax += c * witness[k];
            nonzero = true;
        }
        if (!nonzero) row.terms.emplace_back(std::uniform_int_distribution<int>(0, n - 1)(rng),
                                             1.0);
        ax = 0.0;
        for (const auto& [k, c] : row.terms) ax += c * witness[k];
        const double slack = row.equality ? 0.0
                             : (std::uniform_int_distribution<int>(0, 2)(rng) == 0
                                    ? 0.0
                                    : std::abs(u(rng)) + 0.05);
        row.rhs = ax + slack;
        row.label = "r" + std::to_string(j);
        out.push_back(std::move(row));
    }
    return p2pflow::make_polyhedron(0, std::move(out));
}

}  // namespace testsup
