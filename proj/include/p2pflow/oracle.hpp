#pragma once

// Centralized reference solvers, used only to verify the decentralized
// results. The main entry is a sparse primal-dual interior-point method
// (Mehrotra predictor-corrector) over the assembled global problem; a
// grid-search brute forcer covers micro instances. Neither shares any
// solve or projection code with the consensus machinery.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "p2pflow/consensus.hpp"
#include "p2pflow/decision_index.hpp"
#include "p2pflow/objective.hpp"
#include "p2pflow/polyhedron.hpp"
#include "p2pflow/scenario.hpp"

namespace p2pflow::oracle {

struct QpProblem {
    int dimension = 0;
    Eigen::VectorXd quad;  // separable: objective = sum quad_r x_r^2 + lin_r x_r + constant
    Eigen::VectorXd lin;
    double constant = 0.0;
    std::vector<LinearRow> eq_rows;
    std::vector<LinearRow> ineq_rows;
};

enum class OracleStatus { Optimal, Infeasible, IterationLimit };

inline const char* to_string(OracleStatus s) {
    switch (s) {
        case OracleStatus::Optimal: return "optimal";
        case OracleStatus::Infeasible: return "infeasible";
        case OracleStatus::IterationLimit: return "iteration-limit";
    }
    return "?";
}

struct OracleSolution {
    Eigen::VectorXd x_star;
    double objective = 0.0;
    double kkt_residual = 0.0;
    OracleStatus status = OracleStatus::IterationLimit;
    std::string message;
};

namespace detail {

inline Eigen::SparseMatrix<double> rows_to_sparse(const std::vector<LinearRow>& rows, int n) {
    Eigen::SparseMatrix<double> M(static_cast<int>(rows.size()), n);
    std::vector<Eigen::Triplet<double>> trips;
    for (size_t j = 0; j < rows.size(); ++j)
        for (const auto& [off, c] : rows[j].terms)
            trips.emplace_back(static_cast<int>(j), off, c);
    M.setFromTriplets(trips.begin(), trips.end());
    return M;
}

inline Eigen::VectorXd rows_rhs(const std::vector<LinearRow>& rows) {
    Eigen::VectorXd b(rows.size());
    for (size_t j = 0; j < rows.size(); ++j) b[j] = rows[j].rhs;
    return b;
}

}  // namespace detail

/// Mehrotra predictor-corrector interior point for
///   min  x'diag(2 quad)x/2 + lin'x   s.t.  A x = b,  G x <= h
/// followed by an active-set polish solve that pins the degenerate
/// complementarity products to machine precision when the final active
/// set is guessed right.
inline OracleSolution solve_qp(const QpProblem& qp, double tol = 1e-9, int max_iter = 200) {
    using SpMat = Eigen::SparseMatrix<double>;
    const int n = qp.dimension;
    const int me = static_cast<int>(qp.eq_rows.size());
    const int mi = static_cast<int>(qp.ineq_rows.size());

    SpMat A = detail::rows_to_sparse(qp.eq_rows, n);
    SpMat G = detail::rows_to_sparse(qp.ineq_rows, n);
    SpMat At = A.transpose();
    SpMat Gt = G.transpose();
    Eigen::VectorXd b = detail::rows_rhs(qp.eq_rows);
    Eigen::VectorXd h = detail::rows_rhs(qp.ineq_rows);
    Eigen::VectorXd q2 = 2.0 * qp.quad;

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(me);
    Eigen::VectorXd s(mi), z(mi);
    {
        Eigen::VectorXd gx = G * x;
        for (int j = 0; j < mi; ++j) s[j] = std::max(1.0, h[j] - gx[j]);
        z.setOnes();
    }

    const double scale_b = 1.0 + std::max(b.size() ? b.cwiseAbs().maxCoeff() : 0.0,
                                          h.size() ? h.cwiseAbs().maxCoeff() : 0.0);
    const double scale_c = 1.0 + qp.lin.cwiseAbs().maxCoeff();

    Eigen::SparseLU<SpMat> lu;
    bool analyzed = false;
    double delta = 1e-9;

    OracleSolution sol;
    sol.x_star = x;
    Eigen::VectorXd best_s = s, best_z = z, best_y = y;
    double best_kkt = std::numeric_limits<double>::infinity();
    int stalled = 0;

    for (int iter = 0; iter < max_iter; ++iter) {
        Eigen::VectorXd rd = q2.cwiseProduct(x) + qp.lin;
        if (me) rd += At * y;
        if (mi) rd += Gt * z;
        Eigen::VectorXd rp = me ? Eigen::VectorXd(A * x - b) : Eigen::VectorXd(0);
        Eigen::VectorXd rg = mi ? Eigen::VectorXd(G * x + s - h) : Eigen::VectorXd(0);
        const double mu = mi ? s.dot(z) / mi : 0.0;

        const double pri = std::max(rp.size() ? rp.cwiseAbs().maxCoeff() : 0.0,
                                    rg.size() ? rg.cwiseAbs().maxCoeff() : 0.0);
        const double dua = rd.cwiseAbs().maxCoeff();
        const double kkt = std::max({pri / scale_b, dua / scale_c, mu});
        if (kkt < best_kkt * 0.999) {
            best_kkt = kkt;
            sol.kkt_residual = kkt;
            sol.x_star = x;
            best_s = s;
            best_z = z;
            best_y = y;
            stalled = 0;
        } else if (++stalled > 15) {
            sol.message = "interior point stalled at residual " + std::to_string(best_kkt);
            break;
        }
        if (best_kkt <= tol) break;

        // KKT matrix [H + G' (z/s) G + dI, A'; A, -dI]
        Eigen::VectorXd zs(mi);
        for (int j = 0; j < mi; ++j)
            zs[j] = std::min(std::max(z[j] / s[j], 1e-14), 1e12);
        SpMat H(n + me, n + me);
        {
            std::vector<Eigen::Triplet<double>> trips;
            SpMat core(n, n);
            if (mi) {
                SpMat D(mi, mi);
                std::vector<Eigen::Triplet<double>> dt;
                for (int j = 0; j < mi; ++j) dt.emplace_back(j, j, zs[j]);
                D.setFromTriplets(dt.begin(), dt.end());
                core = Gt * D * G;
            }
            for (int k = 0; k < core.outerSize(); ++k)
                for (SpMat::InnerIterator it(core, k); it; ++it)
                    trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                                       it.value());
            for (int r = 0; r < n; ++r) trips.emplace_back(r, r, q2[r] + delta);
            for (int k = 0; k < A.outerSize(); ++k)
                for (SpMat::InnerIterator it(A, k); it; ++it) {
                    trips.emplace_back(n + static_cast<int>(it.row()),
                                       static_cast<int>(it.col()), it.value());
                    trips.emplace_back(static_cast<int>(it.col()),
                                       n + static_cast<int>(it.row()), it.value());
                }
            for (int r = 0; r < me; ++r) trips.emplace_back(n + r, n + r, -delta);
            H.setFromTriplets(trips.begin(), trips.end());
        }
        if (!analyzed) {
            lu.analyzePattern(H);
            analyzed = true;
        }
        lu.factorize(H);
        if (lu.info() != Eigen::Success) {
            delta *= 100.0;
            if (delta > 1e-4) {
                sol.message = "KKT factorization gave out at residual " +
                              std::to_string(best_kkt);
                break;
            }
            continue;
        }

        auto solve_dir = [&](const Eigen::VectorXd& rc)
            -> std::tuple<Eigen::VectorXd, Eigen::VectorXd, Eigen::VectorXd, Eigen::VectorXd> {
            Eigen::VectorXd rhs(n + me);
            Eigen::VectorXd top = -rd;
            if (mi) top += Gt * ((rc - z.cwiseProduct(rg)).cwiseQuotient(s));
            rhs.head(n) = top;
            rhs.tail(me) = -rp;
            Eigen::VectorXd dxy = lu.solve(rhs);
            Eigen::VectorXd resid = rhs - H * dxy;  // one refinement pass
            dxy += lu.solve(resid);
            Eigen::VectorXd dx = dxy.head(n);
            Eigen::VectorXd dy = dxy.tail(me);
            Eigen::VectorXd ds(mi), dz(mi);
            if (mi) {
                ds = -rg - G * dx;
                dz = -(rc + z.cwiseProduct(ds)).cwiseQuotient(s);
            }
            return {dx, dy, ds, dz};
        };

        auto step_len = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
            double alpha = 1.0;
            for (int j = 0; j < v.size(); ++j)
                if (dv[j] < 0) alpha = std::min(alpha, -v[j] / dv[j]);
            return alpha;
        };

        // predictor
        Eigen::VectorXd rc_aff = mi ? Eigen::VectorXd(s.cwiseProduct(z)) : Eigen::VectorXd(0);
        auto [dx_a, dy_a, ds_a, dz_a] = solve_dir(rc_aff);
        double ap = mi ? step_len(s, ds_a) : 1.0;
        double ad = mi ? step_len(z, dz_a) : 1.0;
        double sigma = 0.0;
        if (mi) {
            const double mu_aff =
                (s + ap * ds_a).dot(z + ad * dz_a) / static_cast<double>(mi);
            sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
            sigma = std::min(std::max(sigma, 0.0), 0.999);
        }

        // corrector
        Eigen::VectorXd rc(mi);
        if (mi)
            rc = s.cwiseProduct(z) + ds_a.cwiseProduct(dz_a) -
                 Eigen::VectorXd::Constant(mi, sigma * mu);
        auto [dx, dy, ds, dz] = solve_dir(mi ? rc : Eigen::VectorXd(0));

        double alpha_p = 1.0, alpha_d = 1.0;
        if (mi) {
            alpha_p = std::min(1.0, 0.995 * step_len(s, ds));
            alpha_d = std::min(1.0, 0.995 * step_len(z, dz));
        }
        x += alpha_p * dx;
        if (me) y += alpha_d * dy;
        if (mi) {
            s += alpha_p * ds;
            z += alpha_d * dz;
        }

        if (iter == max_iter - 1) sol.message = "interior point hit the iteration limit";
    }

    // Active-set polish: solve the equality system of the guessed active
    // rows directly, then repair the guess a few times (drop rows whose
    // multiplier comes out negative, add rows the candidate violates).
    // Accept the candidate only when it beats the interior iterate.
    if (mi && std::isfinite(best_kkt)) {
        std::vector<char> active(mi, 0);
        for (int j = 0; j < mi; ++j) active[j] = best_z[j] > best_s[j] ? 1 : 0;
        for (int pass = 0; pass < 12; ++pass) {
            std::vector<int> act;
            for (int j = 0; j < mi; ++j)
                if (active[j]) act.push_back(j);
            const int ma = static_cast<int>(act.size());
            SpMat K(n + me + ma, n + me + ma);
            std::vector<Eigen::Triplet<double>> trips;
            const double dp = 1e-11;
            for (int r = 0; r < n; ++r) trips.emplace_back(r, r, q2[r] + dp);
            auto add_row = [&](int kr, const LinearRow& row) {
                for (const auto& [off, c] : row.terms) {
                    trips.emplace_back(n + kr, off, c);
                    trips.emplace_back(off, n + kr, c);
                }
                trips.emplace_back(n + kr, n + kr, -dp);
            };
            for (int j = 0; j < me; ++j) add_row(j, qp.eq_rows[j]);
            for (int a = 0; a < ma; ++a) add_row(me + a, qp.ineq_rows[act[a]]);
            K.setFromTriplets(trips.begin(), trips.end());
            Eigen::SparseLU<SpMat> plu;
            plu.compute(K);
            if (plu.info() != Eigen::Success) break;
            Eigen::VectorXd rhs(n + me + ma);
            rhs.head(n) = -qp.lin;
            for (int j = 0; j < me; ++j) rhs[n + j] = b[j];
            for (int a = 0; a < ma; ++a) rhs[n + me + a] = h[act[a]];
            Eigen::VectorXd xs = plu.solve(rhs);
            xs += plu.solve(Eigen::VectorXd(rhs - K * xs));
            Eigen::VectorXd px = xs.head(n);
            Eigen::VectorXd rd2 = q2.cwiseProduct(px) + qp.lin;
            for (int j = 0; j < me; ++j)
                for (const auto& [off, c] : qp.eq_rows[j].terms) rd2[off] += c * xs[n + j];
            double dual_neg = 0.0;
            for (int a = 0; a < ma; ++a) {
                for (const auto& [off, c] : qp.ineq_rows[act[a]].terms)
                    rd2[off] += c * xs[n + me + a];
                dual_neg = std::max(dual_neg, -xs[n + me + a]);
            }
            double pri2 = 0.0;
            if (me) pri2 = (A * px - b).cwiseAbs().maxCoeff();
            Eigen::VectorXd gx2 = G * px - h;
            for (int j = 0; j < mi; ++j) pri2 = std::max(pri2, gx2[j]);
            const double kkt2 = std::max(
                {pri2 / scale_b, rd2.cwiseAbs().maxCoeff() / scale_c, dual_neg});
            if (kkt2 < best_kkt) {
                best_kkt = kkt2;
                sol.x_star = px;
            }
            bool changed = false;
            for (int a = 0; a < ma; ++a)
                if (xs[n + me + a] < -1e-10) {
                    active[act[a]] = 0;
                    changed = true;
                }
            for (int j = 0; j < mi; ++j)
                if (!active[j] && gx2[j] > 1e-10) {
                    active[j] = 1;
                    changed = true;
                }
            if (!changed) break;
        }
    }

    sol.status = best_kkt <= std::max(tol, 1e-9) ? OracleStatus::Optimal
                                                 : OracleStatus::IterationLimit;
    if (sol.status == OracleStatus::Optimal) sol.message.clear();
    sol.kkt_residual = best_kkt;
    SeparableQuadratic f;
    f.quad = qp.quad;
    f.lin = qp.lin;
    f.constant = qp.constant;
    sol.objective = f.value(sol.x_star);
    return sol;
}

/// Least-violation certificate: minimizes the squared elastic slack of
/// all rows. A positive optimum means the problem is infeasible; the
/// returned per-row violations identify the contradicting rows.
struct FeasibilityCertificate {
    bool feasible = true;
    double max_violation = 0.0;
    std::vector<std::pair<std::string, double>> worst_rows;
};

inline FeasibilityCertificate certify_feasibility(const QpProblem& qp, double tol = 1e-7) {
    const int n = qp.dimension;
    const int me = static_cast<int>(qp.eq_rows.size());
    const int mi = static_cast<int>(qp.ineq_rows.size());
    QpProblem el;
    el.dimension = n + me + mi;
    el.quad = Eigen::VectorXd::Zero(el.dimension);
    el.lin = Eigen::VectorXd::Zero(el.dimension);
    for (int j = 0; j < me + mi; ++j) el.quad[n + j] = 0.5;  // (1/2)u^2 per elastic
    for (int j = 0; j < me; ++j) {
        LinearRow r = qp.eq_rows[j];
        r.terms.emplace_back(n + j, 1.0);
        el.eq_rows.push_back(std::move(r));
    }
    for (int j = 0; j < mi; ++j) {
        LinearRow r = qp.ineq_rows[j];
        r.terms.emplace_back(n + me + j, -1.0);
        el.ineq_rows.push_back(std::move(r));
        LinearRow pos;  // elastic of an inequality only relaxes
        pos.equality = false;
        pos.terms = {{n + me + j, -1.0}};
        pos.rhs = 0.0;
        el.ineq_rows.push_back(std::move(pos));
    }
    OracleSolution s = solve_qp(el, 1e-10);
    // judge feasibility by evaluating the original rows at the
    // least-violation point, not by the elastic magnitudes
    FeasibilityCertificate cert;
    auto eval = [&](const LinearRow& row) {
        double acc = 0.0;
        for (const auto& [off, c] : row.terms)
            if (off < n) acc += c * s.x_star[off];
        return acc - row.rhs;
    };
    for (int j = 0; j < me + mi; ++j) {
        const auto& row = j < me ? qp.eq_rows[j] : qp.ineq_rows[j - me];
        const double r = eval(row);
        const double v = j < me ? std::abs(r) : std::max(r, 0.0);
        cert.max_violation = std::max(cert.max_violation, v);
        if (v > tol) cert.worst_rows.emplace_back(row.label, v);
    }
    cert.feasible = cert.max_violation <= tol;
    std::sort(cert.worst_rows.begin(), cert.worst_rows.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    if (cert.worst_rows.size() > 8) cert.worst_rows.resize(8);
    return cert;
}

// ---------------------------------------------------------------------------
// Global assembly
// ---------------------------------------------------------------------------

/// Assembles the full stage-1 problem directly from the scenario (no
/// per-prosumer polyhedra involved). With `pin_trades`, every bilateral
/// trade variable is fixed to zero, which is the no-trading baseline.
inline QpProblem assemble_stage1(const CommunityScenario& sc, const DecisionIndex& index,
                                 bool pin_trades = false) {
    const double dt = sc.time.step_hours;
    const int T = index.num_steps();
    const int np = sc.num_prosumers();
    QpProblem qp;
    qp.dimension = index.total_len();
    {
        SeparableQuadratic f = build_stage1_objective(sc, index);
        qp.quad = f.quad;
        qp.lin = f.lin;
        qp.constant = f.constant;
    }
    auto eq = [&](std::vector<std::pair<int, double>> terms, double rhs, std::string label) {
        qp.eq_rows.push_back(LinearRow{true, std::move(terms), rhs,
                                       ConstraintFamily::BalanceDevices, std::move(label)});
    };
    auto le = [&](std::vector<std::pair<int, double>> terms, double rhs, std::string label) {
        qp.ineq_rows.push_back(LinearRow{false, std::move(terms), rhs,
                                         ConstraintFamily::FlBox, std::move(label)});
    };

    for (int i = 0; i < np; ++i) {
        const auto& p = sc.prosumers[i];
        const std::string pi = "p" + std::to_string(i);
        for (size_t m = 0; m < p.flexible_loads.size(); ++m) {
            const auto& fl = p.flexible_loads[m];
            const int o = index.block_start(i, VarKind::FlexLoad, static_cast<int>(m));
            std::vector<std::pair<int, double>> en;
            for (int t = 0; t < T; ++t) {
                le({{o + t, 1.0}}, fl.p_max[t], pi + ".fl.hi");
                le({{o + t, -1.0}}, -fl.p_min[t], pi + ".fl.lo");
                en.emplace_back(o + t, -dt);
            }
            le(std::move(en), -fl.energy_ref, pi + ".fl.energy");
        }
        for (size_t q = 0; q < p.storages.size(); ++q) {
            const auto& es = p.storages[q];
            const int oc = index.block_start(i, VarKind::StorageCharge, static_cast<int>(q));
            const int od = index.block_start(i, VarKind::StorageDischarge, static_cast<int>(q));
            std::vector<std::pair<int, double>> run;
            for (int t = 0; t < T; ++t) {
                le({{oc + t, 1.0}}, es.p_charge_max, pi + ".chg.hi");
                le({{oc + t, -1.0}}, 0.0, pi + ".chg.lo");
                le({{od + t, 1.0}}, es.p_discharge_max, pi + ".dis.hi");
                le({{od + t, -1.0}}, 0.0, pi + ".dis.lo");
                run.emplace_back(oc + t, es.eta_c * dt);
                run.emplace_back(od + t, -dt / es.eta_d);
                auto neg = run;
                for (auto& [o2, c] : neg) c = -c;
                le(run, es.soc_max * es.w_nominal - es.w0, pi + ".soc.hi");
                le(std::move(neg), es.w0 - es.soc_min * es.w_nominal, pi + ".soc.lo");
            }
            auto neg = run;
            for (auto& [o2, c] : neg) c = -c;
            le(run, es.w_day_max, pi + ".day.hi");
            le(std::move(neg), -es.w_day_min, pi + ".day.lo");
        }
        for (size_t d = 0; d < p.diesels.size(); ++d) {
            const auto& de = p.diesels[d];
            const int o = index.block_start(i, VarKind::Diesel, static_cast<int>(d));
            for (int t = 0; t < T; ++t) {
                le({{o + t, 1.0}}, de.p_max[t], pi + ".de.hi");
                le({{o + t, -1.0}}, -de.p_min[t], pi + ".de.lo");
                if (t == 0) {
                    le({{o, 1.0}}, de.p_initial + dt * de.ramp_max[0], pi + ".de.rampup");
                    le({{o, -1.0}}, -(de.p_initial + dt * de.ramp_min[0]), pi + ".de.rampdn");
                } else {
                    le({{o + t, 1.0}, {o + t - 1, -1.0}}, dt * de.ramp_max[t], pi + ".de.rampup");
                    le({{o + t, -1.0}, {o + t - 1, 1.0}}, -dt * de.ramp_min[t], pi + ".de.rampdn");
                }
            }
        }
        const int os = index.block_start(i, VarKind::GridSell);
        const int ob = index.block_start(i, VarKind::GridBuy);
        const int oo = index.block_start(i, VarKind::NetOutput);
        for (int t = 0; t < T; ++t) {
            le({{os + t, -1.0}}, 0.0, pi + ".gs.lo");
            le({{ob + t, -1.0}}, 0.0, pi + ".gb.lo");

            std::vector<std::pair<int, double>> dev{{oo + t, 1.0}};
            for (size_t d = 0; d < p.diesels.size(); ++d)
                dev.emplace_back(index.block_start(i, VarKind::Diesel, static_cast<int>(d)) + t,
                                 -1.0);
            for (size_t q = 0; q < p.storages.size(); ++q) {
                dev.emplace_back(
                    index.block_start(i, VarKind::StorageCharge, static_cast<int>(q)) + t, -1.0);
                dev.emplace_back(
                    index.block_start(i, VarKind::StorageDischarge, static_cast<int>(q)) + t,
                    1.0);
            }
            for (size_t m = 0; m < p.flexible_loads.size(); ++m)
                dev.emplace_back(index.block_start(i, VarKind::FlexLoad, static_cast<int>(m)) + t,
                                 1.0);
            eq(std::move(dev), p.nondispatchable_gen[t] - p.inflexible_load[t],
               pi + ".balance.devices");

            std::vector<std::pair<int, double>> tr{{oo + t, 1.0}, {os + t, -1.0}, {ob + t, 1.0}};
            for (int j = 0; j < np; ++j) {
                if (j == i) continue;
                tr.emplace_back(index.block_start(i, VarKind::TradeSell, j) + t, -1.0);
                tr.emplace_back(index.block_start(i, VarKind::TradeBuy, j) + t, 1.0);
            }
            eq(std::move(tr), 0.0, pi + ".balance.trades");
        }
        for (int j = 0; j < np; ++j) {
            if (j == i) continue;
            const int ops = index.block_start(i, VarKind::TradeSell, j);
            const int opb = index.block_start(i, VarKind::TradeBuy, j);
            const int ops_ji = index.block_start(j, VarKind::TradeSell, i);
            for (int t = 0; t < T; ++t) {
                const std::string pair =
                    pi + ".trade." + std::to_string(j) + ".t" + std::to_string(t);
                if (pin_trades) {
                    eq({{ops + t, 1.0}}, 0.0, pair + ".pin_ps");
                    eq({{opb + t, 1.0}}, 0.0, pair + ".pin_pb");
                } else {
                    le({{ops + t, -1.0}}, 0.0, pair + ".ps.lo");
                    le({{opb + t, -1.0}}, 0.0, pair + ".pb.lo");
                }
                eq({{opb + t, 1.0}, {ops_ji + t, -1.0}}, 0.0, pair + ".recip");
            }
        }
    }
    for (const auto& line : sc.topology.lines) {
        for (int t = 0; t < T; ++t) {
            std::vector<std::pair<int, double>> flow;
            for (int j : line.members)
                flow.emplace_back(index.block_start(j, VarKind::NetOutput) + t, 1.0);
            auto neg = flow;
            for (auto& [o2, c] : neg) c = -c;
            const std::string at = "line" + std::to_string(line.id) + ".t" + std::to_string(t);
            le(std::move(flow), line.c_max, at + ".hi");
            le(std::move(neg), -line.c_min, at + ".lo");
        }
    }
    return qp;
}

/// Union of all agent sets of a consensus problem as one QP (exact
/// duplicate rows removed; equality rows are sign-normalized first).
inline QpProblem assemble_from_consensus(const ConsensusProblem& prob) {
    QpProblem qp;
    qp.dimension = prob.dimension;
    qp.quad = prob.objective.quad;
    qp.lin = prob.objective.lin;
    qp.constant = prob.objective.constant;
    std::set<std::string> seen;
    char buf[64];
    for (const auto& poly : prob.sets) {
        for (const auto& row : poly.rows) {
            LinearRow r = row;
            if (r.equality && !r.terms.empty() && r.terms.front().second < 0) {
                for (auto& [o, c] : r.terms) c = -c;
                r.rhs = -r.rhs;
            }
            std::string key(r.equality ? "E" : "I");
            for (const auto& [o, c] : r.terms) {
                std::snprintf(buf, sizeof buf, "|%d:%.17g", o, c);
                key += buf;
            }
            std::snprintf(buf, sizeof buf, "<%.17g", r.rhs);
            key += buf;
            if (!seen.insert(key).second) continue;
            (r.equality ? qp.eq_rows : qp.ineq_rows).push_back(std::move(r));
        }
    }
    return qp;
}

/// Centralized stage-1 solve; the reference X* for error traces.
inline OracleSolution solve_centralized(const CommunityScenario& sc, const DecisionIndex& index,
                                        bool pin_trades = false) {
    QpProblem qp = assemble_stage1(sc, index, pin_trades);
    OracleSolution sol = solve_qp(qp);
    if (sol.status == OracleStatus::Optimal) {
        const double viol = constraint_residuals(sc, index, sol.x_star).max_violation();
        if (viol > 1e-6 || sol.kkt_residual > 1e-8) {
            sol.status = OracleStatus::IterationLimit;
            sol.message = "solution failed the optimality certificate (violation " +
                          std::to_string(viol) + ")";
        }
    } else if (sol.status == OracleStatus::IterationLimit) {
        FeasibilityCertificate cert = certify_feasibility(qp);
        if (!cert.feasible) {
            sol.status = OracleStatus::Infeasible;
            sol.message = "infeasible; worst rows:";
            for (const auto& [label, v] : cert.worst_rows)
                sol.message += " " + label + " (" + std::to_string(v) + ")";
        }
    }
    return sol;
}

// ---------------------------------------------------------------------------
// Brute force
// ---------------------------------------------------------------------------

struct BruteForceResult {
    bool feasible_point_found = false;
    Eigen::VectorXd best;
    double objective = std::numeric_limits<double>::infinity();
};

/// Exhaustive grid search after eliminating equality constraints.
/// Refuses problems with more than four free dimensions.
inline BruteForceResult brute_force_small(const QpProblem& qp, double grid_step) {
    const int n = qp.dimension;
    const int me = static_cast<int>(qp.eq_rows.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(std::max(me, 1), n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(std::max(me, 1));
    for (int j = 0; j < me; ++j) {
        for (const auto& [off, c] : qp.eq_rows[j].terms) A(j, off) = c;
        b[j] = qp.eq_rows[j].rhs;
    }
    Eigen::VectorXd x_part = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd null_basis = Eigen::MatrixXd::Identity(n, n);
    if (me > 0) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(A.topRows(me),
                                              Eigen::ComputeFullV | Eigen::ComputeThinU);
        x_part = svd.solve(b.head(me));
        const double thresh = 1e-10 * std::max(1.0, svd.singularValues()[0]);
        int rank = 0;
        for (int k = 0; k < svd.singularValues().size(); ++k)
            if (svd.singularValues()[k] > thresh) ++rank;
        null_basis = svd.matrixV().rightCols(n - rank);
        if ((A.topRows(me) * x_part - b.head(me)).cwiseAbs().maxCoeff() > 1e-8)
            return BruteForceResult{};  // inconsistent equalities
    }
    const int k = static_cast<int>(null_basis.cols());
    if (k > 4)
        throw SolverError("brute_force_small: " + std::to_string(k) +
                          " free dimensions after elimination (limit 4)");

    double radius = 1.0;
    for (const auto& row : qp.ineq_rows) {
        double ax = 0.0, norm = 0.0;
        for (const auto& [off, c] : row.terms) {
            ax += c * x_part[off];
            norm = std::max(norm, std::abs(c));
        }
        if (norm > 1e-12) radius = std::max(radius, (std::abs(row.rhs - ax) + 1.0) / norm);
    }

    SeparableQuadratic f;
    f.quad = qp.quad;
    f.lin = qp.lin;
    f.constant = qp.constant;

    BruteForceResult best;
    const int steps = static_cast<int>(std::floor(2.0 * radius / grid_step)) + 1;
    std::vector<int> idx(std::max(k, 1), 0);
    Eigen::VectorXd u(k);
    const double feas_tol = 1e-9 + 0.5 * grid_step * 1e-6;
    while (true) {
        for (int dDim = 0; dDim < k; ++dDim) u[dDim] = -radius + idx[dDim] * grid_step;
        Eigen::VectorXd x = x_part;
        if (k > 0) x += null_basis * u;
        bool ok = true;
        for (const auto& row : qp.ineq_rows) {
            double ax = 0.0;
            for (const auto& [off, c] : row.terms) ax += c * x[off];
            if (ax > row.rhs + feas_tol) {
                ok = false;
                break;
            }
        }
        if (ok) {
            const double v = f.value(x);
            if (v < best.objective) {
                best.objective = v;
                best.best = x;
                best.feasible_point_found = true;
            }
        }
        if (k == 0) break;
        int carry = 0;
        while (carry < k) {
            if (++idx[carry] < steps) break;
            idx[carry] = 0;
            ++carry;
        }
        if (carry == k) break;
    }
    return best;
}

}  // namespace p2pflow::oracle
