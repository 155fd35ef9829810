#pragma once

// Exact Euclidean projection onto a Polyhedron via a dual active-set
// method. Starting from the unconstrained point (or a warm-started
// active set), violated rows are activated one at a time; each
// activation takes the Goldfarb-Idnani mix of full and partial dual
// steps, dropping rows whose multipliers would turn negative. The
// factorization of the active normals' Gram matrix is kept across calls,
// so a projection whose active set already matches costs one triangular
// solve plus a feasibility scan.
//
// Rows are normalized internally, so violations and the reported KKT
// residual are geometric distances.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2pflow/polyhedron.hpp"

namespace p2pflow {

class ProjectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InfeasibleSetError : public ProjectionError {
public:
    explicit InfeasibleSetError(const std::string& what, std::vector<std::string> rows = {})
        : ProjectionError(what), certificate_rows(std::move(rows)) {}
    std::vector<std::string> certificate_rows;
};

class ProjectionLimitError : public ProjectionError {
public:
    ProjectionLimitError(const std::string& what, double residual)
        : ProjectionError(what), best_residual(residual) {}
    double best_residual;
};

struct ProjectionResult {
    Eigen::VectorXd point;   // support-local coordinates
    double kkt_residual = 0.0;
    int iterations = 0;      // active-set changes in this call
};

class Projector {
public:
    explicit Projector(const Polyhedron& poly, double tol = 1e-8)
        : poly_(&poly), tol_(tol) {
        const int n = poly.dim();
        const int m = poly.num_rows();
        normals_.resize(m);
        inv_norm_.resize(m);
        rhs_.resize(m);
        for (int j = 0; j < m; ++j) {
            double nrm2 = 0.0;
            for (const auto& [k, c] : poly.local_terms[j]) nrm2 += c * c;
            const double nrm = std::sqrt(nrm2);
            inv_norm_[j] = 1.0 / nrm;
            normals_[j].reserve(poly.local_terms[j].size());
            for (const auto& [k, c] : poly.local_terms[j])
                normals_[j].emplace_back(k, c / nrm);
            rhs_[j] = poly.rows[j].rhs / nrm;
        }
        N_.resize(n, std::min(n, m));
        L_.resize(std::min(n, m), std::min(n, m));
        active_.reserve(std::min(n, m));
        lambda_.reserve(std::min(n, m));
        in_active_.assign(m, false);
    }

    Projector(const Projector&) = delete;
    Projector& operator=(const Projector&) = delete;
    Projector(Projector&&) = default;
    Projector& operator=(Projector&&) = default;

    const Polyhedron& polyhedron() const { return *poly_; }

    /// Drops the warm-started active set.
    void reset() {
        active_.clear();
        lambda_.clear();
        std::fill(in_active_.begin(), in_active_.end(), false);
        q_ = 0;
        equalities_installed_ = false;
    }

    ProjectionResult project(const Eigen::VectorXd& point) {
        const int n = poly_->dim();
        if (point.size() != n)
            throw ProjectionError("project: point has dimension " +
                                  std::to_string(point.size()) + ", set has " +
                                  std::to_string(n));
        if (poly_->empty_marker) return ProjectionResult{point, 0.0, 0};

        w_ = point;
        int changes = 0;
        if (!equalities_installed_) install_equalities(changes);

        solve_kkt();
        // Warm-started inequality rows may carry negative multipliers at
        // the new point; shed them before scanning for violations.
        const int max_warm_drops = q_ + 2;
        for (int guard = 0; guard < max_warm_drops; ++guard) {
            int worst = -1;
            double most_negative = -dual_tol_;
            for (int k = 0; k < q_; ++k) {
                if (poly_->rows[active_[k]].equality) continue;
                if (lambda_[k] < most_negative) {
                    most_negative = lambda_[k];
                    worst = k;
                }
            }
            if (worst < 0) break;
            drop(worst);
            ++changes;
            solve_kkt();
        }

        const int max_changes = 60 * (n + poly_->num_rows()) + 1000;
        while (true) {
            int p = -1;
            double vmax = feas_tol_;
            // Equality rows are installed up front (redundant ones hold
            // automatically), so only inequalities are scanned here.
            for (int j = 0; j < poly_->num_rows(); ++j) {
                if (in_active_[j] || poly_->rows[j].equality) continue;
                const double v = row_value(j) - rhs_[j];
                if (v > vmax) {
                    vmax = v;
                    p = j;
                }
            }
            if (p < 0) break;
            activate(p, changes);
            if (changes > max_changes)
                throw ProjectionLimitError(
                    "projection exceeded the active-set change budget (owner " +
                        std::to_string(poly_->owner) + ")",
                    current_residual());
        }

        ProjectionResult res;
        res.point = y_;
        res.kkt_residual = current_residual();
        res.iterations = changes;
        if (res.kkt_residual > tol_) {
            refactor();
            solve_kkt();
            res.point = y_;
            res.kkt_residual = current_residual();
            if (res.kkt_residual > tol_)
                throw ProjectionLimitError(
                    "projection stalled above tolerance (owner " +
                        std::to_string(poly_->owner) + ")",
                    res.kkt_residual);
        }
        return res;
    }

    /// Projects a full decision vector: gathers the support coordinates,
    /// projects, scatters back; off-support coordinates pass through.
    Eigen::VectorXd project_global(const Eigen::VectorXd& x, ProjectionResult* out = nullptr) {
        Eigen::VectorXd local(poly_->dim());
        for (int k = 0; k < poly_->dim(); ++k) local[k] = x[poly_->support[k]];
        ProjectionResult res = project(local);
        Eigen::VectorXd full = x;
        for (int k = 0; k < poly_->dim(); ++k) full[poly_->support[k]] = res.point[k];
        if (out) *out = std::move(res);
        return full;
    }

private:
    using SparseVec = std::vector<std::pair<int, double>>;

    double row_value(int j) const {
        double acc = 0.0;
        for (const auto& [k, c] : normals_[j]) acc += c * y_[k];
        return acc;
    }

    // N^T a for sparse a, over the current active columns.
    Eigen::VectorXd nt_times(const SparseVec& a) const {
        Eigen::VectorXd g(q_);
        for (int k = 0; k < q_; ++k) {
            double acc = 0.0;
            for (const auto& [idx, c] : a) acc += N_(idx, k) * c;
            g[k] = acc;
        }
        return g;
    }

    void forward_solve(Eigen::VectorXd& v) const {  // L v = rhs, in place
        for (int i = 0; i < q_; ++i) {
            double acc = v[i];
            for (int j = 0; j < i; ++j) acc -= L_(i, j) * v[j];
            v[i] = acc / L_(i, i);
        }
    }

    void backward_solve(Eigen::VectorXd& v) const {  // L^T v = rhs, in place
        for (int i = q_ - 1; i >= 0; --i) {
            double acc = v[i];
            for (int j = i + 1; j < q_; ++j) acc -= L_(j, i) * v[j];
            v[i] = acc / L_(i, i);
        }
    }

    // lambda = (N^T N)^{-1} (N^T w - b), y = w - N lambda, one refinement pass.
    void solve_kkt() {
        y_ = w_;
        if (q_ == 0) {
            lambda_.clear();
            return;
        }
        Eigen::VectorXd rhs(q_);
        for (int k = 0; k < q_; ++k)
            rhs[k] = N_.col(k).head(poly_->dim()).dot(w_) - rhs_[active_[k]];
        Eigen::VectorXd lam = rhs;
        forward_solve(lam);
        backward_solve(lam);
        // refinement: r = rhs - G lam, computed through N
        Eigen::VectorXd nl = N_.leftCols(q_) * lam;
        Eigen::VectorXd resid(q_);
        for (int k = 0; k < q_; ++k)
            resid[k] = rhs[k] - N_.col(k).head(poly_->dim()).dot(nl);
        forward_solve(resid);
        backward_solve(resid);
        lam += resid;
        lambda_.assign(lam.data(), lam.data() + q_);
        y_.noalias() -= N_.leftCols(q_) * lam;
    }

    void install_equalities(int& changes) {
        for (int j = 0; j < poly_->num_rows(); ++j) {
            if (!poly_->rows[j].equality || in_active_[j]) continue;
            if (!append_factor(j)) {
                // dependent equality: consistent duplicates are redundant
                solve_kkt();
                if (std::abs(row_value(j) - rhs_[j]) > feas_tol_ * 10)
                    throw InfeasibleSetError(
                        "inconsistent equality rows in set of owner " +
                            std::to_string(poly_->owner),
                        {poly_->rows[j].label});
                continue;
            }
            ++changes;
        }
        equalities_installed_ = true;
    }

    // Appends row j to the active set if independent; returns false otherwise.
    bool append_factor(int j) {
        const int n = poly_->dim();
        Eigen::VectorXd g = nt_times(normals_[j]);
        forward_solve_partial(g);
        const double delta = 1.0 - g.squaredNorm();  // rows are unit norm
        // looser than the activation test so a direction that passed there
        // cannot be rejected here by roundoff
        if (delta < 0.5 * indep_tol_) return false;
        N_.col(q_).head(n).setZero();
        for (const auto& [idx, c] : normals_[j]) N_(idx, q_) = c;
        for (int k = 0; k < q_; ++k) L_(q_, k) = g[k];
        L_(q_, q_) = std::sqrt(delta);
        active_.push_back(j);
        lambda_.push_back(0.0);
        in_active_[j] = true;
        ++q_;
        return true;
    }

    void forward_solve_partial(Eigen::VectorXd& v) const {
        for (int i = 0; i < q_; ++i) {
            double acc = v[i];
            for (int j = 0; j < i; ++j) acc -= L_(i, j) * v[j];
            v[i] = acc / L_(i, i);
        }
    }

    void drop(int pos) {
        const int n = poly_->dim();
        in_active_[active_[pos]] = false;
        // save the subdiagonal column being removed, for the rank-1 fix-up
        const int m = q_ - pos - 1;
        Eigen::VectorXd beta(m);
        for (int i = 0; i < m; ++i) beta[i] = L_(pos + 1 + i, pos);
        // compact N, L, active, lambda
        for (int k = pos; k < q_ - 1; ++k) N_.col(k).head(n) = N_.col(k + 1).head(n);
        for (int i = pos; i < q_ - 1; ++i)
            for (int j = 0; j < q_; ++j) L_(i, j) = L_(i + 1, j);
        for (int j = pos; j < q_ - 1; ++j)
            for (int i = 0; i < q_ - 1; ++i) L_(i, j) = L_(i, j + 1);
        active_.erase(active_.begin() + pos);
        lambda_.erase(lambda_.begin() + pos);
        --q_;
        // rank-1 update of the trailing block: L33 L33^T += beta beta^T
        for (int k = 0; k < m; ++k) {
            const int row = pos + k;
            const double lkk = L_(row, row);
            const double r = std::hypot(lkk, beta[k]);
            const double c = lkk / r;
            const double s = beta[k] / r;
            L_(row, row) = r;
            for (int i = k + 1; i < m; ++i) {
                const double t = L_(pos + i, row);
                L_(pos + i, row) = c * t + s * beta[i];
                beta[i] = c * beta[i] - s * t;
            }
        }
    }

    void refactor() {
        std::vector<int> rows = active_;
        active_.clear();
        lambda_.clear();
        std::fill(in_active_.begin(), in_active_.end(), false);
        q_ = 0;
        for (int j : rows) append_factor(j);
    }

    // Goldfarb-Idnani activation of violated row p.
    void activate(int p, int& changes) {
        const SparseVec& a = normals_[p];
        double lambda_p = 0.0;
        const int guard_limit = 4 * (q_ + 2) + 16;
        for (int guard = 0; guard < guard_limit; ++guard) {
            Eigen::VectorXd r;
            Eigen::VectorXd z = Eigen::VectorXd::Zero(poly_->dim());
            for (const auto& [idx, c] : a) z[idx] = c;
            if (q_ > 0) {
                Eigen::VectorXd g = nt_times(a);
                r = g;
                forward_solve(r);
                backward_solve(r);
                z.noalias() -= N_.leftCols(q_) * r;
            } else {
                r.resize(0);
            }
            const double z2 = z.squaredNorm();

            // nearest blocking constraint in the dual
            int block = -1;
            double t_block = std::numeric_limits<double>::infinity();
            for (int k = 0; k < q_; ++k) {
                if (poly_->rows[active_[k]].equality) continue;
                if (r[k] > blocking_tol_) {
                    const double t = lambda_[k] / r[k];
                    if (t < t_block) {
                        t_block = t;
                        block = k;
                    }
                }
            }

            if (z2 > indep_tol_) {
                const double v = row_value(p) - rhs_[p];
                if (v <= feas_tol_ && !poly_->rows[p].equality) return;  // resolved by earlier drops
                const double t_full = v / z2;
                const double t = std::min(t_full, t_block);
                for (int k = 0; k < q_; ++k) lambda_[k] -= t * r[k];
                lambda_p += t;
                y_.noalias() -= t * z;
                if (t_full <= t_block) {
                    if (append_factor(p)) {
                        lambda_.back() = lambda_p;
                        ++changes;
                    }
                    return;
                }
                drop(block);
                ++changes;
            } else {
                if (block < 0) {
                    std::vector<std::string> cert{poly_->rows[p].label};
                    for (int k = 0; k < q_; ++k)
                        if (std::abs(r[k]) > blocking_tol_)
                            cert.push_back(poly_->rows[active_[k]].label);
                    throw InfeasibleSetError(
                        "set of owner " + std::to_string(poly_->owner) +
                            " is infeasible (row '" + poly_->rows[p].label +
                            "' cannot be met)",
                        std::move(cert));
                }
                for (int k = 0; k < q_; ++k) lambda_[k] -= t_block * r[k];
                lambda_p += t_block;
                drop(block);
                ++changes;
            }
        }
        throw ProjectionLimitError("projection cycled while activating row '" +
                                       poly_->rows[p].label + "'",
                                   current_residual());
    }

    double current_residual() const {
        double res = 0.0;
        for (int j = 0; j < poly_->num_rows(); ++j) {
            const double v = row_value(j) - rhs_[j];
            res = std::max(res, poly_->rows[j].equality ? std::abs(v) : v);
        }
        for (int k = 0; k < q_; ++k)
            if (!poly_->rows[active_[k]].equality) res = std::max(res, -lambda_[k]);
        return res;
    }

    const Polyhedron* poly_;
    double tol_;
    double feas_tol_ = 1e-9;
    double dual_tol_ = 1e-10;
    double indep_tol_ = 1e-10;
    double blocking_tol_ = 1e-12;

    std::vector<SparseVec> normals_;  // unit-norm rows
    std::vector<double> inv_norm_;
    std::vector<double> rhs_;         // normalized right-hand sides

    Eigen::MatrixXd N_;  // active normals, dense columns
    Eigen::MatrixXd L_;  // Cholesky factor of N^T N
    std::vector<int> active_;
    std::vector<double> lambda_;
    std::vector<bool> in_active_;
    int q_ = 0;
    bool equalities_installed_ = false;

    Eigen::VectorXd w_;
    Eigen::VectorXd y_;
};

/// One-shot projection with a fresh projector.
inline ProjectionResult project(const Polyhedron& poly, const Eigen::VectorXd& point,
                                double tol = 1e-8) {
    Projector proj(poly, tol);
    return proj.project(point);
}

}  // namespace p2pflow
