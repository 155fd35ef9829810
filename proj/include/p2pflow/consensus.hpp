#pragma once

// Decentralized inner-outer solver. The outer iteration is a gradient
// step on a separable objective, taken by each agent on the variables it
// owns; the inner iteration realizes the averaged projection onto the
// intersection of the agents' sets through peer-to-peer messages only:
// each agent projects onto its own set, shares updated coupled variables
// with the neighbors of those variables, and averages. A synchronous bus
// with deterministic delivery order makes runs reproducible and lets
// tests audit message locality.

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "p2pflow/decision_index.hpp"
#include "p2pflow/objective.hpp"
#include "p2pflow/polyhedron.hpp"
#include "p2pflow/projection.hpp"
#include "p2pflow/scenario.hpp"

namespace p2pflow {

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Problem description consumed by the engine
// ---------------------------------------------------------------------------

/// A consensus problem: one polyhedron per agent over a shared flat
/// index, a separable quadratic objective, and for every offset the set
/// of agents whose constraint sets reference it (its neighbor set).
/// Both scheduling stages and the test toys instantiate this.
struct ConsensusProblem {
    int num_agents = 0;
    int dimension = 0;
    std::vector<int> owner;                        // per offset
    std::vector<char> coupled;                     // per offset
    std::vector<std::vector<int>> neighbor_sets;   // per offset, sorted; {owner} if uncoupled
    SeparableQuadratic objective;
    std::vector<Polyhedron> sets;                  // per agent
};

/// Structural checks: neighbor tables are symmetric under coupling and
/// every set touches only its own variables plus coupled variables whose
/// neighbor set contains it.
inline void validate_problem(const ConsensusProblem& prob) {
    if (static_cast<int>(prob.sets.size()) != prob.num_agents)
        throw SolverError("problem: one set per agent required");
    for (int r = 0; r < prob.dimension; ++r) {
        const auto& nc = prob.neighbor_sets[r];
        if (!std::is_sorted(nc.begin(), nc.end()))
            throw SolverError("problem: neighbor set of offset " + std::to_string(r) +
                              " is not sorted");
        if (!std::binary_search(nc.begin(), nc.end(), prob.owner[r]))
            throw SolverError("problem: owner missing from neighbor set of offset " +
                              std::to_string(r));
        if (!prob.coupled[r] && nc.size() != 1)
            throw SolverError("problem: uncoupled offset " + std::to_string(r) +
                              " lists foreign neighbors");
    }
    for (int i = 0; i < prob.num_agents; ++i) {
        for (int off : prob.sets[i].support) {
            if (prob.coupled[off]) {
                const auto& nc = prob.neighbor_sets[off];
                if (!std::binary_search(nc.begin(), nc.end(), i))
                    throw SolverError("problem: set of agent " + std::to_string(i) +
                                      " references coupled offset " + std::to_string(off) +
                                      " outside its neighbor set");
            } else if (prob.owner[off] != i) {
                throw SolverError("problem: set of agent " + std::to_string(i) +
                                  " references private offset " + std::to_string(off) +
                                  " of agent " + std::to_string(prob.owner[off]));
            }
        }
    }
}

// Shared arithmetic for the agent-side and replay-side updates; both must
// produce identical bits, so the grouping lives in exactly one place.
inline double gradient_step_value(double x, double quad, double lin, double learning_rate_l) {
    return x - (2.0 * quad * x + lin) / learning_rate_l;
}

inline double averaged_update(double w, int num_agents, std::span<const double> member_values) {
    double acc = static_cast<double>(num_agents - static_cast<int>(member_values.size())) * w;
    for (double v : member_values) acc += v;
    return acc / static_cast<double>(num_agents);
}

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

enum class RoundPhase : std::uint8_t { PostGradient, PostProjection };

struct Message {
    int from = -1;
    int to = -1;
    int outer_k = 0;
    int inner_d = -1;  // -1 for the gradient phase
    RoundPhase phase = RoundPhase::PostGradient;
    std::vector<std::pair<int, double>> payload;  // (global offset, value)

    std::size_t wire_bytes() const { return 16 + 16 * payload.size(); }
};

/// Synchronous message bus. Posting validates that every payload offset
/// may legally travel to the recipient; delivery happens when the runner
/// flushes the round, in ascending sender order.
class MessageBus {
public:
    explicit MessageBus(const ConsensusProblem* prob) : prob_(prob) {}

    void post(Message m) {
        if (m.payload.empty())
            throw SolverError("bus: empty payload from agent " + std::to_string(m.from));
        if (m.to == m.from || m.to < 0 || m.to >= prob_->num_agents)
            throw SolverError("bus: bad recipient " + std::to_string(m.to));
        for (const auto& [off, value] : m.payload) {
            const auto& nc = prob_->neighbor_sets[off];
            if (!std::binary_search(nc.begin(), nc.end(), m.to))
                throw SolverError("bus: offset " + std::to_string(off) +
                                  " sent to non-neighbor " + std::to_string(m.to));
            if (!std::binary_search(nc.begin(), nc.end(), m.from))
                throw SolverError("bus: offset " + std::to_string(off) +
                                  " sent by non-neighbor " + std::to_string(m.from));
        }
        messages_ += 1;
        bytes_ += m.wire_bytes();
        if (log_sink) log_sink(m);
        pending_.push_back(std::move(m));
    }

    /// Messages for one recipient, ascending sender id.
    std::vector<const Message*> inbox(int to) const {
        std::vector<const Message*> in;
        for (const auto& m : pending_)
            if (m.to == to) in.push_back(&m);
        std::stable_sort(in.begin(), in.end(),
                         [](const Message* a, const Message* b) { return a->from < b->from; });
        return in;
    }

    void clear_round() { pending_.clear(); }

    long long total_messages() const { return messages_; }
    long long total_bytes() const { return bytes_; }

    std::function<void(const Message&)> log_sink;

private:
    const ConsensusProblem* prob_;
    std::vector<Message> pending_;
    long long messages_ = 0;
    long long bytes_ = 0;
};

// ---------------------------------------------------------------------------
// Config and trace
// ---------------------------------------------------------------------------

struct SolverConfig {
    double learning_rate_l = 1.0;  // L; the step is 1/L
    int n_inner = 100;             // N0
    // when positive, the schedule N0 + ceil(c*log(k+2)) replaces the constant
    double n_inner_log_c = 0.0;
    int n_outer = 100;
    double outer_tol = 0.0;  // stop when ||X_{k+1}-X_k||_inf falls below; 0 disables
    double projection_tol = 1e-8;
    double divergence_limit = 1e9;
    int workers = 1;
    Eigen::VectorXd initial;  // empty = zero start

    int inner_rounds(int k) const {
        if (n_inner_log_c > 0.0)
            return n_inner + static_cast<int>(std::ceil(n_inner_log_c * std::log(k + 2.0)));
        return n_inner;
    }

    void check() const {
        if (learning_rate_l <= 0) throw SolverError("config: learning_rate_l must be positive");
        if (n_inner < 1) throw SolverError("config: n_inner must be at least 1");
        if (n_outer < 1) throw SolverError("config: n_outer must be at least 1");
    }
};

struct OuterRecord {
    int k = 0;
    double objective = 0.0;
    double mse_vs_ref = std::numeric_limits<double>::quiet_NaN();
    double max_violation = 0.0;
    std::vector<double> inner_residuals;  // ||w_{d+1}-w_d||_2 per inner round
    long long messages = 0;               // this outer iteration
    long long bytes = 0;

    double inner_residual_last() const {
        return inner_residuals.empty() ? 0.0 : inner_residuals.back();
    }
};

struct ConvergenceTrace {
    std::vector<OuterRecord> outer;
};

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// Per-prosumer view of the shared vector: the variables the agent owns
/// plus every offset its constraint set references, with static tables
/// describing who contributes to each coupled offset's average and who
/// must be told about updates.
struct AgentState {
    int id = -1;
    const Polyhedron* set = nullptr;
    std::optional<Projector> projector;

    std::vector<int> view_offsets;  // sorted global offsets
    Eigen::VectorXd view;           // values, aligned with view_offsets

    // projection scatter: view position of each support entry
    std::vector<int> support_view_pos;
    Eigen::VectorXd proj_local;   // scratch: support-local input
    Eigen::VectorXd proj_result;  // scratch: support-local output

    // averaging tables
    struct CoupledEntry {
        int view_pos;
        int global_offset;
        int slot_begin;  // into `slots`, one per neighbor-set member (ascending)
        int nc_size;
    };
    std::vector<CoupledEntry> coupled_entries;
    std::vector<double> slots;
    // own projection writes: (slot, support index)
    std::vector<std::pair<int, int>> own_slot_fills;
    // incoming writes: sorted by (offset, sender) for binary search
    struct IncomingKey {
        int offset;
        int from;
        int slot;
        bool operator<(const IncomingKey& o) const {
            return offset != o.offset ? offset < o.offset : from < o.from;
        }
    };
    std::vector<IncomingKey> incoming_keys;
    // uncoupled updates: (view_pos, support index or -1 when this set
    // leaves the variable untouched)
    std::vector<std::pair<int, int>> uncoupled_updates;

    std::vector<int> own_view_pos;  // view positions of owned offsets
    std::vector<int> own_offsets;

    struct Outgoing {
        int to;
        std::vector<std::pair<int, int>> entries;  // (global offset, support index)
    };
    std::vector<Outgoing> proj_outgoing;
    struct OutgoingGrad {
        int to;
        std::vector<std::pair<int, int>> entries;  // (global offset, view position)
    };
    std::vector<OutgoingGrad> grad_outgoing;

    int view_pos(int offset) const {
        auto it = std::lower_bound(view_offsets.begin(), view_offsets.end(), offset);
        if (it == view_offsets.end() || *it != offset) return -1;
        return static_cast<int>(it - view_offsets.begin());
    }
};

class ConsensusRunner {
public:
    ConsensusRunner(const ConsensusProblem& prob, const SolverConfig& cfg)
        : prob_(&prob), cfg_(cfg), bus_(&prob) {
        cfg_.check();
        validate_problem(prob);
        build_agents();
        Eigen::VectorXd x0 = cfg_.initial.size() == 0
                                 ? Eigen::VectorXd::Zero(prob.dimension)
                                 : cfg_.initial;
        if (x0.size() != prob.dimension)
            throw SolverError("config: initial point has wrong dimension");
        load_views(x0);
    }

    MessageBus& bus() { return bus_; }
    const std::vector<AgentState>& agents() const { return agents_; }

    /// Owner values of every offset, gathered into one global vector.
    Eigen::VectorXd assemble() const {
        Eigen::VectorXd x(prob_->dimension);
        for (int r = 0; r < prob_->dimension; ++r)
            x[r] = agents_[prob_->owner[r]].view[owner_view_pos_[r]];
        return x;
    }

    /// One gradient step on owned variables plus the coupled-variable
    /// broadcast that refreshes every mirror.
    void gradient_round(int k) {
        for (auto& a : agents_) {
            for (size_t idx = 0; idx < a.own_offsets.size(); ++idx) {
                const int r = a.own_offsets[idx];
                const int vp = a.own_view_pos[idx];
                a.view[vp] = gradient_step_value(a.view[vp], prob_->objective.quad[r],
                                                 prob_->objective.lin[r],
                                                 cfg_.learning_rate_l);
            }
        }
        for (auto& a : agents_) {
            for (const auto& out : a.grad_outgoing) {
                Message m;
                m.from = a.id;
                m.to = out.to;
                m.outer_k = k;
                m.inner_d = -1;
                m.phase = RoundPhase::PostGradient;
                m.payload.reserve(out.entries.size());
                for (const auto& [off, vp] : out.entries)
                    m.payload.emplace_back(off, a.view[vp]);
                bus_.post(std::move(m));
            }
        }
        for (auto& a : agents_) {
            for (const Message* m : bus_.inbox(a.id))
                for (const auto& [off, value] : m->payload) {
                    const int vp = a.view_pos(off);
                    if (vp >= 0) a.view[vp] = value;
                }
        }
        bus_.clear_round();
    }

    /// One averaged-projection round: project, share coupled results with
    /// each variable's neighbor set, average.
    void inner_round(int k, int d) {
        run_projections();
        for (auto& a : agents_) {
            // defaults: a set that does not reference an offset leaves it
            // unchanged, so its contribution is the pre-round value
            for (const auto& ce : a.coupled_entries)
                for (int s = 0; s < ce.nc_size; ++s)
                    a.slots[ce.slot_begin + s] = a.view[ce.view_pos];
            for (const auto& [slot, sidx] : a.own_slot_fills)
                a.slots[slot] = a.proj_result[sidx];
        }
        for (auto& a : agents_) {
            for (const auto& out : a.proj_outgoing) {
                Message m;
                m.from = a.id;
                m.to = out.to;
                m.outer_k = k;
                m.inner_d = d;
                m.phase = RoundPhase::PostProjection;
                m.payload.reserve(out.entries.size());
                for (const auto& [off, sidx] : out.entries)
                    m.payload.emplace_back(off, a.proj_result[sidx]);
                bus_.post(std::move(m));
            }
        }
        for (auto& a : agents_) {
            for (const Message* m : bus_.inbox(a.id)) {
                for (const auto& [off, value] : m->payload) {
                    AgentState::IncomingKey probe{off, m->from, 0};
                    auto it = std::lower_bound(a.incoming_keys.begin(), a.incoming_keys.end(),
                                               probe);
                    if (it != a.incoming_keys.end() && it->offset == off && it->from == m->from)
                        a.slots[it->slot] = value;
                }
            }
        }
        bus_.clear_round();
        for (auto& a : agents_) {
            for (const auto& [vp, sidx] : a.uncoupled_updates) {
                const double own = sidx >= 0 ? a.proj_result[sidx] : a.view[vp];
                a.view[vp] = averaged_update(a.view[vp], prob_->num_agents, {&own, 1});
            }
            for (const auto& ce : a.coupled_entries)
                a.view[ce.view_pos] = averaged_update(
                    a.view[ce.view_pos], prob_->num_agents,
                    {a.slots.data() + ce.slot_begin, static_cast<size_t>(ce.nc_size)});
        }
    }

    double projection_tol() const { return cfg_.projection_tol; }

private:
    void run_projections() {
        auto project_one = [&](AgentState& a) {
            if (a.set->empty_marker) {
                a.proj_result = a.proj_local;
                return;
            }
            for (size_t s = 0; s < a.support_view_pos.size(); ++s)
                a.proj_local[s] = a.view[a.support_view_pos[s]];
            a.proj_result = a.projector->project(a.proj_local).point;
        };
        const int nw = std::min<int>(cfg_.workers, static_cast<int>(agents_.size()));
        if (nw <= 1) {
            for (auto& a : agents_) project_one(a);
            return;
        }
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        std::vector<std::exception_ptr> errors(nw);
        for (int w = 0; w < nw; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (size_t i = next.fetch_add(1); i < agents_.size();
                         i = next.fetch_add(1))
                        project_one(agents_[i]);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    void load_views(const Eigen::VectorXd& x) {
        for (auto& a : agents_)
            for (size_t p = 0; p < a.view_offsets.size(); ++p)
                a.view[p] = x[a.view_offsets[p]];
    }

    void build_agents() {
        const auto& prob = *prob_;
        agents_.resize(prob.num_agents);
        owner_view_pos_.assign(prob.dimension, -1);
        for (int i = 0; i < prob.num_agents; ++i) {
            AgentState& a = agents_[i];
            a.id = i;
            a.set = &prob.sets[i];
            a.projector.emplace(prob.sets[i], cfg_.projection_tol);

            std::vector<int> offs = prob.sets[i].support;
            for (int r = 0; r < prob.dimension; ++r)
                if (prob.owner[r] == i) offs.push_back(r);
            std::sort(offs.begin(), offs.end());
            offs.erase(std::unique(offs.begin(), offs.end()), offs.end());
            a.view_offsets = std::move(offs);
            a.view = Eigen::VectorXd::Zero(a.view_offsets.size());

            a.support_view_pos.resize(prob.sets[i].support.size());
            for (size_t s = 0; s < prob.sets[i].support.size(); ++s)
                a.support_view_pos[s] = a.view_pos(prob.sets[i].support[s]);
            a.proj_local.resize(prob.sets[i].support.size());
            a.proj_result.resize(prob.sets[i].support.size());

            for (int r = 0; r < prob.dimension; ++r)
                if (prob.owner[r] == i) {
                    a.own_offsets.push_back(r);
                    a.own_view_pos.push_back(a.view_pos(r));
                }
        }

        // support membership lookup for sender tables
        auto in_support = [&](int agent, int off) {
            const auto& s = prob.sets[agent].support;
            return std::binary_search(s.begin(), s.end(), off);
        };

        for (int i = 0; i < prob.num_agents; ++i) {
            AgentState& a = agents_[i];
            int slot_count = 0;
            for (size_t p = 0; p < a.view_offsets.size(); ++p) {
                const int r = a.view_offsets[p];
                if (prob.coupled[r]) {
                    const auto& nc = prob.neighbor_sets[r];
                    AgentState::CoupledEntry ce;
                    ce.view_pos = static_cast<int>(p);
                    ce.global_offset = r;
                    ce.slot_begin = slot_count;
                    ce.nc_size = static_cast<int>(nc.size());
                    slot_count += ce.nc_size;
                    a.coupled_entries.push_back(ce);
                    for (int m = 0; m < ce.nc_size; ++m) {
                        const int member = nc[m];
                        if (member == i) {
                            const int sidx = prob.sets[i].local_of(r);
                            if (sidx >= 0)
                                a.own_slot_fills.emplace_back(ce.slot_begin + m, sidx);
                        } else if (in_support(member, r)) {
                            a.incoming_keys.push_back(
                                AgentState::IncomingKey{r, member, ce.slot_begin + m});
                        }
                        // otherwise that member's projection leaves r at the
                        // pre-round value, which is the slot default
                    }
                } else if (prob.owner[r] == i) {
                    a.uncoupled_updates.emplace_back(static_cast<int>(p),
                                                     prob.sets[i].local_of(r));
                }
            }
            a.slots.assign(slot_count, 0.0);
            std::sort(a.incoming_keys.begin(), a.incoming_keys.end());

            // post-projection sends: coupled support offsets to every other
            // member of their neighbor sets
            std::vector<std::vector<std::pair<int, int>>> to(prob.num_agents);
            for (size_t s = 0; s < prob.sets[i].support.size(); ++s) {
                const int r = prob.sets[i].support[s];
                if (!prob.coupled[r]) continue;
                for (int member : prob.neighbor_sets[r])
                    if (member != i) to[member].emplace_back(r, static_cast<int>(s));
            }
            for (int j = 0; j < prob.num_agents; ++j)
                if (!to[j].empty())
                    a.proj_outgoing.push_back(AgentState::Outgoing{j, std::move(to[j])});

            // post-gradient sends: owned coupled offsets to their neighbors
            std::vector<std::vector<std::pair<int, int>>> gto(prob.num_agents);
            for (size_t idx = 0; idx < a.own_offsets.size(); ++idx) {
                const int r = a.own_offsets[idx];
                if (!prob.coupled[r]) continue;
                for (int member : prob.neighbor_sets[r])
                    if (member != i) gto[member].emplace_back(r, a.own_view_pos[idx]);
            }
            for (int j = 0; j < prob.num_agents; ++j)
                if (!gto[j].empty())
                    a.grad_outgoing.push_back(AgentState::OutgoingGrad{j, std::move(gto[j])});
        }

        for (int r = 0; r < prob.dimension; ++r)
            owner_view_pos_[r] = agents_[prob.owner[r]].view_pos(r);
    }

    const ConsensusProblem* prob_;
    SolverConfig cfg_;
    MessageBus bus_;
    std::vector<AgentState> agents_;
    std::vector<int> owner_view_pos_;
};

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct RunResult {
    Eigen::VectorXd solution;
    ConvergenceTrace trace;
};

/// Max inequality violation / equality residual of x over all agent sets.
inline double sets_max_violation(const ConsensusProblem& prob, const Eigen::VectorXd& x) {
    double worst = 0.0;
    for (const auto& poly : prob.sets) {
        for (int j = 0; j < poly.num_rows(); ++j) {
            double acc = 0.0;
            for (const auto& [off, c] : poly.rows[j].terms) acc += c * x[off];
            const double v = acc - poly.rows[j].rhs;
            worst = std::max(worst, poly.rows[j].equality ? std::abs(v) : v);
        }
    }
    return worst;
}

/// Runs the inner-outer algorithm. `observer`, when given, sees the
/// assembled state after the gradient round (d = -1) and after every
/// inner round.
inline RunResult run_consensus(
    const ConsensusProblem& prob, const SolverConfig& cfg,
    const Eigen::VectorXd* reference = nullptr,
    const std::function<void(int k, int d, const Eigen::VectorXd&)>& observer = nullptr) {
    ConsensusRunner runner(prob, cfg);
    ConvergenceTrace trace;
    Eigen::VectorXd current = runner.assemble();
    Eigen::VectorXd previous = current;

    long long seen_messages = 0, seen_bytes = 0;
    for (int k = 0; k < cfg.n_outer; ++k) {
        previous = current;
        runner.gradient_round(k);
        if (observer) observer(k, -1, runner.assemble());
        OuterRecord rec;
        rec.k = k;
        Eigen::VectorXd w = runner.assemble();
        if (w.cwiseAbs().maxCoeff() > cfg.divergence_limit)
            throw SolverError(
                "gradient step left the sane range; check the learning rate "
                "against the objective's quadratic coefficients");
        const int rounds = cfg.inner_rounds(k);
        rec.inner_residuals.reserve(rounds);
        for (int d = 0; d < rounds; ++d) {
            runner.inner_round(k, d);
            Eigen::VectorXd w_next = runner.assemble();
            rec.inner_residuals.push_back((w_next - w).norm());
            if (observer) observer(k, d, w_next);
            w.swap(w_next);
        }
        current = w;

        rec.objective = prob.objective.value(current);
        if (reference)
            rec.mse_vs_ref = (current - *reference).squaredNorm() / prob.dimension;
        rec.max_violation = sets_max_violation(prob, current);
        rec.messages = runner.bus().total_messages() - seen_messages;
        rec.bytes = runner.bus().total_bytes() - seen_bytes;
        seen_messages = runner.bus().total_messages();
        seen_bytes = runner.bus().total_bytes();
        trace.outer.push_back(std::move(rec));

        if (current.cwiseAbs().maxCoeff() > cfg.divergence_limit)
            throw SolverError(
                "iterates exceeded the divergence limit; check the learning rate "
                "against the objective's quadratic coefficients");
        if (cfg.outer_tol > 0 &&
            (current - previous).lpNorm<Eigen::Infinity>() < cfg.outer_tol)
            break;
    }
    return RunResult{std::move(current), std::move(trace)};
}

}  // namespace p2pflow
