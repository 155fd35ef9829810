#pragma once

// Result writers. All files are plain CSV with fixed headers and %.17g
// number formatting, so identical runs produce identical bytes.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "p2pflow/consensus.hpp"
#include "p2pflow/decision_index.hpp"
#include "p2pflow/objective.hpp"
#include "p2pflow/pricing.hpp"
#include "p2pflow/scenario.hpp"

namespace p2pflow {

class OutputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace io_detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw OutputError("cannot write '" + path.string() + "'");
    return out;
}

}  // namespace io_detail

/// One row per outer iteration; mse_vs_ref is empty when no reference
/// was supplied.
inline void write_trace_csv(const std::filesystem::path& path, const ConvergenceTrace& trace) {
    auto out = io_detail::open_out(path);
    out << "k,f,mse_vs_ref,max_violation,inner_residual_last,messages,bytes\n";
    for (const auto& r : trace.outer) {
        out << r.k << ',' << io_detail::fmt(r.objective) << ',';
        if (!std::isnan(r.mse_vs_ref)) out << io_detail::fmt(r.mse_vs_ref);
        out << ',' << io_detail::fmt(r.max_violation) << ','
            << io_detail::fmt(r.inner_residual_last()) << ',' << r.messages << ',' << r.bytes
            << '\n';
    }
}

/// Bilateral flows at every step, sellers' view: kw = P_ps(seller->buyer).
inline void write_trading_csv(const std::filesystem::path& path, const CommunityScenario& sc,
                              const DecisionIndex& index, const Eigen::VectorXd& x) {
    auto out = io_detail::open_out(path);
    out << "t,seller,buyer,kw\n";
    const int np = sc.num_prosumers();
    for (int t = 0; t < index.num_steps(); ++t)
        for (int i = 0; i < np; ++i)
            for (int j = 0; j < np; ++j) {
                if (i == j) continue;
                const double kw = x[index.block_start(i, VarKind::TradeSell, j) + t];
                out << t << ',' << sc.prosumers[i].id << ',' << sc.prosumers[j].id << ','
                    << io_detail::fmt(kw) << '\n';
            }
}

/// Community-level grid exchange with and without trading: excess supply
/// is the total power sold to the grid, demand the total bought.
inline void write_supply_demand_csv(const std::filesystem::path& path,
                                    const CommunityScenario& sc, const DecisionIndex& index,
                                    const Eigen::VectorXd& with_trading,
                                    const Eigen::VectorXd& without_trading) {
    auto out = io_detail::open_out(path);
    out << "t,excess_supply_with,excess_supply_without,demand_with,demand_without\n";
    for (int t = 0; t < index.num_steps(); ++t) {
        double sw = 0, so = 0, dw = 0, doff = 0;
        for (int i = 0; i < sc.num_prosumers(); ++i) {
            sw += with_trading[index.block_start(i, VarKind::GridSell) + t];
            so += without_trading[index.block_start(i, VarKind::GridSell) + t];
            dw += with_trading[index.block_start(i, VarKind::GridBuy) + t];
            doff += without_trading[index.block_start(i, VarKind::GridBuy) + t];
        }
        out << t << ',' << io_detail::fmt(sw) << ',' << io_detail::fmt(so) << ','
            << io_detail::fmt(dw) << ',' << io_detail::fmt(doff) << '\n';
    }
}

/// Clearing prices per ordered pair; inactive pairs carry the window
/// midpoint and direction "none".
inline void write_prices_csv(const std::filesystem::path& path, const CommunityScenario& sc,
                             const PriceVector& prices) {
    auto out = io_detail::open_out(path);
    out << "t,i,j,lambda,active_direction\n";
    const double mid = 0.5 * (sc.tariffs.lambda_min + sc.tariffs.lambda_max);
    const int np = sc.num_prosumers();
    const int T = sc.num_steps();
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < np; ++i)
            for (int j = 0; j < np; ++j) {
                if (i == j) continue;
                const int k = prices.index.locate(i, j, t);
                double lambda = mid;
                std::string dir = "none";
                if (k >= 0) {
                    lambda = prices.values.size() ? prices.values[k] : mid;
                    const auto& e = prices.index.entry(k);
                    const bool sell = e.sell_power > prices.index.activity_tol();
                    const bool buy = e.buy_power > prices.index.activity_tol();
                    dir = sell && buy ? "both" : sell ? "sell" : buy ? "buy" : "none";
                }
                out << t << ',' << sc.prosumers[i].id << ',' << sc.prosumers[j].id << ','
                    << io_detail::fmt(lambda) << ',' << dir << '\n';
            }
}

/// The four standard result files of a completed run.
inline void write_outputs(const std::filesystem::path& out_dir, const CommunityScenario& sc,
                          const DecisionIndex& index, const Eigen::VectorXd& solution,
                          const Eigen::VectorXd& no_trade_solution, const PriceVector& prices,
                          const ConvergenceTrace& trace) {
    std::filesystem::create_directories(out_dir);
    write_trace_csv(out_dir / "trace.csv", trace);
    write_trading_csv(out_dir / "trading_matrix.csv", sc, index, solution);
    write_supply_demand_csv(out_dir / "supply_demand.csv", sc, index, solution,
                            no_trade_solution);
    write_prices_csv(out_dir / "prices.csv", sc, prices);
}

/// Full decision vector with descriptors, exact to the last bit.
inline void write_solution_csv(const std::filesystem::path& path, const CommunityScenario& sc,
                               const DecisionIndex& index, const Eigen::VectorXd& x) {
    auto out = io_detail::open_out(path);
    out << "offset,kind,prosumer,device,t,value_kw\n";
    for (int r = 0; r < index.total_len(); ++r) {
        const VarRef& d = index.describe(r);
        out << r << ',' << to_string(d.kind) << ',' << sc.prosumers[d.prosumer].id << ','
            << d.device << ',' << d.step << ',' << io_detail::fmt(x[r]) << '\n';
    }
}

inline Eigen::VectorXd read_solution_csv(const std::filesystem::path& path,
                                         const DecisionIndex& index) {
    std::ifstream in(path);
    if (!in) throw OutputError("cannot read solution file '" + path.string() + "'");
    std::string line;
    std::getline(in, line);  // header
    Eigen::VectorXd x = Eigen::VectorXd::Zero(index.total_len());
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        int offset = -1;
        const char* s = line.c_str();
        char* end = nullptr;
        offset = static_cast<int>(std::strtol(s, &end, 10));
        const char* last_comma = std::strrchr(s, ',');
        if (!last_comma || offset < 0 || offset >= index.total_len())
            throw OutputError("bad solution row: " + line);
        x[offset] = std::strtod(last_comma + 1, nullptr);
        ++rows;
    }
    if (rows != index.total_len())
        throw OutputError("solution file has " + std::to_string(rows) + " rows, expected " +
                          std::to_string(index.total_len()));
    return x;
}

}  // namespace p2pflow
