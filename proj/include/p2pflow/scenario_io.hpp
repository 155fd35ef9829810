#pragma once

// Scenario document handling: a single versioned JSON file per
// community, with profile series inline, as scalars (broadcast over the
// horizon) or in referenced single-column CSV files. Loading is strict:
// unknown fields and length mismatches are rejected with the offending
// field path. Writing canonicalizes (profiles inlined, keys sorted), so
// load(write(load(f))) is the identity.
//
// Also hosts the bundled IEEE-13-bus community used by the case study.
// Its load and generation day shapes approximate the published ones;
// device, tariff and solver parameters follow the published table.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "p2pflow/scenario.hpp"

namespace p2pflow {

struct SolverDefaults {
    std::optional<double> learning_rate_inv;  // 1/L
    std::optional<int> n_inner;
    std::optional<int> n_outer;
};

struct ScenarioFile {
    int schema_version = 1;
    CommunityScenario scenario;
    SolverDefaults solver;
};

namespace io_detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::vector<std::string>& allowed,
                           const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) ok = true;
        if (!ok)
            throw ScenarioError(where + ": unknown field '" + it.key() + "'");
    }
}

inline double need_number(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.contains(key)) throw ScenarioError(where + ": missing field '" + key + "'");
    if (!obj[key].is_number()) throw ScenarioError(where + "." + key + ": expected a number");
    return obj[key].get<double>();
}

inline double number_or(const json& obj, const std::string& key, double fallback) {
    if (!obj.contains(key)) return fallback;
    return obj[key].get<double>();
}

inline std::vector<double> read_profile_csv(const std::filesystem::path& path, int expect,
                                            const std::string& where) {
    std::ifstream in(path);
    if (!in)
        throw ScenarioError(where + ": cannot open profile file '" + path.string() + "'");
    std::vector<double> values;
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        try {
            values.push_back(std::stod(line.substr(first)));
        } catch (const std::exception&) {
            throw ScenarioError(where + ": bad value '" + line + "' in '" + path.string() + "'");
        }
    }
    if (static_cast<int>(values.size()) != expect)
        throw ScenarioError(where + ": profile '" + path.string() + "' has " +
                            std::to_string(values.size()) + " rows, expected " +
                            std::to_string(expect));
    return values;
}

/// A series field: array, scalar broadcast, or {"file": "relative.csv"}.
inline std::vector<double> read_series(const json& v, int num_steps,
                                       const std::filesystem::path& base_dir,
                                       const std::string& where) {
    if (v.is_number()) return std::vector<double>(num_steps, v.get<double>());
    if (v.is_array()) {
        if (static_cast<int>(v.size()) != num_steps)
            throw ScenarioError(where + ": series has " + std::to_string(v.size()) +
                                " entries, expected " + std::to_string(num_steps));
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) throw ScenarioError(where + ": series entries must be numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }
    if (v.is_object()) {
        reject_unknown(v, {"file"}, where);
        if (!v.contains("file") || !v["file"].is_string())
            throw ScenarioError(where + ": profile reference needs a 'file' string");
        return read_profile_csv(base_dir / v["file"].get<std::string>(), num_steps, where);
    }
    throw ScenarioError(where + ": expected a number, an array or a {\"file\": ...} reference");
}

inline std::vector<double> series_or(const json& obj, const std::string& key, double fallback,
                                     int num_steps, const std::filesystem::path& base_dir,
                                     const std::string& where) {
    if (!obj.contains(key)) return std::vector<double>(num_steps, fallback);
    return read_series(obj[key], num_steps, base_dir, where + "." + key);
}

}  // namespace io_detail

inline ScenarioFile parse_scenario_json(const nlohmann::json& root,
                                        const std::filesystem::path& base_dir) {
    using namespace io_detail;
    ScenarioFile file;
    reject_unknown(root, {"schema_version", "name", "time", "tariffs", "stage1_trade_price",
                          "prosumers", "topology", "solver"},
                   "scenario");
    if (!root.contains("schema_version") || !root["schema_version"].is_number_integer())
        throw ScenarioError("scenario: missing integer 'schema_version'");
    file.schema_version = root["schema_version"].get<int>();
    if (file.schema_version != 1)
        throw ScenarioError("scenario: unsupported schema_version " +
                            std::to_string(file.schema_version));

    CommunityScenario& sc = file.scenario;
    sc.name = root.value("name", std::string{});

    if (!root.contains("time")) throw ScenarioError("scenario: missing 'time'");
    const json& time = root["time"];
    reject_unknown(time, {"horizon_hours", "step_hours"}, "time");
    sc.time.horizon_hours = need_number(time, "horizon_hours", "time");
    sc.time.step_hours = need_number(time, "step_hours", "time");
    const int T = sc.time.num_steps();

    if (!root.contains("tariffs")) throw ScenarioError("scenario: missing 'tariffs'");
    const json& tf = root["tariffs"];
    reject_unknown(tf, {"lambda_gs", "lambda_gb", "lambda_min", "lambda_max", "lambda_o",
                        "lambda_d"},
                   "tariffs");
    sc.tariffs.lambda_gs = need_number(tf, "lambda_gs", "tariffs");
    sc.tariffs.lambda_gb = need_number(tf, "lambda_gb", "tariffs");
    // the grid terms are the rational price window when the file omits one
    sc.tariffs.lambda_min = number_or(tf, "lambda_min", sc.tariffs.lambda_gs);
    sc.tariffs.lambda_max = number_or(tf, "lambda_max", sc.tariffs.lambda_gb);
    sc.tariffs.lambda_o = number_or(tf, "lambda_o", 0.0);
    sc.tariffs.lambda_d = number_or(tf, "lambda_d", 0.0);

    sc.stage1_trade_price = number_or(root, "stage1_trade_price", 0.0);

    if (!root.contains("prosumers") || !root["prosumers"].is_array() ||
        root["prosumers"].empty())
        throw ScenarioError("scenario: 'prosumers' must be a nonempty array");
    std::vector<int> ids;
    for (size_t pi = 0; pi < root["prosumers"].size(); ++pi) {
        const json& pj = root["prosumers"][pi];
        const std::string where = "prosumers[" + std::to_string(pi) + "]";
        reject_unknown(pj, {"id", "inflexible_load", "nondispatchable_gen", "flexible_loads",
                            "storages", "diesels"},
                       where);
        ProsumerSpec p;
        p.id = pj.contains("id") ? pj["id"].get<int>() : static_cast<int>(pi) + 1;
        ids.push_back(p.id);
        p.inflexible_load = series_or(pj, "inflexible_load", 0.0, T, base_dir, where);
        p.nondispatchable_gen = series_or(pj, "nondispatchable_gen", 0.0, T, base_dir, where);
        if (pj.contains("flexible_loads"))
            for (size_t m = 0; m < pj["flexible_loads"].size(); ++m) {
                const json& fj = pj["flexible_loads"][m];
                const std::string fw = where + ".flexible_loads[" + std::to_string(m) + "]";
                reject_unknown(fj, {"p_min", "p_max", "energy_ref", "ref_profile", "beta1",
                                    "beta2"},
                               fw);
                FlexibleLoadSpec fl;
                fl.p_min = series_or(fj, "p_min", 0.0, T, base_dir, fw);
                fl.p_max = read_series(fj.at("p_max"), T, base_dir, fw + ".p_max");
                fl.energy_ref = need_number(fj, "energy_ref", fw);
                fl.ref_profile = series_or(fj, "ref_profile", 0.0, T, base_dir, fw);
                fl.beta1 = need_number(fj, "beta1", fw);
                fl.beta2 = need_number(fj, "beta2", fw);
                p.flexible_loads.push_back(std::move(fl));
            }
        if (pj.contains("storages"))
            for (size_t q = 0; q < pj["storages"].size(); ++q) {
                const json& sj = pj["storages"][q];
                const std::string sw = where + ".storages[" + std::to_string(q) + "]";
                reject_unknown(sj, {"p_charge_max", "p_discharge_max", "eta_c", "eta_d",
                                    "soc_min", "soc_max", "w0", "w_nominal", "w_day_min",
                                    "w_day_max", "lambda_ess"},
                               sw);
                StorageSpec es;
                es.p_charge_max = need_number(sj, "p_charge_max", sw);
                es.p_discharge_max = need_number(sj, "p_discharge_max", sw);
                es.eta_c = need_number(sj, "eta_c", sw);
                es.eta_d = need_number(sj, "eta_d", sw);
                es.soc_min = need_number(sj, "soc_min", sw);
                es.soc_max = need_number(sj, "soc_max", sw);
                es.w0 = need_number(sj, "w0", sw);
                es.w_nominal = need_number(sj, "w_nominal", sw);
                es.w_day_min = need_number(sj, "w_day_min", sw);
                es.w_day_max = need_number(sj, "w_day_max", sw);
                es.lambda_ess = number_or(sj, "lambda_ess", 0.0);
                p.storages.push_back(es);
            }
        if (pj.contains("diesels"))
            for (size_t d = 0; d < pj["diesels"].size(); ++d) {
                const json& dj = pj["diesels"][d];
                const std::string dw = where + ".diesels[" + std::to_string(d) + "]";
                reject_unknown(dj, {"p_min", "p_max", "ramp_min", "ramp_max", "p_initial",
                                    "lambda1", "lambda2"},
                               dw);
                DieselSpec de;
                de.p_min = series_or(dj, "p_min", 0.0, T, base_dir, dw);
                de.p_max = series_or(dj, "p_max", 10.0, T, base_dir, dw);
                de.ramp_min = series_or(dj, "ramp_min", -2.0, T, base_dir, dw);
                de.ramp_max = series_or(dj, "ramp_max", 2.0, T, base_dir, dw);
                de.p_initial = number_or(dj, "p_initial", 0.0);
                de.lambda1 = number_or(dj, "lambda1", 0.0);
                de.lambda2 = need_number(dj, "lambda2", dw);
                p.diesels.push_back(std::move(de));
            }
        sc.prosumers.push_back(std::move(p));
    }

    auto index_of_id = [&](int id, const std::string& where) {
        for (size_t k = 0; k < ids.size(); ++k)
            if (ids[k] == id) return static_cast<int>(k);
        throw ScenarioError(where + ": unknown prosumer id " + std::to_string(id));
    };

    if (!root.contains("topology")) throw ScenarioError("scenario: missing 'topology'");
    const json& topo = root["topology"];
    reject_unknown(topo, {"lines", "distance"}, "topology");
    if (topo.contains("lines"))
        for (size_t l = 0; l < topo["lines"].size(); ++l) {
            const json& lj = topo["lines"][l];
            const std::string lw = "topology.lines[" + std::to_string(l) + "]";
            reject_unknown(lj, {"id", "c_min", "c_max", "members"}, lw);
            LineSpec line;
            line.id = lj.contains("id") ? lj["id"].get<int>() : static_cast<int>(l) + 1;
            line.c_min = number_or(lj, "c_min", -100.0);
            line.c_max = number_or(lj, "c_max", 100.0);
            if (!lj.contains("members") || !lj["members"].is_array())
                throw ScenarioError(lw + ": needs a 'members' array of prosumer ids");
            for (const auto& m : lj["members"])
                line.members.push_back(index_of_id(m.get<int>(), lw));
            sc.topology.lines.push_back(std::move(line));
        }
    if (!topo.contains("distance"))
        throw ScenarioError("topology: missing 'distance' matrix");
    for (const auto& rowj : topo["distance"]) {
        std::vector<double> row;
        for (const auto& e : rowj) row.push_back(e.get<double>());
        sc.topology.distance.push_back(std::move(row));
    }

    if (root.contains("solver")) {
        const json& sj = root["solver"];
        reject_unknown(sj, {"learning_rate_inv", "n_inner", "n_outer"}, "solver");
        if (sj.contains("learning_rate_inv"))
            file.solver.learning_rate_inv = sj["learning_rate_inv"].get<double>();
        if (sj.contains("n_inner")) file.solver.n_inner = sj["n_inner"].get<int>();
        if (sj.contains("n_outer")) file.solver.n_outer = sj["n_outer"].get<int>();
    }

    validate(sc);
    return file;
}

inline nlohmann::json scenario_to_json(const ScenarioFile& file) {
    using nlohmann::json;
    const CommunityScenario& sc = file.scenario;
    json root;
    root["schema_version"] = file.schema_version;
    if (!sc.name.empty()) root["name"] = sc.name;
    root["time"] = {{"horizon_hours", sc.time.horizon_hours},
                    {"step_hours", sc.time.step_hours}};
    root["tariffs"] = {{"lambda_gs", sc.tariffs.lambda_gs},
                       {"lambda_gb", sc.tariffs.lambda_gb},
                       {"lambda_min", sc.tariffs.lambda_min},
                       {"lambda_max", sc.tariffs.lambda_max},
                       {"lambda_o", sc.tariffs.lambda_o},
                       {"lambda_d", sc.tariffs.lambda_d}};
    root["stage1_trade_price"] = sc.stage1_trade_price;
    root["prosumers"] = json::array();
    for (const auto& p : sc.prosumers) {
        json pj;
        pj["id"] = p.id;
        pj["inflexible_load"] = p.inflexible_load;
        pj["nondispatchable_gen"] = p.nondispatchable_gen;
        pj["flexible_loads"] = json::array();
        for (const auto& fl : p.flexible_loads)
            pj["flexible_loads"].push_back({{"p_min", fl.p_min},
                                            {"p_max", fl.p_max},
                                            {"energy_ref", fl.energy_ref},
                                            {"ref_profile", fl.ref_profile},
                                            {"beta1", fl.beta1},
                                            {"beta2", fl.beta2}});
        pj["storages"] = json::array();
        for (const auto& es : p.storages)
            pj["storages"].push_back({{"p_charge_max", es.p_charge_max},
                                      {"p_discharge_max", es.p_discharge_max},
                                      {"eta_c", es.eta_c},
                                      {"eta_d", es.eta_d},
                                      {"soc_min", es.soc_min},
                                      {"soc_max", es.soc_max},
                                      {"w0", es.w0},
                                      {"w_nominal", es.w_nominal},
                                      {"w_day_min", es.w_day_min},
                                      {"w_day_max", es.w_day_max},
                                      {"lambda_ess", es.lambda_ess}});
        pj["diesels"] = json::array();
        for (const auto& de : p.diesels)
            pj["diesels"].push_back({{"p_min", de.p_min},
                                     {"p_max", de.p_max},
                                     {"ramp_min", de.ramp_min},
                                     {"ramp_max", de.ramp_max},
                                     {"p_initial", de.p_initial},
                                     {"lambda1", de.lambda1},
                                     {"lambda2", de.lambda2}});
        root["prosumers"].push_back(std::move(pj));
    }
    json lines = nlohmann::json::array();
    for (const auto& line : sc.topology.lines) {
        json lj;
        lj["id"] = line.id;
        lj["c_min"] = line.c_min;
        lj["c_max"] = line.c_max;
        json members = json::array();
        for (int m : line.members) members.push_back(sc.prosumers[m].id);
        lj["members"] = std::move(members);
        lines.push_back(std::move(lj));
    }
    root["topology"] = {{"lines", std::move(lines)}, {"distance", sc.topology.distance}};
    json solver;
    if (file.solver.learning_rate_inv) solver["learning_rate_inv"] = *file.solver.learning_rate_inv;
    if (file.solver.n_inner) solver["n_inner"] = *file.solver.n_inner;
    if (file.solver.n_outer) solver["n_outer"] = *file.solver.n_outer;
    if (!solver.empty()) root["solver"] = std::move(solver);
    return root;
}

inline ScenarioFile load_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioError("scenario '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_scenario_json(root, std::filesystem::path(path).parent_path());
}

inline CommunityScenario load_scenario(const std::string& path) {
    return load_scenario_file(path).scenario;
}

inline void write_scenario_file(const ScenarioFile& file, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ScenarioError("cannot write scenario file '" + path + "'");
    out << scenario_to_json(file).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Bundled IEEE-13-bus community
// ---------------------------------------------------------------------------

namespace bundled_profiles {
// 12 two-hour steps covering one day. Shapes are approximations of the
// published figure: type 1 loads peak in the evening, type 2 loads at
// midday; both generation types follow a solar bell, type 2 with a
// nonzero overnight floor.
inline const std::vector<double> load_type1{3.0, 2.5, 2.0, 2.5, 3.5, 4.5,
                                            5.0, 5.5, 6.5, 8.0, 6.5, 4.5};
inline const std::vector<double> load_type2{2.0, 2.0, 2.5, 3.5, 5.0, 6.5,
                                            7.0, 6.5, 5.5, 4.5, 3.5, 2.5};
inline const std::vector<double> gen_type1{0.0, 0.0, 0.0, 1.0, 4.0, 8.0,
                                           10.0, 9.0, 6.0, 1.5, 0.0, 0.0};
inline const std::vector<double> gen_type2{1.0, 0.5, 0.5, 2.0, 5.5, 9.5,
                                           11.0, 10.0, 7.0, 2.5, 1.0, 1.0};
}  // namespace bundled_profiles

/// The case-study community: six prosumers on a radial feeder, one
/// flexible load and one storage each, diesel engines on the last two.
inline ScenarioFile bundled_ieee13() {
    using namespace bundled_profiles;
    ScenarioFile file;
    CommunityScenario& sc = file.scenario;
    sc.name = "ieee13_p2p";
    sc.time = TimeGrid{24.0, 2.0};
    sc.tariffs = Tariffs{0.1, 0.23, 0.1, 0.23, 0.01, 0.001};
    sc.stage1_trade_price = 0.0;

    FlexibleLoadSpec fl;
    fl.p_min.assign(12, 0.0);
    fl.p_max.assign(12, 10.0);
    fl.energy_ref = 40.0;
    fl.ref_profile.assign(12, 40.0 / 24.0);
    fl.beta1 = 0.01;
    fl.beta2 = 0.01;

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

    DieselSpec de;
    de.p_min.assign(12, 0.0);
    de.p_max.assign(12, 10.0);
    de.ramp_min.assign(12, -2.0);
    de.ramp_max.assign(12, 2.0);
    de.p_initial = 0.0;
    de.lambda1 = 0.0;
    de.lambda2 = 0.2214;

    auto prosumer = [&](int id, const std::vector<double>& load,
                        const std::vector<double>* gen, bool diesel) {
        ProsumerSpec p;
        p.id = id;
        p.inflexible_load = load;
        p.nondispatchable_gen = gen ? *gen : std::vector<double>(12, 0.0);
        p.flexible_loads.push_back(fl);
        p.storages.push_back(es);
        if (diesel) p.diesels.push_back(de);
        return p;
    };
    sc.prosumers.push_back(prosumer(1, load_type1, nullptr, false));
    sc.prosumers.push_back(prosumer(2, load_type1, nullptr, false));
    sc.prosumers.push_back(prosumer(3, load_type2, &gen_type1, false));
    sc.prosumers.push_back(prosumer(4, load_type2, &gen_type2, false));
    sc.prosumers.push_back(prosumer(5, load_type2, &gen_type1, true));
    sc.prosumers.push_back(prosumer(6, load_type2, &gen_type2, true));

    sc.topology.lines = {
        LineSpec{1, -100.0, 100.0, {0, 1, 2, 3, 4, 5}},  // feeder head
        LineSpec{2, -100.0, 100.0, {0, 1, 3, 4}},
        LineSpec{3, -100.0, 100.0, {3, 4}},
        LineSpec{4, -100.0, 100.0, {2, 5}},
    };
    // hop counts on the feeder tree, perturbed so every pair is distinct
    sc.topology.distance = {
        {0.0, 2.0, 4.1, 3.1, 3.0, 4.2},
        {2.0, 0.0, 4.3, 3.3, 3.2, 4.4},
        {4.1, 4.3, 0.0, 5.1, 5.2, 2.1},
        {3.1, 3.3, 5.1, 0.0, 2.2, 5.3},
        {3.0, 3.2, 5.2, 2.2, 0.0, 5.4},
        {4.2, 4.4, 2.1, 5.3, 5.4, 0.0},
    };

    file.solver.learning_rate_inv = 100.0;
    file.solver.n_inner = 100;
    file.solver.n_outer = 100;
    validate(sc);
    return file;
}

/// Resolves a CLI scenario argument: a path if the file exists, else the
/// name of a bundled scenario.
inline ScenarioFile resolve_scenario(const std::string& path_or_name) {
    if (std::filesystem::exists(path_or_name)) return load_scenario_file(path_or_name);
    if (path_or_name == "ieee13_p2p") return bundled_ieee13();
    throw ScenarioError("no such scenario file or bundled scenario: '" + path_or_name + "'");
}

}  // namespace p2pflow
