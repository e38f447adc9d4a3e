#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbb/bridge.hpp"
#include "sbb/simulate.hpp"

namespace sbb {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Write via a temp file in the same directory, then rename into place.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw structural_error("cannot write " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline ordered_json config_to_json(const SolverConfig& cfg) {
    ordered_json j;
    j["beta"] = cfg.beta;
    j["T"] = cfg.T;
    j["n"] = cfg.n;
    j["m"] = cfg.m;
    j["omega"] = cfg.omega;
    j["max_iter"] = cfg.max_iter;
    j["tol_residual"] = cfg.tol_residual;
    j["seed"] = cfg.seed;
    return j;
}

inline SolverConfig config_from_json(const nlohmann::json& j) {
    SolverConfig cfg;
    cfg.beta = j.at("beta").get<double>();
    cfg.T = j.at("T").get<double>();
    cfg.n = j.value("n", cfg.n);
    cfg.m = j.value("m", cfg.m);
    cfg.omega = j.value("omega", cfg.omega);
    cfg.max_iter = j.value("max_iter", cfg.max_iter);
    cfg.tol_residual = j.value("tol_residual", cfg.tol_residual);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

inline void write_measure_csv(const std::filesystem::path& path, const GridMeasure& mu) {
    std::string s = "x,density\n";
    for (std::size_t i = 0; i < mu.grid().size(); ++i)
        s += detail::fmt(mu.grid().node(i)) + "," + detail::fmt(mu[i]) + "\n";
    detail::atomic_write(path, s);
}

inline void write_profile_csv(const std::filesystem::path& path, const GridFunction& f) {
    std::string s = "x,value\n";
    for (std::size_t i = 0; i < f.size(); ++i)
        s += detail::fmt(f.grid().node(i)) + "," + detail::fmt(f[i]) + "\n";
    detail::atomic_write(path, s);
}

inline GridFunction load_profile_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw structural_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "x,value")
        throw structural_error(path.string() + ": expected header 'x,value'");
    std::vector<double> xs, vs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw structural_error(path.string() + ": malformed row");
        xs.push_back(std::stod(line.substr(0, comma)));
        vs.push_back(std::stod(line.substr(comma + 1)));
    }
    if (xs.size() < 16) throw structural_error(path.string() + ": too few rows");
    Grid g(xs.front(), xs.back(), xs.size());
    return GridFunction(g, std::move(vs));
}

inline void write_field_csv(const std::filesystem::path& path, const TimeGrid& tg,
                            const std::vector<GridFunction>& field) {
    std::string s = "t,x,value\n";
    for (std::size_t k = 0; k < field.size(); ++k) {
        const std::string t = detail::fmt(tg.node(k));
        const auto& f = field[k];
        for (std::size_t i = 0; i < f.size(); ++i)
            s += t + "," + detail::fmt(f.grid().node(i)) + "," + detail::fmt(f[i]) + "\n";
    }
    detail::atomic_write(path, s);
}

/// Persist a solution as a directory of CSV fields plus a JSON summary.
inline void write_solution(const std::filesystem::path& dir, const SbbSolution& sol) {
    std::filesystem::create_directories(dir);
    write_profile_csv(dir / "phi.csv", sol.phi_hat);
    write_measure_csv(dir / "mu0.csv", sol.mu0);
    write_measure_csv(dir / "muT.csv", sol.muT);
    write_measure_csv(dir / "m0.csv", sol.m0);
    write_measure_csv(dir / "mT.csv", sol.mT);
    write_profile_csv(dir / "nu0.csv", sol.nu0);
    write_profile_csv(dir / "nuT.csv", sol.nuT);
    write_field_csv(dir / "u.csv", sol.heat.time_grid, sol.heat.u);
    write_field_csv(dir / "score.csv", sol.heat.time_grid, sol.heat.score);
    write_field_csv(dir / "v.csv", sol.heat.time_grid, sol.v);
    write_field_csv(dir / "Y.csv", sol.heat.time_grid, sol.Ymap);
    write_field_csv(dir / "X.csv", sol.heat.time_grid, sol.Xmap);

    ordered_json j;
    j["config"] = config_to_json(sol.config);
    j["dual_value"] = sol.dual_value;
    ordered_json res;
    for (const auto& [k, v] : sol.residuals) res[k] = v;
    j["residuals"] = res;
    j["degraded"] = sol.degraded();
    j["degradations"] = sol.degradations;
    j["semiconvexity_ok"] = sol.heat.semiconvexity_ok;
    detail::atomic_write(dir / "summary.json", j.dump(2) + "\n");
}

/// Rebuild a solution from a directory written by write_solution. The stored
/// potential and marginals fully determine the assembly, which is rerun.
struct LoadedSolution {
    SbbSolution solution;
    double stored_dual_value;
};

inline LoadedSolution load_solution(const std::filesystem::path& dir) {
    std::ifstream in(dir / "summary.json");
    if (!in) throw structural_error("cannot open " + (dir / "summary.json").string());
    nlohmann::json j = nlohmann::json::parse(in);
    SolverConfig cfg = config_from_json(j.at("config"));
    GridFunction phi = load_profile_csv(dir / "phi.csv");
    GridMeasure mu0 = load_measure_csv((dir / "mu0.csv").string());
    GridMeasure muT = load_measure_csv((dir / "muT.csv").string());
    if (mu0.grid() != phi.grid() || muT.grid() != phi.grid())
        throw structural_error("load_solution: inconsistent grids in " + dir.string());
    const double objective = dual_objective(phi, mu0, muT, cfg);
    DualGradient grad = dual_gradient(phi, mu0, muT, cfg);
    DualState state{std::move(phi), objective, std::move(grad),
                    0.0, 0, {}};
    state.residual = state.gradient.residual_l1;
    SbbSolution sol = assemble(state, mu0, muT, cfg);
    return LoadedSolution{std::move(sol), j.at("dual_value").get<double>()};
}

inline ordered_json report_to_json(const SimulationReport& rep) {
    ordered_json j;
    j["path_count"] = rep.path_count;
    j["excluded"] = rep.excluded;
    j["time_steps"] = rep.time_steps;
    j["primal_cost_mean"] = rep.primal_cost_mean;
    j["primal_cost_stderr"] = rep.primal_cost_stderr;
    j["drift_energy"] = rep.drift_energy;
    j["diffusion_energy"] = rep.diffusion_energy;
    j["terminal_W2"] = rep.terminal_W2;
    j["terminal_KS"] = rep.terminal_KS;
    j["initial_W2"] = rep.initial_W2;
    j["martingale_slope"] = rep.martingale_slope;
    return j;
}

inline void write_trajectories_csv(const std::filesystem::path& path,
                                   const std::vector<TrajectoryRow>& rows) {
    std::string s = "path_id,t,Y,X,a,sigma\n";
    for (const auto& r : rows)
        s += std::to_string(r.path_id) + "," + detail::fmt(r.t) + "," +
             detail::fmt(r.Y) + "," + detail::fmt(r.X) + "," + detail::fmt(r.drift) +
             "," + detail::fmt(r.sigma) + "\n";
    detail::atomic_write(path, s);
}

}  // namespace sbb
