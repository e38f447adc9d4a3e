#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sbb/bridge.hpp"
#include "sbb/measure.hpp"

namespace sbb {

struct SimulationReport {
    std::size_t path_count = 0;       // retained paths
    std::size_t excluded = 0;         // paths that left the grid
    std::size_t time_steps = 0;
    double primal_cost_mean = 0.0;
    double primal_cost_stderr = 0.0;
    double drift_energy = 0.0;
    double diffusion_energy = 0.0;
    double terminal_W2 = 0.0;         // law of X_T vs mu_T
    double terminal_KS = 0.0;
    double initial_W2 = 0.0;          // X_0 draws vs mu_0
    double martingale_slope = 0.0;    // OLS slope of X_T on X_0
};

/// One recorded step of a dumped trajectory.
struct TrajectoryRow {
    std::size_t path_id;
    double t, Y, X, drift, sigma;
};

/// OLS slope of X_T against X_0.
inline double martingale_diagnostic(const std::vector<double>& x0,
                                    const std::vector<double>& xT) {
    if (x0.size() != xT.size() || x0.empty())
        throw structural_error("martingale_diagnostic: mismatched samples");
    const auto n = static_cast<double>(x0.size());
    double m0 = 0.0, mT = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        m0 += x0[i];
        mT += xT[i];
    }
    m0 /= n;
    mT /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        sxx += (x0[i] - m0) * (x0[i] - m0);
        sxy += (x0[i] - m0) * (xT[i] - mT);
    }
    if (sxx / n < 1e-12)
        throw structural_error("martingale_diagnostic: degenerate X_0 variance");
    return sxy / sxx;
}

/// Euler-Maruyama simulation of the optimal semimartingale through the
/// Y-process: Y has unit diffusion and drift score[k], X = Xmap(Y). The cost
/// is accumulated with the left-endpoint rule. Deterministic given the seed;
/// each path owns a stream derived from (seed, path index).
inline SimulationReport simulate(const SbbSolution& sol, std::size_t paths,
                                 std::uint64_t seed,
                                 std::vector<TrajectoryRow>* trajectories = nullptr,
                                 std::size_t trajectory_cap = 1000) {
    if (paths < 100) throw structural_error("simulate: need at least 100 paths");
    const Grid& g = sol.phi_hat.grid();
    const auto m = sol.config.m;
    const double beta = sol.config.beta;
    const double dt = sol.heat.time_grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    const auto cdf0 = sol.mu0.cdf();

    std::vector<double> x0s, xTs, costs;
    x0s.reserve(paths);
    xTs.reserve(paths);
    costs.reserve(paths);
    double drift_energy_sum = 0.0, diffusion_energy_sum = 0.0;
    std::size_t excluded = 0;

    const std::uint64_t base = detail::splitmix64(seed);
    for (std::size_t p = 0; p < paths; ++p) {
        detail::Rng rng(detail::splitmix64(base ^ (p + 1)));
        const double x0 = inverse_cdf(sol.mu0, cdf0, rng.next_uniform());
        double y = sol.Ymap[0](x0);
        double drift_en = 0.0, diff_en = 0.0;
        bool ok = true;
        const bool dump = trajectories && p < trajectory_cap;
        for (std::size_t k = 0; k < m; ++k) {
            if (y < g.x_min() || y > g.x_max()) {
                ok = false;
                break;
            }
            const double a = sol.heat.score[k](y);
            const double x = sol.Xmap[k](y);
            if (x < g.x_min() || x > g.x_max()) {
                ok = false;
                break;
            }
            const double A = std::min(sol.vxx[k](x), beta * (1.0 - 1e-9));
            const double sigma = feedback(a, A, beta).second;
            drift_en += 0.5 * a * a * dt;
            diff_en += 0.5 * beta * (sigma - 1.0) * (sigma - 1.0) * dt;
            if (dump)
                trajectories->push_back(
                    {p, sol.heat.time_grid.node(k), y, x, a, sigma});
            y += a * dt + sqrt_dt * rng.next_normal();
        }
        if (!ok || y < g.x_min() || y > g.x_max()) {
            ++excluded;
            continue;
        }
        const double xT = sol.Xmap[m](y);
        if (dump) trajectories->push_back({p, sol.config.T, y, xT, 0.0, 1.0});
        x0s.push_back(x0);
        xTs.push_back(xT);
        costs.push_back(drift_en + diff_en);
        drift_energy_sum += drift_en;
        diffusion_energy_sum += diff_en;
    }

    if (static_cast<double>(excluded) > 0.001 * static_cast<double>(paths))
        throw structural_error("simulate: grid too small, " + std::to_string(excluded) +
                               " of " + std::to_string(paths) + " paths left the grid");
    const auto nr = costs.size();
    double mean = 0.0;
    for (double c : costs) mean += c;
    mean /= static_cast<double>(nr);
    double var = 0.0;
    for (double c : costs) var += (c - mean) * (c - mean);
    var /= static_cast<double>(nr - 1);

    SimulationReport rep;
    rep.path_count = nr;
    rep.excluded = excluded;
    rep.time_steps = m;
    rep.primal_cost_mean = mean;
    rep.primal_cost_stderr = std::sqrt(var / static_cast<double>(nr));
    rep.drift_energy = drift_energy_sum / static_cast<double>(nr);
    rep.diffusion_energy = diffusion_energy_sum / static_cast<double>(nr);
    rep.terminal_W2 = wasserstein2_sample(xTs, sol.muT);
    rep.terminal_KS = ks_sample(xTs, sol.muT);
    rep.initial_W2 = wasserstein2_sample(x0s, sol.mu0);
    rep.martingale_slope = martingale_diagnostic(x0s, xTs);
    return rep;
}

/// Cost of the comonotone linear interpolation plus the zero-diffusion
/// penalty: W2(mu_0, mu_T)^2 / (2T) + (beta/2) T. Every feasible plan is
/// bounded by it, so it upper-bounds the dual value.
inline double linear_coupling_bound(const GridMeasure& mu0, const GridMeasure& muT,
                                    const SolverConfig& cfg) {
    const double w2 = wasserstein2(mu0, muT);
    return w2 * w2 / (2.0 * cfg.T) + 0.5 * cfg.beta * cfg.T;
}

}  // namespace sbb
