#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "sbb/dual.hpp"
#include "sbb/measure.hpp"

namespace sbb {

struct SinkhornResult {
    double value;                   // static entropic value SB(mu_0, mu_T)
    GridFunction f;                 // log scaling against mu_0
    GridFunction g;                 // log scaling against mu_T
    std::size_t iterations;
    double residual;                // L1 marginal error at exit
    std::vector<double> residual_history;
};

/// Static Schroedinger bridge value by log-domain Sinkhorn scaling against
/// the heat kernel exp(-(x-y)^2 / (2T)). The reference measure is
/// mu_0(dx) N_T(y - x) dy, so the converged value is
/// KL(pi | mu_0 (x) N_T) = mu_0(f) + mu_T(g).
inline SinkhornResult sinkhorn_sb(const GridMeasure& mu0, const GridMeasure& muT,
                                  double T, double tol,
                                  std::size_t max_iter = 20000) {
    if (!(T > 0.0)) throw structural_error("sinkhorn_sb: T must be positive");
    if (mu0.grid() != muT.grid())
        throw structural_error("sinkhorn_sb: marginal grids differ");
    const Grid& grid = mu0.grid();
    const auto n = grid.size();
    const double inv2T = 1.0 / (2.0 * T);
    const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi * T);
    const double neg_inf = -std::numeric_limits<double>::infinity();

    std::vector<double> log_a(n), log_b(n);  // log(w mu_0), log(w mu_T)
    for (std::size_t i = 0; i < n; ++i) {
        log_a[i] = mu0[i] > 0.0 ? std::log(grid.weight(i) * mu0[i]) : neg_inf;
        log_b[i] = muT[i] > 0.0 ? std::log(grid.weight(i) * muT[i]) : neg_inf;
    }
    auto logK = [&](std::size_t i, std::size_t j) {
        const double d = grid.node(i) - grid.node(j);
        return -d * d * inv2T - log_norm;
    };
    auto lse = [&](auto&& term) {
        double mx = neg_inf;
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, term(j));
        if (mx == neg_inf) return neg_inf;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += std::exp(term(j) - mx);
        return mx + std::log(acc);
    };

    std::vector<double> f(n, 0.0), g(n, 0.0);
    auto marginal_residual = [&]() {
        // After a g-update the mu_T marginal is exact; measure the mu_0 side.
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (log_a[i] == neg_inf) continue;
            const double row = lse([&](std::size_t j) {
                return log_b[j] == neg_inf
                           ? neg_inf
                           : log_a[i] + f[i] + logK(i, j) +
                                 std::log(grid.weight(j)) + g[j];
            });
            err += std::abs(std::exp(log_a[i]) - std::exp(row));
        }
        return err;
    };

    std::vector<double> history;
    std::size_t it = 0;
    double res = std::numeric_limits<double>::infinity();
    for (; it < max_iter; ++it) {
        // f_i = -log sum_j w_j N(x_i - y_j) e^{g_j}.
        for (std::size_t i = 0; i < n; ++i) {
            if (log_a[i] == neg_inf) continue;
            f[i] = -lse([&](std::size_t j) {
                return log_b[j] == neg_inf
                           ? neg_inf
                           : std::log(grid.weight(j)) + logK(i, j) + g[j];
            });
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (log_b[j] == neg_inf) {
                g[j] = 0.0;
                continue;
            }
            g[j] = log_b[j] - std::log(grid.weight(j)) -
                   lse([&](std::size_t i) {
                       return log_a[i] == neg_inf ? neg_inf : log_a[i] + f[i] + logK(i, j);
                   });
        }
        res = marginal_residual();
        history.push_back(res);
        if (res <= tol) break;
    }
    if (res > tol)
        throw structural_error("sinkhorn_sb: no convergence after " +
                               std::to_string(max_iter) + " iterations");

    double value = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (log_a[i] != neg_inf) value += std::exp(log_a[i]) * f[i];
        if (log_b[i] != neg_inf) value += std::exp(log_b[i]) * g[i];
    }
    return SinkhornResult{value, GridFunction(grid, std::move(f)),
                          GridFunction(grid, std::move(g)), it + 1, res,
                          std::move(history)};
}

/// Quadratic polynomial c0 + c1 y + (c2/2) y^2 with closed-form transforms.
struct Quadratic {
    double c0 = 0.0, c1 = 0.0, c2 = 0.0;

    /// T_beta^+ of a quadratic; requires c2 > -beta.
    Quadratic moreau(double beta) const {
        const double s = c2 + beta;
        return {c0 - c1 * c1 / (2.0 * s), beta * c1 / s, beta * c2 / s};
    }
    /// log(N_T * exp(quadratic)); requires c2 < 1/T.
    Quadratic heat(double T) const {
        const double d = 1.0 - c2 * T;
        return {c0 - 0.5 * std::log(d) + c1 * c1 * T / (2.0 * d), c1 / d, c2 / d};
    }
    /// Expectation under N(mean, var).
    double gaussian_mean(double mean, double var) const {
        return c0 + c1 * mean + 0.5 * c2 * (mean * mean + var);
    }
};

struct GaussianMarginal {
    double mean;
    double var;
};

struct OracleResult {
    double value;
    double p;  // linear coefficient of the optimal quadratic phi
    double q;  // curvature of the optimal quadratic phi
};

namespace detail {

inline double oracle_objective(double p, double q, const GaussianMarginal& mu0,
                               const GaussianMarginal& muT, double beta, double T) {
    const Quadratic phi{0.0, p, q};
    const double termT = phi.moreau(beta).gaussian_mean(muT.mean, muT.var);
    const double term0 = phi.heat(T).moreau(beta).gaussian_mean(mu0.mean, mu0.var);
    return termT - term0;
}

}  // namespace detail

/// Independent restricted maximization of the reduced dual over quadratic
/// potentials phi = p y + (q/2) y^2 with every integral in closed form.
/// The admissible curvature window is q in (-beta, min(1/T, beta/(beta T - 1)))
/// so that phi is beta-convex, the heat flow integrable, and the outer
/// transform well posed.
inline OracleResult gaussian_quadratic_oracle(const GaussianMarginal& mu0,
                                              const GaussianMarginal& muT,
                                              const SolverConfig& cfg) {
    cfg.validate();
    const double beta = cfg.beta, T = cfg.T;
    const double eps = 1e-7;
    const double q_lo = -beta + eps;
    const double q_hi = std::min(1.0 / T, beta / (beta * T - 1.0)) - eps;
    double p_half = 10.0 * (1.0 + std::abs(mu0.mean) + std::abs(muT.mean));

    double best_p = 0.0, best_q = 0.0;
    double best = -std::numeric_limits<double>::infinity();
    const std::size_t grid_pts = 81;
    double p_lo = -p_half, p_hi = p_half;
    double qa = q_lo, qb = q_hi;
    for (std::size_t pass = 0; pass < 40; ++pass) {
        std::size_t bi = 0, bj = 0;
        best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < grid_pts; ++i) {
            const double p = p_lo + (p_hi - p_lo) * static_cast<double>(i) /
                                        static_cast<double>(grid_pts - 1);
            for (std::size_t j = 0; j < grid_pts; ++j) {
                const double q = qa + (qb - qa) * static_cast<double>(j) /
                                          static_cast<double>(grid_pts - 1);
                const double val = detail::oracle_objective(p, q, mu0, muT, beta, T);
                if (val > best) {
                    best = val;
                    best_p = p;
                    best_q = q;
                    bi = i;
                    bj = j;
                }
            }
        }
        if (bi == 0 || bi == grid_pts - 1) {
            // Optimum on the artificial p box: enlarge and rescan.
            p_half *= 4.0;
            if (p_half > 1e6)
                throw structural_error("gaussian_quadratic_oracle: enlarge box (p)");
            p_lo = -p_half;
            p_hi = p_half;
            continue;
        }
        const double p_step = (p_hi - p_lo) / static_cast<double>(grid_pts - 1);
        const double q_step = (qb - qa) / static_cast<double>(grid_pts - 1);
        if (p_step < 1e-6 * (1.0 + std::abs(best_p)) &&
            q_step < 1e-6 * (1.0 + std::abs(best_q)))
            break;
        p_lo = best_p - 2.0 * p_step;
        p_hi = best_p + 2.0 * p_step;
        qa = std::max(q_lo, best_q - 2.0 * q_step);
        qb = std::min(q_hi, best_q + 2.0 * q_step);
        (void)bj;
    }
    return OracleResult{best, best_p, best_q};
}

/// solve() warm-started from the moment-matched quadratic of the oracle.
/// Zero initialization converges from scratch on well-conditioned pairs but
/// crawls in the small-beta long-horizon regime; starting at the best
/// quadratic (exact for Gaussian marginals, a serviceable guess otherwise)
/// removes most of the distance the fixed point has to cover.
inline DualState solve_warm(const GridMeasure& mu0, const GridMeasure& muT,
                            const SolverConfig& cfg) {
    const OracleResult oracle = gaussian_quadratic_oracle(
        {mu0.mean(), mu0.variance()}, {muT.mean(), muT.variance()}, cfg);
    const GridFunction phi0 = GridFunction::sample(
        mu0.grid(),
        [&](double y) { return oracle.p * y + 0.5 * oracle.q * y * y; });
    return solve(mu0, muT, cfg, &phi0);
}

}  // namespace sbb
