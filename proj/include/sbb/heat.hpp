#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "sbb/grid.hpp"

namespace sbb {

/// kappa(t) = beta / (1 + beta (T - t)), the semiconvexity modulus of
/// log-heat potentials.
inline double kappa(double t, double beta, double T) {
    if (!(t >= 0.0) || t >= T) throw structural_error("kappa: need 0 <= t < T");
    return beta / (1.0 + beta * (T - t));
}

/// u_s(x) = log(N_s * e^phi)(x) by direct log-sum-exp over the source nodes,
/// with phi continued linearly beyond its grid out to offsets of 10*sqrt(s).
inline GridFunction log_heat_convolve(const GridFunction& phi, double s) {
    if (!(s > 0.0)) throw structural_error("log_heat_convolve: s must be positive");
    const Grid& g = phi.grid();
    const auto n = g.size();
    const double h = g.spacing();
    const auto ext = static_cast<std::size_t>(std::ceil(10.0 * std::sqrt(s) / h));

    const double slope_lo = (phi[1] - phi[0]) / h;
    const double slope_hi = (phi[n - 1] - phi[n - 2]) / h;
    const std::size_t total = n + 2 * ext;
    std::vector<double> y(total), a(total);  // a_j = log(w_j) + phi(y_j)
    const double logh = std::log(h);
    for (std::size_t j = 0; j < total; ++j) {
        const double yj = g.x_min() + (static_cast<double>(j) - static_cast<double>(ext)) * h;
        y[j] = yj;
        double pv;
        if (j < ext)
            pv = phi[0] + (yj - g.x_min()) * slope_lo;
        else if (j >= ext + n)
            pv = phi[n - 1] + (yj - g.x_max()) * slope_hi;
        else
            pv = phi[j - ext];
        double lw = logh;
        if (j == 0 || j == total - 1) lw = std::log(0.5 * h);
        a[j] = lw + pv;
    }

    const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi * s);
    const double inv2s = 1.0 / (2.0 * s);
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = g.node(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < total; ++j) {
            const double d = x - y[j];
            const double e = a[j] - d * d * inv2s;
            if (e > mx) mx = e;
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < total; ++j) {
            const double d = x - y[j];
            acc += std::exp(a[j] - d * d * inv2s - mx);
        }
        u[i] = mx + std::log(acc) - log_norm;
    }
    return GridFunction(g, std::move(u));
}

/// Backward potential field in time-to-go indexing: u[k] = u_{T - t_k},
/// so u[m] is the terminal potential phi itself and u[0] is the fully
/// smoothed field at t = 0. score[k] is the spatial derivative of u[k].
struct HeatField {
    TimeGrid time_grid;
    double beta;
    std::vector<GridFunction> u;
    std::vector<GridFunction> score;
    bool semiconvexity_ok;
    double semiconvexity_violation;  // worst shortfall below -kappa(t) - tol
    std::string warning;             // non-empty when the certificate failed
};

inline HeatField build_heat_field(const GridFunction& phi, const TimeGrid& tg,
                                  double beta) {
    const double T = tg.horizon();
    const auto m = tg.steps();
    std::vector<GridFunction> u, score;
    u.reserve(m + 1);
    score.reserve(m + 1);
    for (std::size_t k = 0; k < m; ++k)
        u.push_back(log_heat_convolve(phi, T - tg.node(k)));
    u.push_back(phi);
    for (const auto& uk : u) score.push_back(uk.derivative());

    double sup_u = 0.0;
    for (const auto& uk : u) sup_u = std::max(sup_u, uk.max_abs());
    const double tol_grid = 1e-6 * (1.0 + sup_u);
    double worst = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double bound = -kappa(tg.node(k), beta, T) - tol_grid;
        const auto d2 = u[k].second_difference();
        for (std::size_t i = 1; i + 1 < d2.size(); ++i)
            worst = std::max(worst, bound - d2[i]);
    }
    HeatField f{tg, beta, std::move(u), std::move(score), worst <= 0.0, worst, {}};
    if (!f.semiconvexity_ok)
        f.warning = "semiconvexity certificate failed by " + std::to_string(worst) +
                    "; the field is likely under-resolved";
    return f;
}

}  // namespace sbb
