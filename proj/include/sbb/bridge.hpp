#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sbb/dual.hpp"
#include "sbb/heat.hpp"
#include "sbb/measure.hpp"
#include "sbb/moreau.hpp"

namespace sbb {

/// H(p, A) = p^2/2 + (beta/2)(beta/(beta - A) - 1), defined for A < beta.
inline double hamiltonian(double p, double A, double beta) {
    if (!(A < beta)) throw structural_error("hamiltonian: A >= beta is outside dom(H)");
    return 0.5 * p * p + 0.5 * beta * (beta / (beta - A) - 1.0);
}

/// Maximizers of the Hamiltonian: drift a = p, diffusion b = beta/(beta - A).
inline std::pair<double, double> feedback(double p, double A, double beta) {
    if (!(A < beta)) throw structural_error("feedback: A >= beta is outside dom(H)");
    return {p, beta / (beta - A)};
}

/// Running cost c(a, b) = a^2/2 + (beta/2)(b - 1)^2.
inline double cost_integrand(double a, double b, double beta) {
    return 0.5 * a * a + 0.5 * beta * (b - 1.0) * (b - 1.0);
}

/// Fully assembled bridge: potential fields, transport maps, component
/// measures and the structural residuals of the optimality system.
struct SbbSolution {
    SolverConfig config;
    GridMeasure mu0;
    GridMeasure muT;
    GridFunction phi_hat;
    HeatField heat;
    std::vector<GridFunction> v;        // v[k] = T_beta^+[u[k]]
    std::vector<GridFunction> vx;       // spatial derivative of v[k]
    std::vector<GridFunction> vxx;      // second difference of v[k]
    std::vector<GridFunction> Ymap;     // minimizer maps Y_{t_k}
    std::vector<GridFunction> Xmap;     // inverse maps X_{t_k} = id + score/beta
    std::vector<std::vector<char>> clipped;  // per time node envelope masks
    GridMeasure m0;
    GridMeasure mT;
    GridFunction nu0;
    GridFunction nuT;
    double dual_value;
    std::map<std::string, double> residuals;
    std::vector<std::string> degradations;

    bool degraded() const { return !degradations.empty(); }
};

namespace detail {

/// Interval hull of the nodes where either density exceeds the floor;
/// proxy for the support of the running law of Y.
inline std::pair<std::size_t, std::size_t> support_hull(const GridMeasure& a,
                                                        const GridMeasure& b,
                                                        double floor = 1e-8) {
    const auto n = a.grid().size();
    std::size_t lo = n, hi = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (a[i] >= floor || b[i] >= floor) {
            lo = std::min(lo, i);
            hi = std::max(hi, i);
        }
    }
    if (lo > hi) { lo = 0; hi = n - 1; }
    return {lo, hi};
}

}  // namespace detail

inline SbbSolution assemble(const DualState& state, const GridMeasure& mu0,
                            const GridMeasure& muT, const SolverConfig& cfg) {
    cfg.validate();
    const Grid& g = state.phi.grid();
    const TimeGrid tg(cfg.T, cfg.m);
    const double beta = cfg.beta;
    const auto m = cfg.m;

    HeatField heat = build_heat_field(state.phi, tg, beta);

    std::vector<GridFunction> v, vx, vxx, Ymap, Xmap;
    std::vector<std::vector<char>> clipped;
    v.reserve(m + 1);
    for (std::size_t k = 0; k <= m; ++k) {
        MoreauResult mor = moreau_plus(heat.u[k], beta, g);
        v.push_back(std::move(mor.envelope));
        Ymap.push_back(detail::monotone_map(mor.argmin));
        clipped.push_back(std::move(mor.boundary_clipped));
        vx.push_back(v.back().derivative());
        vxx.push_back(v.back().second_difference());
        Xmap.push_back(GridFunction::sample(g, [&](double y) {
            return y + heat.score[k](y) / beta;
        }));
    }

    std::map<std::string, double> residuals;
    std::vector<std::string> degradations;
    auto check = [&](const std::string& name, double value, double tol) {
        residuals[name] = value;
        if (value > tol)
            degradations.push_back(name + " = " + std::to_string(value) +
                                   " exceeds " + std::to_string(tol));
    };

    const auto hull = detail::support_hull(state.gradient.m0,
                                           GridMeasure(g, state.gradient.mT.values(),
                                                       /*renormalize=*/true));
    const std::size_t lo = std::max<std::size_t>(hull.first, 1);
    const std::size_t hi = std::min(hull.second, g.size() - 2);

    // Envelope identity grad v = beta (id - Y) on interior non-clipped nodes.
    // The centered difference behind vx is exact on the quadratic pieces of
    // the envelope but only first-order across the isolated junctions where
    // the curvature jumps, so nodes whose curvature stencil is not locally
    // uniform are excluded from the sup.
    const double curv_tol = 0.25e-5 / g.spacing();
    double env_id = 0.0;
    for (std::size_t k = 0; k <= m; ++k)
        for (std::size_t i = std::max(lo, std::size_t{2});
             i <= std::min(hi, g.size() - 3); ++i) {
            if (clipped[k][i]) continue;
            if (std::abs(vxx[k][i] - vxx[k][i - 1]) > curv_tol ||
                std::abs(vxx[k][i + 1] - vxx[k][i]) > curv_tol)
                continue;
            env_id = std::max(env_id,
                              std::abs(vx[k][i] - beta * (g.node(i) - Ymap[k][i])));
        }
    check("envelope_identity", env_id, 1e-5);

    // Hessian band -1/(T - t_k) - tol <= v'' <= beta - margin for k < m.
    const double dt = tg.dt();
    const double margin = beta * beta * dt / (2.0 * (1.0 + beta * dt));
    const double band_tol = 1e-6 * (1.0 + beta);
    double band = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double lower = -1.0 / (cfg.T - tg.node(k)) - band_tol;
        const double upper = beta - margin;
        for (std::size_t i = lo; i <= hi; ++i) {
            if (clipped[k][i]) continue;
            band = std::max(band, lower - vxx[k][i]);
            band = std::max(band, vxx[k][i] - upper);
        }
    }
    check("hessian_band", band, band_tol);

    // Inverse relation Y(X(y)) = y on the support of the running law. The
    // minimizer map is piecewise linear with isolated slope breaks (and jumps
    // where the potential has kinks); interpolating it across such a cell is
    // only first-order accurate, so evaluation points landing there are
    // excluded from the sup.
    const double h = g.spacing();
    double inverse = 0.0;
    for (std::size_t k = 0; k <= m; ++k) {
        const GridFunction& Y = Ymap[k];
        for (std::size_t i = lo; i <= hi; ++i) {
            const double y = g.node(i);
            const double x = Xmap[k][i];
            if (x < g.x_min() + 2.0 * h || x > g.x_max() - 2.0 * h) continue;
            const auto j = static_cast<std::size_t>((x - g.x_min()) / h);
            const double mid = Y[j + 1] - Y[j];
            const double slope_tol = 1e-3 * (std::abs(mid) + h);
            if (std::abs(mid - (Y[j] - Y[j - 1])) > slope_tol ||
                std::abs((Y[j + 2] - Y[j + 1]) - mid) > slope_tol)
                continue;
            inverse = std::max(inverse, std::abs(Y(x) - y) / (1.0 + std::abs(y)));
        }
    }
    check("inverse_relation", inverse, 1e-4);

    // X maps monotone nondecreasing.
    double mono = 0.0;
    for (std::size_t k = 0; k <= m; ++k)
        for (std::size_t i = lo; i < hi; ++i)
            mono = std::max(mono, Xmap[k][i] - Xmap[k][i + 1]);
    check("xmap_monotonicity", mono, 1e-9 * g.spacing());

    check("semiconvexity", heat.semiconvexity_violation, 0.0);

    // Marginal chain: X_0 # m_0 = mu_0 and X_T # m_T = mu_T in L1. m_0 is
    // Y_0 # mu_0 and, at convergence, m_T is Y_T # mu_T up to the terminal
    // residual, so the chains reduce to pushing the marginals through the
    // near-identity compositions X o Y; evaluating them that way avoids
    // compounding two mass deposits, whose kernel alone would smear a cell
    // width of diffusion into the comparison. The terminal residual is added
    // to the T-chain for the m_T vs Y_T # mu_T substitution (pushforward is
    // L1-nonexpansive, so the triangle inequality applies).
    GridMeasure mT(g, state.gradient.mT.values(), /*renormalize=*/true);
    auto l1 = [&](const GridMeasure& a, const GridMeasure& b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i)
            acc += g.weight(i) * std::abs(a[i] - b[i]);
        return acc;
    };
    auto compose = [&](const GridFunction& outer, const GridFunction& inner) {
        return detail::monotone_map(GridFunction::sample(
            g, [&](double y) { return outer(inner(y)); }));
    };
    try {
        check("marginal_chain_0", l1(pushforward(compose(Xmap[0], Ymap[0]), mu0, g), mu0),
              5.0 * cfg.tol_residual);
        check("marginal_chain_T",
              l1(pushforward(compose(Xmap[m], Ymap[m]), muT, g), muT) + state.residual,
              5.0 * cfg.tol_residual);
    } catch (const structural_error& e) {
        degradations.push_back(std::string("marginal_chain: ") + e.what());
    }

    return SbbSolution{cfg,
                       mu0,
                       muT,
                       state.phi,
                       std::move(heat),
                       std::move(v),
                       std::move(vx),
                       std::move(vxx),
                       std::move(Ymap),
                       std::move(Xmap),
                       std::move(clipped),
                       state.gradient.m0,
                       std::move(mT),
                       state.gradient.nu0,
                       state.gradient.nuT,
                       state.objective,
                       std::move(residuals),
                       std::move(degradations)};
}

/// Discrete HJB residual d_t v + H(v_x, v_xx) per time node; zero fields at
/// k = 0 and k = m where the centered time difference is unavailable.
inline std::vector<GridFunction> hjb_residual(const SbbSolution& sol) {
    const Grid& g = sol.phi_hat.grid();
    const auto m = sol.config.m;
    const double dt = sol.heat.time_grid.dt();
    const double beta = sol.config.beta;
    std::vector<GridFunction> out;
    out.reserve(m + 1);
    out.push_back(GridFunction::constant(g, 0.0));
    for (std::size_t k = 1; k < m; ++k) {
        std::vector<double> r(g.size(), 0.0);
        for (std::size_t i = 1; i + 1 < g.size(); ++i) {
            if (sol.clipped[k][i]) continue;
            const double vt = (sol.v[k + 1][i] - sol.v[k - 1][i]) / (2.0 * dt);
            const double A = std::min(sol.vxx[k][i], beta * (1.0 - 1e-9));
            r[i] = vt + hamiltonian(sol.vx[k][i], A, beta);
        }
        out.push_back(GridFunction(g, std::move(r)));
    }
    out.push_back(GridFunction::constant(g, 0.0));
    return out;
}

}  // namespace sbb
