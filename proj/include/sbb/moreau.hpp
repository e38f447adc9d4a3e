#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sbb/grid.hpp"

namespace sbb {

/// Quadratic inf-convolution of a grid function: envelope values, the
/// minimizing location per evaluation node, and a mask of nodes whose
/// discrete argmin hit the first or last source node (the infimum over the
/// real line is truncated there, so those values are unreliable).
struct MoreauResult {
    GridFunction envelope;
    GridFunction argmin;
    std::vector<char> boundary_clipped;  // one flag per evaluation node
};

namespace detail {

/// Quadratic through three consecutive source nodes, written around y0.
struct LocalQuadratic {
    double v0, slope, curv, y0;
    double operator()(double y) const {
        const double d = y - y0;
        return v0 + slope * d + 0.5 * curv * d * d;
    }
};

/// Refine the discrete minimum of g(y) = phi(y) + c (x - y)^2 around the
/// nodal argmin j. Where the sampled curvature of g is locally uniform, a
/// single quadratic fit through the three nodes around j recovers the
/// continuous minimum (exact whenever phi is quadratic there). Where it is
/// not -- at kinks of phi or at junctions of a C^1 piecewise-quadratic
/// envelope -- the fit can dip well below the true minimum, so the two cells
/// adjacent to j are modelled explicitly instead: by exact chords of phi
/// when the data is locally convex (kinks sit on nodes), or by the maximum
/// of the one-sided quadratic extensions when phi is concave at the
/// curvature bound -beta (junctions of parabolic arcs sit between nodes).
/// Updates val/ym in place; leaves the nodal minimum when no stencil fits.
inline void refine_minimum(const GridFunction& phi, double c, double x,
                           std::size_t j, double& val, double& ym) {
    const Grid& src = phi.grid();
    const auto n = src.size();
    const double h = src.spacing();
    auto g = [&](std::size_t k) {
        const double d = x - src.node(k);
        return phi[k] + c * d * d;
    };
    const double g0 = val;
    const double gm = g(j - 1), gp = g(j + 1);
    const double curv = gm - 2.0 * g0 + gp;
    bool smooth = true;
    if (j >= 3 && j + 3 < n) {
        const double scale = std::abs(curv) + 1e-12 * (std::abs(g0) + 1.0);
        const double cl = g(j - 2) - 2.0 * gm + g0;
        const double cr = g0 - 2.0 * gp + g(j + 2);
        smooth = std::abs(cl - curv) <= 0.05 * scale &&
                 std::abs(cr - curv) <= 0.05 * scale;
    }
    if (smooth) {
        if (curv > 1e-13 * (std::abs(g0) + 1.0)) {
            double delta = std::clamp(0.5 * (gm - gp) / curv, -1.0, 1.0);
            const double fit = g0 + 0.5 * delta * (gp - gm) + 0.5 * delta * delta * curv;
            if (fit <= g0) {
                val = fit;
                ym = src.node(j) + delta * h;
            }
        }
        return;
    }
    double concavity = 0.0;  // most negative second difference of phi nearby
    for (std::size_t k = j - 2; k <= j + 2; ++k)
        concavity = std::min(concavity, phi[k - 1] - 2.0 * phi[k] + phi[k + 1]);
    for (std::size_t a = j - 1; a <= j; ++a) {
        const double ya = src.node(a), yb = src.node(a + 1);
        if (concavity > -c * h * h) {
            // Piecewise-linear model: exact minimum of the chord plus parabola.
            const double s = (phi[a + 1] - phi[a]) / h;
            const double ys = x - s / (2.0 * c);
            if (ys > ya && ys < yb) {
                const double v = phi[a] + s * (ys - ya) + c * (x - ys) * (x - ys);
                if (v < val) {
                    val = v;
                    ym = ys;
                }
            }
        }
        // Arc model: the cell carries a junction of two quadratic pieces;
        // each side's piece is determined exactly by its three nearest nodes,
        // and the cell function is their maximum. This covers tangential
        // junctions of parabolic arcs (concave data at the curvature bound)
        // and convex sub-cell kinks, where the V vertex dips below the chord;
        // max(L, R) never lies below the true junction cell, so candidates
        // only replace the nodal minimum when they are genuine.
        const LocalQuadratic L{g(a - 1), (g(a) - g(a - 2)) / (2.0 * h),
                               (g(a - 2) - 2.0 * g(a - 1) + g(a)) / (h * h),
                               src.node(a - 1)};
        const LocalQuadratic R{g(a + 2), (g(a + 3) - g(a + 1)) / (2.0 * h),
                               (g(a + 1) - 2.0 * g(a + 2) + g(a + 3)) / (h * h),
                               src.node(a + 2)};
        double cand[4];
        std::size_t nc = 0;
        if (L.curv > 0.0) {
            const double yc = L.y0 - L.slope / L.curv;
            if (yc > ya && yc < yb) cand[nc++] = yc;
        }
        if (R.curv > 0.0) {
            const double yc = R.y0 - R.slope / R.curv;
            if (yc > ya && yc < yb) cand[nc++] = yc;
        }
        // Crossings of L - R, a quadratic in y.
        const double A = 0.5 * (L.curv - R.curv);
        const double B = (L.slope - L.curv * L.y0) - (R.slope - R.curv * R.y0);
        const double C = (L.v0 - L.slope * L.y0 + 0.5 * L.curv * L.y0 * L.y0) -
                         (R.v0 - R.slope * R.y0 + 0.5 * R.curv * R.y0 * R.y0);
        if (std::abs(A) <= 1e-12 * (std::abs(B) + std::abs(C) + 1.0)) {
            if (B != 0.0) {
                const double yc = -C / B;
                if (yc > ya && yc < yb) cand[nc++] = yc;
            }
        } else {
            const double disc = B * B - 4.0 * A * C;
            if (disc >= 0.0) {
                const double sq = std::sqrt(disc);
                for (const double yc : {(-B + sq) / (2.0 * A), (-B - sq) / (2.0 * A)})
                    if (yc > ya && yc < yb) cand[nc++] = yc;
            }
        }
        for (std::size_t q = 0; q < nc; ++q) {
            const double v = std::max(L(cand[q]), R(cand[q]));
            if (v < val) {
                val = v;
                ym = cand[q];
            }
        }
    }
}

}  // namespace detail

/// T_beta^+[phi](x) = inf_y phi(y) + (beta/2)(x - y)^2, evaluated at the
/// nodes of eval_grid. Exact discrete minimum over phi's nodes by the O(n)
/// lower-envelope-of-parabolas scan; the minimizer is then refined by a
/// quadratic fit over the three nodes around the discrete argmin.
inline MoreauResult moreau_plus(const GridFunction& phi, double beta,
                                const Grid& eval_grid) {
    if (!(beta > 0.0)) throw structural_error("moreau_plus: beta must be positive");
    const Grid& src = phi.grid();
    const auto n = src.size();
    const double c = 0.5 * beta;

    // Lower envelope of the parabolas x -> phi_j + c (x - y_j)^2.
    std::vector<std::size_t> v(n);      // indices of parabolas in the envelope
    std::vector<double> z(n + 1);       // boundaries between them
    std::size_t k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    auto intersect = [&](std::size_t a, std::size_t b) {
        const double ya = src.node(a), yb = src.node(b);
        return ((phi[b] + c * yb * yb) - (phi[a] + c * ya * ya)) /
               (2.0 * c * (yb - ya));
    };
    for (std::size_t j = 1; j < n; ++j) {
        double s = intersect(v[k], j);
        while (s <= z[k]) {
            --k;
            s = intersect(v[k], j);
        }
        ++k;
        v[k] = j;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }

    const auto en = eval_grid.size();
    std::vector<double> env(en), arg(en);
    std::vector<char> clipped(en, 0);
    std::size_t seg = 0;
    for (std::size_t i = 0; i < en; ++i) {
        const double x = eval_grid.node(i);
        while (z[seg + 1] < x) ++seg;
        const std::size_t j = v[seg];
        double yj = src.node(j);
        double val = phi[j] + c * (x - yj) * (x - yj);
        if (j == 0 || j == n - 1) {
            clipped[i] = 1;
            env[i] = val;
            arg[i] = yj;
            continue;
        }
        detail::refine_minimum(phi, c, x, j, val, yj);
        env[i] = val;
        arg[i] = yj;
    }
    return MoreauResult{GridFunction(eval_grid, std::move(env)),
                        GridFunction(eval_grid, std::move(arg)), std::move(clipped)};
}

/// T_beta^-[psi] := -T_beta^+[-psi].
inline MoreauResult moreau_minus(const GridFunction& psi, double beta,
                                 const Grid& eval_grid) {
    std::vector<double> neg(psi.values());
    for (double& x : neg) x = -x;
    MoreauResult r = moreau_plus(GridFunction(psi.grid(), std::move(neg)), beta, eval_grid);
    std::vector<double> env(r.envelope.values());
    for (double& x : env) x = -x;
    return MoreauResult{GridFunction(eval_grid, std::move(env)), std::move(r.argmin),
                        std::move(r.boundary_clipped)};
}

/// True iff phi + (beta/2) y^2 has discrete second difference >= -tol at
/// every interior node.
inline bool is_beta_convex(const GridFunction& phi, double beta, double tol) {
    if (tol < 0.0) throw structural_error("is_beta_convex: tol must be >= 0");
    const auto n = phi.size();
    const double h2 = phi.grid().spacing() * phi.grid().spacing();
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double d2 = (phi[i - 1] - 2.0 * phi[i] + phi[i + 1]) / h2 + beta;
        if (d2 < -tol) return false;
    }
    return true;
}

/// beta-convex envelope of phi: lower convex envelope of g = phi + (beta/2) y^2
/// by a monotone-chain scan, minus (beta/2) y^2. Output <= input pointwise,
/// with equality iff the input is already beta-convex.
inline GridFunction beta_convex_project(const GridFunction& phi, double beta) {
    if (!(beta > 0.0)) throw structural_error("beta_convex_project: beta must be positive");
    const Grid& grid = phi.grid();
    const auto n = grid.size();
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double y = grid.node(i);
        g[i] = phi[i] + 0.5 * beta * y * y;
    }
    // Lower hull over (y_i, g_i); y is already sorted.
    std::vector<std::size_t> hull;
    hull.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        while (hull.size() >= 2) {
            const std::size_t a = hull[hull.size() - 2], b = hull[hull.size() - 1];
            const double cross = (g[b] - g[a]) * static_cast<double>(i - a) -
                                 (g[i] - g[a]) * static_cast<double>(b - a);
            if (cross >= 0.0)
                hull.pop_back();
            else
                break;
        }
        hull.push_back(i);
    }
    // First and last nodes are always hull vertices; interpolate between them.
    std::vector<double> out(n);
    std::size_t seg = 0;
    for (std::size_t i = 0; i < n; ++i) {
        while (seg + 1 < hull.size() && hull[seg + 1] < i) ++seg;
        const std::size_t a = hull[seg];
        const std::size_t b = hull[std::min(seg + 1, hull.size() - 1)];
        double val = g[a];
        if (b > a && i > a) {
            const double w = static_cast<double>(i - a) / static_cast<double>(b - a);
            val = (1.0 - w) * g[a] + w * g[b];
        }
        const double y = grid.node(i);
        out[i] = std::min(val, g[i]) - 0.5 * beta * y * y;
    }
    return GridFunction(grid, std::move(out));
}

}  // namespace sbb
