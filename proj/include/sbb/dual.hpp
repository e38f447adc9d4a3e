#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <vector>

#include "sbb/heat.hpp"
#include "sbb/measure.hpp"
#include "sbb/moreau.hpp"

namespace sbb {

struct SolverConfig {
    double beta = 2.0;
    double T = 1.0;
    std::size_t n = 1024;        // spatial nodes
    std::size_t m = 256;         // time steps
    double omega = 0.5;          // damping of the fixed-point update
    std::size_t max_iter = 500;
    double tol_residual = 1e-5;
    std::uint64_t seed = 42;

    void validate() const {
        if (!(beta > 0.0)) throw structural_error("config: beta must be positive");
        if (!(T > 0.0)) throw structural_error("config: T must be positive");
        if (!(beta * T > 1.0)) {
            std::ostringstream os;
            os << "config: beta*T must exceed 1 for the dual optimizer to exist "
                  "(got beta*T = "
               << beta * T << ")";
            throw structural_error(os.str());
        }
        if (!(omega > 0.0 && omega <= 1.0))
            throw structural_error("config: omega must lie in (0, 1]");
        if (!(tol_residual > 0.0))
            throw structural_error("config: tol_residual must be positive");
    }
};

/// Gradient of the reduced dual objective at phi, as a signed density on the
/// potential grid, together with the measures it is assembled from.
struct DualGradient {
    GridFunction gradient;     // density(Y_T # mu_T) - density(m_T)
    GridMeasure yT_push;       // Y_T # mu_T
    GridMeasure m0;            // Y_0 # mu_0
    GridFunction nu0;          // e^{-u_T} density of m0 (not a probability)
    GridFunction nuT;          // nu0 * N_T
    GridFunction mT;           // e^{phi} nuT; mass approx 1
    GridFunction Y0;           // argmin of T_beta^+[u_T]
    GridFunction YT;           // argmin of T_beta^+[phi]
    GridFunction uT;           // log(N_T * e^phi)
    std::vector<char> clipped; // nodes excluded from convergence norms
    double mT_mass;
    double residual_l1;        // L1 of the gradient density off clipped nodes
};

struct IterationRecord {
    std::size_t iteration;
    double objective;
    double residual;
    double omega;
};

struct DualState {
    GridFunction phi;
    double objective;
    DualGradient gradient;
    double residual;
    std::size_t iteration;
    std::vector<IterationRecord> telemetry;
};

struct nonconvergence_error : std::runtime_error {
    std::vector<double> residual_history;
    nonconvergence_error(const std::string& msg, std::vector<double> history)
        : std::runtime_error(msg), residual_history(std::move(history)) {}
};

namespace detail {

inline void check_clipped_mass(const std::vector<char>& clipped, const GridMeasure& mu,
                               const char* what) {
    double mass = 0.0;
    for (std::size_t i = 0; i < clipped.size(); ++i)
        if (clipped[i]) mass += mu.grid().weight(i) * mu[i];
    if (mass > 1e-6) {
        std::ostringstream os;
        os << what << ": grid too small, boundary-clipped envelope nodes carry mass "
           << mass;
        throw structural_error(os.str());
    }
}

// log-density of nu_T = nu_0 * N_T from the log-density of nu_0.
inline std::vector<double> log_gauss_convolve(const Grid& g,
                                              const std::vector<double>& log_nu0,
                                              double T) {
    const auto n = g.size();
    const double inv2T = 1.0 / (2.0 * T);
    const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi * T);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = g.node(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (log_nu0[j] == -std::numeric_limits<double>::infinity()) continue;
            const double d = x - g.node(j);
            mx = std::max(mx, std::log(g.weight(j)) + log_nu0[j] - d * d * inv2T);
        }
        if (mx == -std::numeric_limits<double>::infinity()) {
            out[i] = mx;
            continue;
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (log_nu0[j] == -std::numeric_limits<double>::infinity()) continue;
            const double d = x - g.node(j);
            acc += std::exp(std::log(g.weight(j)) + log_nu0[j] - d * d * inv2T - mx);
        }
        out[i] = mx + std::log(acc) - log_norm;
    }
    return out;
}

// The argmin map of a beta-convex envelope is monotone; the sub-cell refined
// minimizers can wobble by a fraction of a cell where the envelope is
// degenerate (curvature at the -beta bound), so enforce monotonicity with a
// running max before depositing mass along the map.
inline GridFunction monotone_map(const GridFunction& f) {
    std::vector<double> v(f.values());
    for (std::size_t i = 1; i < v.size(); ++i) v[i] = std::max(v[i], v[i - 1]);
    return GridFunction(f.grid(), std::move(v));
}

inline GridFunction from_log_density(const Grid& g, const std::vector<double>& logd) {
    std::vector<double> d(logd.size());
    for (std::size_t i = 0; i < logd.size(); ++i)
        d[i] = logd[i] == -std::numeric_limits<double>::infinity() ? 0.0
                                                                   : std::exp(logd[i]);
    return GridFunction(g, std::move(d));
}

}  // namespace detail

/// J(phi) = mu_T(T_beta^+[phi]) - mu_0(T_beta^+[u_T^phi]).
inline double dual_objective(const GridFunction& phi, const GridMeasure& mu0,
                             const GridMeasure& muT, const SolverConfig& cfg) {
    cfg.validate();
    if (phi.grid() != mu0.grid() || phi.grid() != muT.grid())
        throw structural_error("dual_objective: grids of phi and marginals differ");
    const Grid& g = phi.grid();
    const MoreauResult psi = moreau_plus(phi, cfg.beta, g);
    detail::check_clipped_mass(psi.boundary_clipped, muT, "dual_objective");
    const GridFunction uT = log_heat_convolve(phi, cfg.T);
    const MoreauResult v0 = moreau_plus(uT, cfg.beta, g);
    detail::check_clipped_mass(v0.boundary_clipped, mu0, "dual_objective");
    return quadrature(psi.envelope, muT) - quadrature(v0.envelope, mu0);
}

inline DualGradient dual_gradient(const GridFunction& phi, const GridMeasure& mu0,
                                  const GridMeasure& muT, const SolverConfig& cfg) {
    cfg.validate();
    if (phi.grid() != mu0.grid() || phi.grid() != muT.grid())
        throw structural_error("dual_gradient: grids of phi and marginals differ");
    const Grid& g = phi.grid();
    const auto n = g.size();

    GridFunction uT = log_heat_convolve(phi, cfg.T);
    MoreauResult mor0 = moreau_plus(uT, cfg.beta, g);
    MoreauResult morT = moreau_plus(phi, cfg.beta, g);

    mor0.argmin = detail::monotone_map(mor0.argmin);
    morT.argmin = detail::monotone_map(morT.argmin);
    GridMeasure m0 = pushforward(mor0.argmin, mu0, g);
    GridMeasure yT_push = pushforward(morT.argmin, muT, g);

    std::vector<double> log_nu0(n);
    for (std::size_t i = 0; i < n; ++i)
        log_nu0[i] = m0[i] > 0.0 ? std::log(m0[i]) - uT[i]
                                 : -std::numeric_limits<double>::infinity();
    std::vector<double> log_nuT = detail::log_gauss_convolve(g, log_nu0, cfg.T);
    std::vector<double> log_mT(n);
    for (std::size_t i = 0; i < n; ++i) log_mT[i] = phi[i] + log_nuT[i];

    GridFunction nu0 = detail::from_log_density(g, log_nu0);
    GridFunction nuT = detail::from_log_density(g, log_nuT);
    GridFunction mT = detail::from_log_density(g, log_mT);

    double mT_mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) mT_mass += g.weight(i) * mT[i];
    if (std::abs(mT_mass - 1.0) > 1e-3) {
        std::ostringstream os;
        os << "dual_gradient: resolution/truncation failure, mass(m_T) = " << mT_mass;
        throw structural_error(os.str());
    }

    std::vector<char> clipped(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        clipped[i] = static_cast<char>(mor0.boundary_clipped[i] || morT.boundary_clipped[i]);

    std::vector<double> grad(n);
    double res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        grad[i] = yT_push[i] - mT[i];
        if (!clipped[i]) res += g.weight(i) * std::abs(grad[i]);
    }
    return DualGradient{GridFunction(g, std::move(grad)),
                        std::move(yT_push),
                        std::move(m0),
                        std::move(nu0),
                        std::move(nuT),
                        std::move(mT),
                        std::move(mor0.argmin),
                        std::move(morT.argmin),
                        std::move(uT),
                        std::move(clipped),
                        mT_mass,
                        res};
}

namespace detail {

inline GridFunction normalize_anchor(const GridFunction& phi) {
    const std::size_t anchor = phi.grid().nearest(0.0);
    std::vector<double> v(phi.values());
    const double c = v[anchor];
    for (double& x : v) x -= c;
    return GridFunction(phi.grid(), std::move(v));
}

}  // namespace detail

namespace detail {

/// One damped multiplicative update of phi: omega times the log density
/// ratio of the two sides of the terminal SBB condition, mollified by a
/// discrete Gaussian of width `smooth_cells` grid cells and applied on the
/// trusted set where both densities are resolvable. Beyond the trusted set
/// the updated potential is continued linearly; the far values only matter
/// through the beta-convex projection, which bridges them anyway.
inline GridFunction log_ratio_step(const GridFunction& phi, const DualGradient& grad,
                                   double omega, double smooth_cells, double beta) {
    const Grid& g = phi.grid();
    const auto n = g.size();
    const double h = g.spacing();
    const auto& a = grad.yT_push.density();
    const auto& b = grad.mT.values();
    constexpr double trust_floor = 1e-10;
    std::ptrdiff_t lo = -1, hi = -1;
    for (std::size_t i = 0; i < n; ++i)
        if (a[i] >= trust_floor && b[i] >= trust_floor) {
            if (lo < 0) lo = static_cast<std::ptrdiff_t>(i);
            hi = static_cast<std::ptrdiff_t>(i);
        }
    if (lo < 0 || hi - lo < 8)
        throw structural_error(
            "solve: densities of the terminal condition share almost no support; "
            "grid or marginals are under-resolved");
    std::vector<double> d(n, 0.0);
    for (std::ptrdiff_t i = lo; i <= hi; ++i)
        d[i] = std::clamp(std::log(std::max(a[i], trust_floor) /
                                   std::max(b[i], trust_floor)),
                          -10.0, 10.0);
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * smooth_cells)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * k * k / (smooth_cells * smooth_cells));
        ksum += kernel[k + radius];
    }
    for (double& w : kernel) w /= ksum;
    std::vector<double> updated(n);
    for (std::ptrdiff_t i = lo; i <= hi; ++i) {
        double s = 0.0;
        for (int k = -radius; k <= radius; ++k)
            s += kernel[k + radius] * d[std::clamp(i + k, lo, hi)];
        updated[i] = phi[i] + omega * s;
    }
    const double slope_lo = (updated[lo + 4] - updated[lo]) / (4.0 * h);
    const double slope_hi = (updated[hi] - updated[hi - 4]) / (4.0 * h);
    for (std::ptrdiff_t i = lo - 1; i >= 0; --i)
        updated[i] = updated[lo] + slope_lo * (g.node(i) - g.node(lo));
    for (std::ptrdiff_t i = hi + 1; i < static_cast<std::ptrdiff_t>(n); ++i)
        updated[i] = updated[hi] + slope_hi * (g.node(i) - g.node(hi));
    return normalize_anchor(
        beta_convex_project(GridFunction(g, std::move(updated)), beta));
}

}  // namespace detail

/// Damped multiplicative fixed-point ascent on the reduced dual. Each step
/// moves phi by omega * log of the (mollified) density ratio of the two sides
/// of the terminal SBB condition, projects back onto the beta-convex cone,
/// and anchors phi(0) = 0. A step is kept when the objective does not
/// decrease, or when the residual decreases while the objective stays within
/// a small slack of the best value seen: near the optimum the ridge of the
/// discrete objective is flatter than its evaluation noise, and the residual
/// is the convergence criterion that matters. omega is halved on rejection
/// and restored after three consecutive accepted steps; when progress stalls
/// the mollifier width is annealed downward so the late iterations can
/// resolve cell-scale structure that the wide kernel averages away. The
/// returned state is the lowest-residual iterate seen, not necessarily the
/// last one. An optional initial potential (projected and anchored before
/// use) replaces the zero start; a moment-matched quadratic cuts the
/// iteration count sharply on near-Gaussian marginals.
inline DualState solve(const GridMeasure& mu0, const GridMeasure& muT,
                       const SolverConfig& cfg,
                       const GridFunction* initial_phi = nullptr) {
    cfg.validate();
    const Grid& g = mu0.grid();
    if (muT.grid() != g) throw structural_error("solve: marginal grids differ");

    GridFunction phi = initial_phi == nullptr
                           ? GridFunction::constant(g, 0.0)
                           : detail::normalize_anchor(
                                 beta_convex_project(*initial_phi, cfg.beta));
    if (phi.grid() != g) throw structural_error("solve: initial phi grid differs");
    double objective = dual_objective(phi, mu0, muT, cfg);
    DualGradient grad = dual_gradient(phi, mu0, muT, cfg);

    std::vector<IterationRecord> telemetry;
    std::vector<double> history;
    telemetry.push_back({0, objective, grad.residual_l1, cfg.omega});
    history.push_back(grad.residual_l1);

    double omega = cfg.omega;
    double smooth_cells = 6.0;
    double best_objective = objective;
    double best_residual = grad.residual_l1;
    std::size_t successes = 0, since_improvement = 0, straight_rejections = 0;
    std::size_t iter = 0;

    GridFunction phi_star = phi;
    DualGradient grad_star = grad;
    double objective_star = objective;
    std::size_t iter_star = 0;

    while (grad.residual_l1 > cfg.tol_residual && iter < cfg.max_iter) {
        ++iter;
        GridFunction candidate =
            detail::log_ratio_step(phi, grad, omega, smooth_cells, cfg.beta);
        const double cand_objective = dual_objective(candidate, mu0, muT, cfg);
        DualGradient cand_grad = dual_gradient(candidate, mu0, muT, cfg);
        const bool ascent =
            cand_objective + 1e-13 * (1.0 + std::abs(objective)) >= objective;
        const bool residual_step =
            cand_grad.residual_l1 < grad.residual_l1 &&
            cand_objective > best_objective - 1e-5 * (1.0 + std::abs(best_objective));
        if (ascent || residual_step) {
            phi = std::move(candidate);
            objective = cand_objective;
            grad = std::move(cand_grad);
            best_objective = std::max(best_objective, objective);
            if (++successes >= 3) omega = std::min(2.0 * omega, cfg.omega);
            telemetry.push_back({iter, objective, grad.residual_l1, omega});
            history.push_back(grad.residual_l1);
            if (grad.residual_l1 < grad_star.residual_l1) {
                phi_star = phi;
                grad_star = grad;
                objective_star = objective;
                iter_star = iter;
            }
            straight_rejections = 0;
        } else {
            omega *= 0.5;
            successes = 0;
            if (++straight_rejections >= 24) break;  // stalled at this iterate
        }
        if (grad.residual_l1 < best_residual * (1.0 - 1e-3)) {
            best_residual = grad.residual_l1;
            since_improvement = 0;
        } else if (++since_improvement >= 8 && smooth_cells > 0.7) {
            smooth_cells *= 0.5;
            omega = std::max(omega, 0.05);
            since_improvement = 0;
        }
        if (omega < 1e-8) break;  // stalled; exit with the best iterate
    }

    if (grad_star.residual_l1 > 10.0 * cfg.tol_residual) {
        std::ostringstream os;
        os << "solve: no convergence after " << iter << " iterations, best residual "
           << grad_star.residual_l1 << " > 10*tol " << 10.0 * cfg.tol_residual;
        throw nonconvergence_error(os.str(), std::move(history));
    }
    const double residual_star = grad_star.residual_l1;
    return DualState{std::move(phi_star), objective_star, std::move(grad_star),
                     residual_star, iter_star, std::move(telemetry)};
}

}  // namespace sbb
