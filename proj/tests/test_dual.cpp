#include <catch_amalgamated.hpp>

#include <cmath>

#include "sbb/dual.hpp"
#include "sbb/reference.hpp"

using namespace sbb;

namespace {

SolverConfig desk_config(std::size_t n = 512) {
    SolverConfig cfg;
    cfg.beta = 2.0;
    cfg.T = 1.0;
    cfg.n = n;
    cfg.m = 64;
    cfg.tol_residual = 1e-4;
    return cfg;
}

struct GaussianPair {
    Grid grid;
    GridMeasure mu0;
    GridMeasure muT;
};

GaussianPair acceptance_pair(const SolverConfig& cfg) {
    const Grid g = marginal_grid(0.0, 0.25, 0.0, 1.0, cfg.T, cfg.n);
    return {g, gaussian_measure(g, 0.0, 0.25), gaussian_measure(g, 0.0, 1.0)};
}

double pair_l2(const GridFunction& grad, const GridFunction& dir) {
    double acc = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i)
        acc += grad.grid().weight(i) * grad[i] * dir[i];
    return acc;
}

}  // namespace

TEST_CASE("config validation enforces the existence condition") {
    SolverConfig cfg = desk_config();
    cfg.beta = 0.9;
    cfg.T = 1.0;
    REQUIRE_THROWS_WITH(cfg.validate(),
                        Catch::Matchers::ContainsSubstring("beta*T must exceed 1"));
    cfg = desk_config();
    cfg.omega = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), structural_error);
    cfg = desk_config();
    cfg.tol_residual = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), structural_error);
}

TEST_CASE("dual objective vanishes at phi = 0") {
    const SolverConfig cfg = desk_config();
    const auto pair = acceptance_pair(cfg);
    // Zero up to the rounding of the discrete heat convolution of zero.
    REQUIRE(std::abs(dual_objective(GridFunction::constant(pair.grid, 0.0), pair.mu0,
                                    pair.muT, cfg)) <= 1e-12);
}

TEST_CASE("heat-flow pair: phi = 0 is stationary") {
    SolverConfig cfg = desk_config(256);
    const Grid g = marginal_grid(0.0, 0.25, 0.0, 0.25 + cfg.T, cfg.T, cfg.n);
    const GridMeasure mu0 = gaussian_measure(g, 0.0, 0.25);
    const GridMeasure muT = heat_flow_of(mu0, cfg.T);
    const GridFunction zero = GridFunction::constant(g, 0.0);
    REQUIRE(std::abs(dual_objective(zero, mu0, muT, cfg)) <= 1e-12);
    const DualGradient grad = dual_gradient(zero, mu0, muT, cfg);
    REQUIRE(grad.residual_l1 <= 1e-6);
    REQUIRE(grad.mT_mass == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("objective at the quadratic oracle optimizer matches the oracle value") {
    const SolverConfig cfg = desk_config();
    const auto pair = acceptance_pair(cfg);
    const OracleResult oracle =
        gaussian_quadratic_oracle({0.0, 0.25}, {0.0, 1.0}, cfg);
    const auto phi = GridFunction::sample(pair.grid, [&](double y) {
        return oracle.p * y + 0.5 * oracle.q * y * y;
    });
    REQUIRE(dual_objective(phi, pair.mu0, pair.muT, cfg) ==
            Catch::Approx(oracle.value).margin(5e-3));
}

TEST_CASE("gradient density integrates to zero") {
    const SolverConfig cfg = desk_config();
    const auto pair = acceptance_pair(cfg);
    const auto phi =
        GridFunction::sample(pair.grid, [](double y) { return -0.05 * y * y; });
    const DualGradient grad = dual_gradient(phi, pair.mu0, pair.muT, cfg);
    double total = 0.0;
    for (std::size_t i = 0; i < pair.grid.size(); ++i)
        total += pair.grid.weight(i) * grad.gradient[i];
    REQUIRE(std::abs(total) <= 2e-4);
}

TEST_CASE("gradient matches central finite differences of the objective") {
    const SolverConfig cfg = desk_config();
    const auto pair = acceptance_pair(cfg);
    const auto phi =
        GridFunction::sample(pair.grid, [](double y) { return 0.1 * y - 0.06 * y * y; });
    REQUIRE(is_beta_convex(phi, cfg.beta, 1e-9));
    const DualGradient grad = dual_gradient(phi, pair.mu0, pair.muT, cfg);
    const double eps = 1e-4;
    detail::Rng rng(97);
    for (int dir = 0; dir < 3; ++dir) {
        const double center = 4.0 * rng.next_uniform() - 2.0;
        const double width = 0.5 + rng.next_uniform();
        const auto gdir = GridFunction::sample(pair.grid, [&](double y) {
            const double z = (y - center) / width;
            return std::exp(-0.5 * z * z);
        });
        std::vector<double> plus(phi.values()), minus(phi.values());
        for (std::size_t i = 0; i < plus.size(); ++i) {
            plus[i] += eps * gdir[i];
            minus[i] -= eps * gdir[i];
        }
        const double fd =
            (dual_objective(GridFunction(pair.grid, std::move(plus)), pair.mu0,
                            pair.muT, cfg) -
             dual_objective(GridFunction(pair.grid, std::move(minus)), pair.mu0,
                            pair.muT, cfg)) /
            (2.0 * eps);
        const double pairing = pair_l2(grad.gradient, gdir);
        REQUIRE(fd == Catch::Approx(pairing).epsilon(1e-2));
    }
}

TEST_CASE("solve on the heat-flow pair converges immediately to zero") {
    SolverConfig cfg = desk_config(256);
    cfg.tol_residual = 1e-5;
    const Grid g = marginal_grid(0.0, 0.25, 0.0, 0.25 + cfg.T, cfg.T, cfg.n);
    const GridMeasure mu0 = gaussian_measure(g, 0.0, 0.25);
    const GridMeasure muT = heat_flow_of(mu0, cfg.T);
    const DualState state = solve(mu0, muT, cfg);
    REQUIRE(state.iteration <= 3);
    REQUIRE(std::abs(state.objective) <= 1e-6);
    // phi is constant (= 0 after anchoring).
    REQUIRE(state.phi.max_abs() <= 1e-9);
}

TEST_CASE("objective is invariant under constant shifts of phi") {
    const SolverConfig cfg = desk_config();
    const auto pair = acceptance_pair(cfg);
    const auto phi =
        GridFunction::sample(pair.grid, [](double y) { return 0.2 * y - 0.04 * y * y; });
    std::vector<double> shifted(phi.values());
    for (double& v : shifted) v += 1.75;
    const double a = dual_objective(phi, pair.mu0, pair.muT, cfg);
    const double b = dual_objective(GridFunction(pair.grid, std::move(shifted)),
                                    pair.mu0, pair.muT, cfg);
    REQUIRE(b == Catch::Approx(a).margin(1e-10));
}

TEST_CASE("beta-convex projection never decreases the objective") {
    const SolverConfig cfg = desk_config();
    const auto pair = acceptance_pair(cfg);
    detail::Rng rng(41);
    for (int trial = 0; trial < 3; ++trial) {
        // Non-beta-convex perturbation of a quadratic.
        const double amp = 0.5 + rng.next_uniform();
        const double freq = 1.0 + 2.0 * rng.next_uniform();
        const auto phi = GridFunction::sample(pair.grid, [&](double y) {
            return -0.06 * y * y + amp * std::sin(freq * y);
        });
        REQUIRE_FALSE(is_beta_convex(phi, cfg.beta, 1e-6));
        const double before = dual_objective(phi, pair.mu0, pair.muT, cfg);
        const double after = dual_objective(beta_convex_project(phi, cfg.beta),
                                            pair.mu0, pair.muT, cfg);
        REQUIRE(after >= before - 1e-10);
    }
}

TEST_CASE("converged state satisfies both halves of the optimality system") {
    const SolverConfig cfg = desk_config();
    const auto pair = acceptance_pair(cfg);
    const DualState state = solve_warm(pair.mu0, pair.muT, cfg);
    REQUIRE(state.residual <= cfg.tol_residual);
    REQUIRE(state.objective >= 0.0);  // phi = 0 is feasible
    REQUIRE(is_beta_convex(state.phi, cfg.beta, 1e-8));
    REQUIRE(state.phi[pair.grid.nearest(0.0)] == 0.0);

    // Initial-side condition: density(Y_0 # mu_0) / nu_0 = e^{u_T} where
    // nu_0 is resolvable.
    double second_half = 0.0;
    for (std::size_t i = 0; i < pair.grid.size(); ++i) {
        if (state.gradient.nu0[i] < 1e-8 || state.gradient.clipped[i]) continue;
        second_half += pair.grid.weight(i) *
                       std::abs(state.gradient.m0[i] / state.gradient.nu0[i] -
                                std::exp(state.gradient.uT[i]));
    }
    REQUIRE(second_half <= 10.0 * cfg.tol_residual);

    // The optimizer is a quadratic: degree-2 fit residual R^2 >= 1 - 1e-4
    // over the data-supported region.
    double sxx = 0.0, n_pts = 0.0;
    double sum[5] = {0, 0, 0, 0, 0}, b0 = 0, b1 = 0, b2 = 0;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pair.grid.size(); ++i)
        if (pair.mu0[i] > 1e-8 || pair.muT[i] > 1e-8) idx.push_back(i);
    for (const auto i : idx) {
        const double x = pair.grid.node(i), y = state.phi[i];
        sum[0] += 1.0;
        sum[1] += x;
        sum[2] += x * x;
        sum[3] += x * x * x;
        sum[4] += x * x * x * x;
        b0 += y;
        b1 += x * y;
        b2 += x * x * y;
        n_pts += 1.0;
        (void)sxx;
    }
    // Solve the 3x3 normal equations by Cramer's rule.
    const double A[3][3] = {{sum[0], sum[1], sum[2]},
                            {sum[1], sum[2], sum[3]},
                            {sum[2], sum[3], sum[4]}};
    auto det3 = [](const double M[3][3]) {
        return M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1]) -
               M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0]) +
               M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0]);
    };
    const double d = det3(A);
    double M0[3][3], M1[3][3], M2[3][3];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            M0[r][c] = A[r][c];
            M1[r][c] = A[r][c];
            M2[r][c] = A[r][c];
        }
    const double b[3] = {b0, b1, b2};
    for (int r = 0; r < 3; ++r) {
        M0[r][0] = b[r];
        M1[r][1] = b[r];
        M2[r][2] = b[r];
    }
    const double c0 = det3(M0) / d, c1 = det3(M1) / d, c2 = det3(M2) / d;
    double ss_res = 0.0, ss_tot = 0.0;
    const double mean_y = b0 / n_pts;
    for (const auto i : idx) {
        const double x = pair.grid.node(i), y = state.phi[i];
        const double fit = c0 + c1 * x + c2 * x * x;
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    REQUIRE(ss_res / ss_tot <= 1e-4);
}

TEST_CASE("nonconvergence carries the residual history") {
    SolverConfig cfg = desk_config(256);
    cfg.max_iter = 1;
    cfg.tol_residual = 1e-12;
    const auto pair = acceptance_pair(cfg);
    try {
        solve(pair.mu0, pair.muT, cfg);
        FAIL("expected nonconvergence");
    } catch (const nonconvergence_error& e) {
        REQUIRE_FALSE(e.residual_history.empty());
    }
}
