#include <catch_amalgamated.hpp>

#include <cmath>

#include "sbb/heat.hpp"
#include "sbb/moreau.hpp"

using namespace sbb;

TEST_CASE("kappa closed form and domain") {
    REQUIRE(kappa(0.5, 2.0, 1.0) == Catch::Approx(1.0));
    REQUIRE(kappa(0.0, 1.0, 1.0) == Catch::Approx(0.5));
    REQUIRE(kappa(1.0 - 1e-9, 2.0, 1.0) == Catch::Approx(2.0).margin(1e-8));
    REQUIRE_THROWS_AS(kappa(1.0, 2.0, 1.0), structural_error);
    REQUIRE_THROWS_AS(kappa(-0.1, 2.0, 1.0), structural_error);
}

TEST_CASE("heat flow of a constant stays constant") {
    const Grid g(-8.0, 8.0, 513);
    const GridFunction u = log_heat_convolve(GridFunction::constant(g, 0.0), 0.7);
    for (std::size_t i = g.size() / 8; i < g.size() - g.size() / 8; ++i)
        REQUIRE(std::abs(u[i]) <= 1e-6);
    REQUIRE_THROWS_AS(log_heat_convolve(GridFunction::constant(g, 0.0), 0.0),
                      structural_error);
}

TEST_CASE("heat flow of an affine function adds the Gaussian moment") {
    const Grid g(-8.0, 8.0, 513);
    const auto phi = GridFunction::sample(g, [](double y) { return y; });
    const GridFunction u = log_heat_convolve(phi, 2.0);
    // u_s = a x + a^2 s / 2 = x + 1 for a = 1, s = 2.
    for (std::size_t i = g.size() / 8; i < g.size() - g.size() / 8; ++i)
        REQUIRE(u[i] == Catch::Approx(g.node(i) + 1.0).margin(1e-5));
}

TEST_CASE("heat flow of a Gaussian quadratic matches the closed form at 0") {
    const Grid g(-8.0, 8.0, 1025);
    const auto phi = GridFunction::sample(g, [](double y) { return -0.5 * y * y; });
    const GridFunction u = log_heat_convolve(phi, 0.5);
    REQUIRE(u(0.0) == Catch::Approx(-0.5 * std::log(1.5)).margin(1e-5));
}

TEST_CASE("build_heat_field of zero and affine potentials") {
    const Grid g(-8.0, 8.0, 257);
    const TimeGrid tg(1.0, 32);
    const HeatField zero = build_heat_field(GridFunction::constant(g, 0.0), tg, 2.0);
    for (std::size_t k = 0; k <= 32; ++k) {
        REQUIRE(zero.u[k].max_abs() <= 1e-6);
        REQUIRE(zero.score[k].max_abs() <= 1e-6);
    }
    REQUIRE(zero.u[32].max_abs() == 0.0);  // u[m] stores phi exactly

    const auto affine = GridFunction::sample(g, [](double y) { return y; });
    const HeatField f = build_heat_field(affine, tg, 2.0);
    for (std::size_t k = 0; k <= 32; ++k)
        for (std::size_t i = g.size() / 8; i < g.size() - g.size() / 8; ++i)
            REQUIRE(f.score[k][i] == Catch::Approx(1.0).margin(1e-5));
    REQUIRE(f.semiconvexity_ok);
}

TEST_CASE("discrete backward heat equation residual stays within the frozen bound") {
    const Grid g(-8.0, 8.0, 513);
    const TimeGrid tg(1.0, 64);
    const auto phi = GridFunction::sample(g, [](double y) { return -0.25 * y * y; });
    const HeatField f = build_heat_field(phi, tg, 2.0);
    const double hx = g.spacing(), dt = tg.dt();
    double sup = 0.0;
    for (std::size_t k = 1; k + 1 < tg.steps(); ++k)
        for (std::size_t i = 1; i + 1 < g.size(); ++i) {
            const double dh_dt =
                (std::exp(f.u[k + 1][i]) - std::exp(f.u[k - 1][i])) / (2.0 * dt);
            const double hxx = (std::exp(f.u[k][i + 1]) - 2.0 * std::exp(f.u[k][i]) +
                                std::exp(f.u[k][i - 1])) /
                               (hx * hx);
            sup = std::max(sup, std::abs(dh_dt + 0.5 * hxx));
        }
    // Measured constant on this reference case is ~0.005; frozen at 0.05.
    REQUIRE(sup <= 0.05 * (hx * hx + dt));
}

TEST_CASE("semigroup property within discretization tolerance") {
    const Grid g(-10.0, 10.0, 513);
    const auto phi =
        GridFunction::sample(g, [](double y) { return std::sin(y) - 0.1 * y * y; });
    const GridFunction direct = log_heat_convolve(phi, 0.9);
    const GridFunction staged = log_heat_convolve(log_heat_convolve(phi, 0.4), 0.5);
    for (std::size_t i = g.size() / 6; i < g.size() - g.size() / 6; ++i)
        REQUIRE(staged[i] == Catch::Approx(direct[i]).margin(1e-4));
}

TEST_CASE("heat flow is monotone and commutes with constant shifts") {
    const Grid g(-8.0, 8.0, 257);
    const auto lo = GridFunction::sample(g, [](double y) { return std::cos(y); });
    std::vector<double> up(lo.values());
    for (double& v : up) v += 0.25;
    const GridFunction u_lo = log_heat_convolve(lo, 0.5);
    const GridFunction u_hi = log_heat_convolve(GridFunction(g, std::move(up)), 0.5);
    for (std::size_t i = 0; i < g.size(); ++i) {
        REQUIRE(u_lo[i] <= u_hi[i] + 1e-12);
        REQUIRE(u_hi[i] == Catch::Approx(u_lo[i] + 0.25).margin(1e-10));
    }
}

TEST_CASE("Jensen lower bound for beta-convex potentials") {
    const Grid g(-8.0, 8.0, 513);
    const double beta = 2.0, s = 0.4;
    const auto phi =
        GridFunction::sample(g, [&](double y) { return -0.5 * beta * y * y + y; });
    REQUIRE(is_beta_convex(phi, beta, 1e-9));
    const GridFunction u = log_heat_convolve(phi, s);
    for (std::size_t i = g.size() / 6; i < g.size() - g.size() / 6; ++i)
        REQUIRE(u[i] >= phi[i] - 0.5 * beta * s - 1e-6);
}

TEST_CASE("semiconvexity certificate holds for a beta-convex potential") {
    const Grid g(-10.0, 10.0, 513);
    const TimeGrid tg(1.0, 64);
    const double beta = 2.0;
    // Near the cone boundary: curvature -beta/2 plus a kink.
    const auto phi = GridFunction::sample(
        g, [&](double y) { return -0.25 * beta * y * y + std::abs(y); });
    const HeatField f = build_heat_field(phi, tg, beta);
    REQUIRE(f.semiconvexity_ok);
    REQUIRE(f.semiconvexity_violation <= 0.0);
    REQUIRE(f.warning.empty());
}
