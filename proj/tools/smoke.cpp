// Scratch driver for manual experiments; not part of the test suite.
#include <cstdio>

#include "sbb/bridge.hpp"
#include "sbb/dual.hpp"
#include "sbb/measure.hpp"
#include "sbb/reference.hpp"
#include "sbb/simulate.hpp"

int main() {
    using namespace sbb;
    SolverConfig cfg;
    cfg.beta = 2.0;
    cfg.T = 1.0;
    cfg.n = 1024;
    cfg.m = 256;
    Grid g = marginal_grid(0.0, 0.25, 0.0, 1.0, cfg.T, cfg.n);
    std::printf("grid [%g, %g] h=%g\n", g.x_min(), g.x_max(), g.spacing());

    // Moreau closed form check: phi = y^2, beta = 2 -> envelope x^2/2.
    GridFunction quad = GridFunction::sample(g, [](double y) { return y * y; });
    auto mr = moreau_plus(quad, 2.0, g);
    std::printf("moreau quad at x=2: %g (expect 2), argmin %g (expect 1)\n",
                mr.envelope(2.0), mr.argmin(2.0));

    // Heat-flow pair.
    GridMeasure mu0 = gaussian_measure(g, 0.0, 0.25);
    GridMeasure muT_hf = heat_flow_of(mu0, cfg.T);
    DualState hf = solve(mu0, muT_hf, cfg);
    std::printf("heat-flow: iter=%zu obj=%.3e residual=%.3e\n", hf.iteration,
                hf.objective, hf.residual);

    // Gaussian acceptance pair.
    GridMeasure muT = gaussian_measure(g, 0.0, 1.0);
    DualState st = solve(mu0, muT, cfg);
    std::printf("gaussian: iter=%zu obj=%.6f residual=%.3e\n", st.iteration,
                st.objective, st.residual);
    OracleResult orc = gaussian_quadratic_oracle({0.0, 0.25}, {0.0, 1.0}, cfg);
    std::printf("oracle: value=%.6f p=%.4f q=%.4f\n", orc.value, orc.p, orc.q);

    SbbSolution sol = assemble(st, mu0, muT, cfg);
    std::printf("degraded=%d dual=%.6f\n", sol.degraded() ? 1 : 0, sol.dual_value);
    for (const auto& [k, v] : sol.residuals) std::printf("  residual %s = %.3e\n", k.c_str(), v);
    for (const auto& d : sol.degradations) std::printf("  degradation: %s\n", d.c_str());

    SimulationReport rep = simulate(sol, 100000, cfg.seed);
    std::printf("primal=%.6f +- %.6f drift=%.4f diff=%.4f W2T=%.4f slope=%.4f\n",
                rep.primal_cost_mean, rep.primal_cost_stderr, rep.drift_energy,
                rep.diffusion_energy, rep.terminal_W2, rep.martingale_slope);
    std::printf("linear bound=%.6f\n", linear_coupling_bound(mu0, muT, cfg));

    SinkhornResult sb = sinkhorn_sb(mu0, muT, cfg.T, 1e-8);
    std::printf("sinkhorn: value=%.6f iters=%zu res=%.2e\n", sb.value, sb.iterations,
                sb.residual);
    return 0;
}
