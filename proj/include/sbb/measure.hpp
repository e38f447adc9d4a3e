#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sbb/grid.hpp"

namespace sbb {

/// Probability measure on a Grid, stored as a density against Lebesgue.
/// Trapezoid mass must equal 1 within 1e-10 after construction.
class GridMeasure {
public:
    GridMeasure(Grid grid, std::vector<double> density, bool renormalize = false)
        : grid_(grid), density_(std::move(density)) {
        if (density_.size() != grid_.size())
            throw structural_error("GridMeasure: density length does not match grid");
        double mass = 0.0;
        for (std::size_t i = 0; i < density_.size(); ++i) {
            if (!(density_[i] >= 0.0))
                throw structural_error("GridMeasure: negative or non-finite density");
            mass += grid_.weight(i) * density_[i];
        }
        if (renormalize) {
            if (!(mass > 0.0))
                throw structural_error("GridMeasure: zero total mass");
            for (double& d : density_) d /= mass;
        } else if (std::abs(mass - 1.0) > 1e-10) {
            throw structural_error("GridMeasure: mass " + std::to_string(mass) +
                                   " deviates from 1 beyond 1e-10");
        }
    }

    const Grid& grid() const { return grid_; }
    const std::vector<double>& density() const { return density_; }
    double operator[](std::size_t i) const { return density_[i]; }

    double mass() const {
        double m = 0.0;
        for (std::size_t i = 0; i < density_.size(); ++i)
            m += grid_.weight(i) * density_[i];
        return m;
    }

    double mean() const {
        double m = 0.0;
        for (std::size_t i = 0; i < density_.size(); ++i)
            m += grid_.weight(i) * density_[i] * grid_.node(i);
        return m;
    }

    double variance() const {
        const double mu = mean();
        double v = 0.0;
        for (std::size_t i = 0; i < density_.size(); ++i) {
            const double d = grid_.node(i) - mu;
            v += grid_.weight(i) * density_[i] * d * d;
        }
        return v;
    }

    /// CDF values at the grid nodes (cumulative trapezoid, clamped to [0,1]).
    std::vector<double> cdf() const {
        std::vector<double> c(density_.size());
        c[0] = 0.0;
        const double h = grid_.spacing();
        for (std::size_t i = 1; i < density_.size(); ++i)
            c[i] = c[i - 1] + 0.5 * h * (density_[i - 1] + density_[i]);
        for (double& v : c) v = std::min(v, 1.0);
        c.back() = 1.0;
        return c;
    }

private:
    Grid grid_;
    std::vector<double> density_;
};

/// Spatial domain wide enough to hold a marginal pair plus the heat flow
/// over horizon T: [lo - 8*sigma_max - 4*sqrt(T), hi + 8*sigma_max + 4*sqrt(T)].
inline Grid marginal_grid(double mean0, double var0, double meanT, double varT,
                          double horizon, std::size_t n) {
    const double sigma_max = std::sqrt(std::max(var0, varT));
    const double pad = 8.0 * sigma_max + 4.0 * std::sqrt(horizon);
    return Grid(std::min(mean0, meanT) - pad, std::max(mean0, meanT) + pad, n);
}

/// Truncated Gaussian density on the given grid, renormalized.
inline GridMeasure gaussian_measure(const Grid& grid, double mean, double var) {
    if (!(var > 0.0)) throw structural_error("gaussian_measure: variance must be positive");
    std::vector<double> d(grid.size());
    const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * var);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double z = grid.node(i) - mean;
        d[i] = norm * std::exp(-0.5 * z * z / var);
    }
    return GridMeasure(grid, std::move(d), /*renormalize=*/true);
}

/// mu * N_T computed by direct grid convolution with the heat kernel.
/// The discretization-consistent way to build a heat-flow pair.
inline GridMeasure heat_flow_of(const GridMeasure& mu, double horizon) {
    if (!(horizon > 0.0)) throw structural_error("heat_flow_of: horizon must be positive");
    const Grid& g = mu.grid();
    const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * horizon);
    std::vector<double> out(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) {
            const double z = g.node(i) - g.node(j);
            acc += g.weight(j) * mu[j] * std::exp(-0.5 * z * z / horizon);
        }
        out[i] = norm * acc;
    }
    return GridMeasure(g, std::move(out), /*renormalize=*/true);
}

/// Trapezoid value of the pairing mu(f).
inline double quadrature(const GridFunction& f, const GridMeasure& mu) {
    if (f.grid() != mu.grid())
        throw structural_error("quadrature: grid mismatch between function and measure");
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        acc += mu.grid().weight(i) * f[i] * mu[i];
    return acc;
}

/// Pushforward map#mu onto the target grid by cloud-in-cell deposit.
/// The map must be monotone nondecreasing on the source grid up to ties.
inline GridMeasure pushforward(const GridFunction& map, const GridMeasure& mu,
                               const Grid& target) {
    if (map.grid() != mu.grid())
        throw structural_error("pushforward: map and measure grids differ");
    const Grid& src = mu.grid();
    const double tie_tol = 1e-9 * src.spacing();
    // Ties (tiny adjacent decreases) keep the left value.
    std::vector<double> m(map.values());
    for (std::size_t i = 1; i < m.size(); ++i) {
        if (m[i] < m[i - 1]) {
            if (m[i - 1] - m[i] > tie_tol)
                throw structural_error("pushforward: map not monotone nondecreasing");
            m[i] = m[i - 1];
        }
    }
    std::vector<double> deposit(target.size(), 0.0);
    double lost = 0.0, total = 0.0;
    const double ht = target.spacing();
    auto put = [&](double z, double mass) {
        if (z < target.x_min() || z > target.x_max()) {
            lost += mass;
            return;
        }
        auto i = static_cast<std::size_t>((z - target.x_min()) / ht);
        if (i >= target.size() - 1) i = target.size() - 2;
        const double frac = (z - target.node(i)) / ht;
        deposit[i] += mass * (1.0 - frac);
        deposit[i + 1] += mass * frac;
    };
    const auto ns = src.size();
    for (std::size_t j = 0; j < ns; ++j) {
        const double mass = src.weight(j) * mu[j];
        if (mass == 0.0) continue;
        total += mass;
        // Point deposit where the map is locally a translation (exact for the
        // identity). Anywhere else, spread each node's mass over its image
        // interval: point deposits of a locally expanding or contracting map
        // alias against the target mesh, carving moire ripples into the
        // deposited density.
        const double wl = j > 0 ? m[j] - m[j - 1] : ht;
        const double wr = j + 1 < ns ? m[j + 1] - m[j] : ht;
        if (std::abs(wl - ht) <= 1e-3 * ht && std::abs(wr - ht) <= 1e-3 * ht) {
            put(m[j], mass);
            continue;
        }
        for (int side = 0; side < 2; ++side) {
            if ((side == 0 && j == 0) || (side == 1 && j + 1 == ns)) {
                put(m[j], 0.5 * mass);
                continue;
            }
            const double za = side == 0 ? 0.5 * (m[j - 1] + m[j]) : m[j];
            const double zb = side == 0 ? m[j] : 0.5 * (m[j] + m[j + 1]);
            const int sub_count = std::clamp(
                static_cast<int>(std::ceil(16.0 * std::abs(zb - za) / ht)), 1, 64);
            const double sub_mass = 0.5 * mass / sub_count;
            for (int k = 0; k < sub_count; ++k)
                put(za + (zb - za) * (k + 0.5) / sub_count, sub_mass);
        }
    }
    if (total > 0.0 && lost / total > 1e-10) {
        std::ostringstream os;
        os << "pushforward: lost mass fraction " << lost / total
           << " (mapped support leaves the target grid)";
        throw structural_error(os.str());
    }
    for (std::size_t i = 0; i < target.size(); ++i) deposit[i] /= target.weight(i);
    return GridMeasure(target, std::move(deposit), /*renormalize=*/true);
}

/// Quantile function of mu evaluated on a p-grid by inverting the
/// linear-interpolated nodal CDF.
inline std::vector<double> quantiles(const GridMeasure& mu, std::size_t p_count) {
    const auto c = mu.cdf();
    const Grid& g = mu.grid();
    std::vector<double> q(p_count);
    std::size_t j = 0;
    for (std::size_t k = 0; k < p_count; ++k) {
        const double p = (static_cast<double>(k) + 0.5) / static_cast<double>(p_count);
        while (j + 2 < c.size() && c[j + 1] <= p) ++j;
        const double dc = c[j + 1] - c[j];
        const double w = dc > 0.0 ? std::clamp((p - c[j]) / dc, 0.0, 1.0) : 0.0;
        q[k] = g.node(j) + w * g.spacing();
    }
    return q;
}

/// 1-D 2-Wasserstein distance via quantile functions.
inline double wasserstein2(const GridMeasure& mu, const GridMeasure& nu,
                           std::size_t p_count = 4096) {
    const auto qm = quantiles(mu, p_count);
    const auto qn = quantiles(nu, p_count);
    double acc = 0.0;
    for (std::size_t k = 0; k < p_count; ++k) {
        const double d = qm[k] - qn[k];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(p_count));
}

/// W2 between an empirical sample and a grid measure (sample quantiles vs
/// measure quantiles on the same p-grid).
inline double wasserstein2_sample(std::vector<double> sample_points, const GridMeasure& mu,
                                  std::size_t p_count = 4096) {
    if (sample_points.empty()) throw structural_error("wasserstein2_sample: empty sample");
    std::sort(sample_points.begin(), sample_points.end());
    const auto qm = quantiles(mu, p_count);
    const auto n = sample_points.size();
    double acc = 0.0;
    for (std::size_t k = 0; k < p_count; ++k) {
        const double p = (static_cast<double>(k) + 0.5) / static_cast<double>(p_count);
        const double pos = p * static_cast<double>(n) - 0.5;
        double qs;
        if (pos <= 0.0) {
            qs = sample_points.front();
        } else if (pos >= static_cast<double>(n - 1)) {
            qs = sample_points.back();
        } else {
            const auto i = static_cast<std::size_t>(pos);
            const double w = pos - static_cast<double>(i);
            qs = (1.0 - w) * sample_points[i] + w * sample_points[i + 1];
        }
        const double d = qs - qm[k];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(p_count));
}

/// Kolmogorov-Smirnov statistic between a sample and a grid measure.
inline double ks_sample(std::vector<double> sample_points, const GridMeasure& mu) {
    if (sample_points.empty()) throw structural_error("ks_sample: empty sample");
    std::sort(sample_points.begin(), sample_points.end());
    const auto c = mu.cdf();
    const Grid& g = mu.grid();
    const auto n = sample_points.size();
    auto cdf_at = [&](double x) {
        if (x <= g.x_min()) return 0.0;
        if (x >= g.x_max()) return 1.0;
        auto i = static_cast<std::size_t>((x - g.x_min()) / g.spacing());
        if (i >= g.size() - 1) i = g.size() - 2;
        const double w = (x - g.node(i)) / g.spacing();
        return (1.0 - w) * c[i] + w * c[i + 1];
    };
    double ks = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = cdf_at(sample_points[i]);
        const double lo = static_cast<double>(i) / static_cast<double>(n);
        const double hi = static_cast<double>(i + 1) / static_cast<double>(n);
        ks = std::max(ks, std::max(std::abs(f - lo), std::abs(f - hi)));
    }
    return ks;
}

namespace detail {
// splitmix64; used to derive independent per-path streams from (seed, index).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// xoshiro-style generator state from two splitmix outputs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        s0_ = splitmix64(seed);
        s1_ = splitmix64(s0_ ^ 0xa5a5a5a5a5a5a5a5ULL);
    }
    std::uint64_t next_u64() {
        const std::uint64_t r = s0_ + s1_;
        std::uint64_t t = s1_ ^ s0_;
        s0_ = ((s0_ << 55) | (s0_ >> 9)) ^ t ^ (t << 14);
        s1_ = (t << 36) | (t >> 28);
        return r;
    }
    /// Uniform in (0, 1).
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }
    /// Standard normal via Box-Muller (first component only; reproducible).
    double next_normal() {
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t s0_, s1_;
};
}  // namespace detail

/// Inverse-CDF draw of a single point given a uniform in (0,1).
inline double inverse_cdf(const GridMeasure& mu, const std::vector<double>& cdf_nodes,
                          double p) {
    const Grid& g = mu.grid();
    const auto n = g.size();
    auto it = std::upper_bound(cdf_nodes.begin(), cdf_nodes.end(), p);
    std::size_t j = it == cdf_nodes.begin()
                        ? 0
                        : static_cast<std::size_t>(it - cdf_nodes.begin()) - 1;
    if (j >= n - 1) j = n - 2;
    const double dc = cdf_nodes[j + 1] - cdf_nodes[j];
    const double w = dc > 0.0 ? std::clamp((p - cdf_nodes[j]) / dc, 0.0, 1.0) : 0.0;
    return g.node(j) + w * g.spacing();
}

/// count i.i.d. draws from mu, deterministic given the seed.
inline std::vector<double> sample(const GridMeasure& mu, std::size_t count,
                                  std::uint64_t seed) {
    if (count < 1) throw structural_error("sample: count must be >= 1");
    const auto c = mu.cdf();
    detail::Rng rng(seed);
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = inverse_cdf(mu, c, rng.next_uniform());
    return out;
}

/// Load a measure from CSV with header "x,density". The x column must match
/// the uniform grid it implies; the density is renormalized to mass 1.
inline GridMeasure load_measure_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw structural_error("load_measure_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw structural_error("load_measure_csv: empty file " + path);
    // Tolerate an optional BOM and whitespace around the header.
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line = line.substr(3);
    std::string header = line;
    header.erase(std::remove_if(header.begin(), header.end(),
                                [](unsigned char ch) { return std::isspace(ch); }),
                 header.end());
    if (header != "x,density")
        throw structural_error("load_measure_csv: expected header 'x,density' in " + path);
    std::vector<double> xs, ds;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string a, b;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b))
            throw structural_error("load_measure_csv: malformed row in " + path);
        xs.push_back(std::stod(a));
        ds.push_back(std::stod(b));
    }
    if (xs.size() < 16) throw structural_error("load_measure_csv: need at least 16 rows");
    Grid g(xs.front(), xs.back(), xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (std::abs(xs[i] - g.node(i)) > 1e-8 * (1.0 + std::abs(xs[i])))
            throw structural_error("load_measure_csv: x column is not a uniform grid");
    return GridMeasure(g, std::move(ds), /*renormalize=*/true);
}

}  // namespace sbb
