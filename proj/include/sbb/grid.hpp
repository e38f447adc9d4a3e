#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbb {

/// Thrown when inputs violate a structural precondition (grid mismatch,
/// invalid parameters, non-monotone maps, ...).
struct structural_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Uniform one-dimensional spatial mesh.
class Grid {
public:
    Grid(double x_min, double x_max, std::size_t n)
        : x_min_(x_min), x_max_(x_max), n_(n) {
        if (n < 16)
            throw structural_error("Grid: need at least 16 nodes, got " + std::to_string(n));
        if (!(x_min < x_max))
            throw structural_error("Grid: x_min must be < x_max");
        h_ = (x_max - x_min) / static_cast<double>(n - 1);
    }

    double x_min() const { return x_min_; }
    double x_max() const { return x_max_; }
    std::size_t size() const { return n_; }
    double spacing() const { return h_; }

    double node(std::size_t i) const { return x_min_ + static_cast<double>(i) * h_; }

    /// Index of the node nearest to x (clamped to the grid).
    std::size_t nearest(double x) const {
        if (x <= x_min_) return 0;
        if (x >= x_max_) return n_ - 1;
        const auto i = static_cast<std::size_t>(std::lround((x - x_min_) / h_));
        return i >= n_ ? n_ - 1 : i;
    }

    /// Trapezoid quadrature weight of node i.
    double weight(std::size_t i) const {
        return (i == 0 || i == n_ - 1) ? 0.5 * h_ : h_;
    }

    bool operator==(const Grid& other) const {
        return x_min_ == other.x_min_ && x_max_ == other.x_max_ && n_ == other.n_;
    }
    bool operator!=(const Grid& other) const { return !(*this == other); }

private:
    double x_min_, x_max_;
    std::size_t n_;
    double h_;
};

/// Uniform time mesh on [0, T], nodes t_k = kT/m for k = 0..m.
class TimeGrid {
public:
    TimeGrid(double horizon, std::size_t steps) : T_(horizon), m_(steps) {
        if (!(horizon > 0.0))
            throw structural_error("TimeGrid: horizon must be positive");
        if (steps < 16)
            throw structural_error("TimeGrid: need at least 16 steps");
    }

    double horizon() const { return T_; }
    std::size_t steps() const { return m_; }
    double dt() const { return T_ / static_cast<double>(m_); }
    double node(std::size_t k) const {
        return k == m_ ? T_ : T_ * static_cast<double>(k) / static_cast<double>(m_);
    }

private:
    double T_;
    std::size_t m_;
};

/// Real-valued field sampled on a Grid. Off-node evaluation is piecewise
/// linear; outside [x_min, x_max] it continues the boundary slope.
class GridFunction {
public:
    GridFunction(Grid grid, std::vector<double> values)
        : grid_(grid), values_(std::move(values)) {
        if (values_.size() != grid_.size())
            throw structural_error("GridFunction: value count does not match grid");
        for (double v : values_)
            if (!std::isfinite(v))
                throw structural_error("GridFunction: non-finite value");
    }

    static GridFunction constant(const Grid& grid, double c) {
        return GridFunction(grid, std::vector<double>(grid.size(), c));
    }

    template <typename F>
    static GridFunction sample(const Grid& grid, F&& f) {
        std::vector<double> v(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) v[i] = f(grid.node(i));
        return GridFunction(grid, std::move(v));
    }

    const Grid& grid() const { return grid_; }
    const std::vector<double>& values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    std::size_t size() const { return values_.size(); }

    double operator()(double x) const {
        const auto n = grid_.size();
        const double h = grid_.spacing();
        if (x <= grid_.x_min())
            return values_[0] + (x - grid_.x_min()) * (values_[1] - values_[0]) / h;
        if (x >= grid_.x_max())
            return values_[n - 1] +
                   (x - grid_.x_max()) * (values_[n - 1] - values_[n - 2]) / h;
        auto i = static_cast<std::size_t>((x - grid_.x_min()) / h);
        if (i >= n - 1) i = n - 2;
        const double w = (x - grid_.node(i)) / h;
        return (1.0 - w) * values_[i] + w * values_[i + 1];
    }

    /// Central-difference derivative field, one-sided at the boundaries.
    GridFunction derivative() const {
        const auto n = grid_.size();
        const double h = grid_.spacing();
        std::vector<double> d(n);
        d[0] = (values_[1] - values_[0]) / h;
        for (std::size_t i = 1; i + 1 < n; ++i)
            d[i] = (values_[i + 1] - values_[i - 1]) / (2.0 * h);
        d[n - 1] = (values_[n - 1] - values_[n - 2]) / h;
        return GridFunction(grid_, std::move(d));
    }

    /// Second-difference field; boundary nodes copy their interior neighbor.
    GridFunction second_difference() const {
        const auto n = grid_.size();
        const double h2 = grid_.spacing() * grid_.spacing();
        std::vector<double> d(n);
        for (std::size_t i = 1; i + 1 < n; ++i)
            d[i] = (values_[i + 1] - 2.0 * values_[i] + values_[i - 1]) / h2;
        d[0] = d[1];
        d[n - 1] = d[n - 2];
        return GridFunction(grid_, std::move(d));
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : values_) m = std::max(m, std::abs(v));
        return m;
    }

private:
    Grid grid_;
    std::vector<double> values_;
};

}  // namespace sbb
