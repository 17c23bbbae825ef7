#pragma once

// Uniform time grids and discretized noise paths.  A path with n steps has
// n+1 nodes t0, t0+dt, ..., t0+n*dt (node i always computed as t0 + i*dt) and
// stores one increment per step and coordinate.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fracouple {

struct UniformGrid {
    double t0 = 0.0;
    double dt = 0.0;
    std::size_t n = 0;

    UniformGrid() = default;
    UniformGrid(double t0_, double dt_, std::size_t n_) : t0(t0_), dt(dt_), n(n_) {
        if (dt <= 0.0) throw std::invalid_argument("UniformGrid: dt must be > 0");
        if (n < 1) throw std::invalid_argument("UniformGrid: n must be >= 1");
    }
    double node(std::size_t i) const { return t0 + static_cast<double>(i) * dt; }
    double t_end() const { return node(n); }
};

// d x n increments, stored coordinate-major: increments[c][i] is the increment
// of coordinate c over step i.  Path value at node i is the prefix sum with
// value 0 at t0 by convention.
struct PathIncrements {
    UniformGrid grid;
    std::size_t d = 0;
    std::vector<std::vector<double>> increments;

    PathIncrements() = default;
    PathIncrements(const UniformGrid& g, std::size_t d_)
        : grid(g), d(d_), increments(d_, std::vector<double>(g.n, 0.0)) {
        if (d < 1) throw std::invalid_argument("path dimension must be >= 1");
    }
    // cumulative value of coordinate c at node i (0 at node 0)
    double value(std::size_t c, std::size_t i) const;
    std::vector<double> values(std::size_t c) const; // all n+1 node values
};

struct WienerPath : PathIncrements {
    using PathIncrements::PathIncrements;
};

struct FbmPath : PathIncrements {
    double H = 0.0;
    FbmPath() = default;
    FbmPath(const UniformGrid& g, std::size_t d_, double H_) : PathIncrements(g, d_), H(H_) {
        if (!(H > 0.5 && H < 1.0))
            throw std::invalid_argument("FbmPath: H must lie strictly in (1/2, 1)");
    }
};

// CSV interchange: header `t,coord_0,...,coord_{d-1}`, cumulative node values,
// 17 significant digits, one row per node.
void write_path_csv(const PathIncrements& p, const std::string& path);
PathIncrements read_path_csv(const std::string& path);

} // namespace fracouple
