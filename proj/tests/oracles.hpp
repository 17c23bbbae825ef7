#pragma once

// Independent numerical oracles used by the unit and acceptance tests.  These
// deliberately avoid the library's own quadrature code paths: plain composite
// Simpson rules on graded panels, refined until the node budget is reached.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracles {

// composite Simpson over [a,b] with m subintervals (m even)
inline double simpson(const std::function<double(double)>& f, double a, double b,
                      std::size_t m) {
    if (m % 2) ++m;
    double h = (b - a) / static_cast<double>(m);
    double s = f(a) + f(b);
    for (std::size_t i = 1; i < m; ++i)
        s += f(a + h * static_cast<double>(i)) * ((i % 2) ? 4.0 : 2.0);
    return s * h / 3.0;
}

// integral over [a,b] with panels graded geometrically toward `sing` (= a or
// b), total node count >= nodes.
inline double graded_simpson(const std::function<double(double)>& f, double a,
                             double b, bool sing_at_b, std::size_t nodes) {
    const int levels = 60;
    std::size_t per = nodes / levels + 2;
    if (per % 2) ++per;
    double s = 0.0, frac = 1.0, w = b - a;
    for (int j = 0; j < levels; ++j) {
        double next = frac * 0.5;
        double lo = sing_at_b ? b - w * frac : a + w * next;
        double hi = sing_at_b ? b - w * next : a + w * frac;
        s += simpson(f, lo, hi, per);
        frac = next;
    }
    return s; // last sliver of relative width 2^-60 dropped (integrable kernel)
}

// (R_T 1_{[-1,0]})(t): oracle for the memory operator on the unit bump
inline double r_bump(double H, double T, double t, std::size_t nodes = 2000000) {
    auto f = [&](double s) {
        return std::pow(T - s, H - 0.5) / (t + T - s);
    };
    return std::pow(t, 0.5 - H) * graded_simpson(f, -1.0, 0.0, true, nodes);
}

// exact fractional Ornstein-Uhlenbeck solution on a grid, from the same noise
// increments, by summation by parts:
//   X_t = e^{-t} x0 + B_t - int_0^t e^{-(t-s)} B_s ds
// (integration by parts of int e^{-(t-s)} dB_s; B piecewise linear)
inline std::vector<double> fou_exact(double x0, const std::vector<double>& b_nodes,
                                     double dt) {
    std::size_t n = b_nodes.size() - 1;
    std::vector<double> x(n + 1);
    x[0] = x0;
    const double ed = std::exp(-dt);
    // I_i = int_0^{t_i} e^{-(t_i-s)} B_s ds, exact for piecewise-linear B:
    // I_{i+1} = e^{-dt} I_i + a (1-e^{-dt}) + m (dt - (1-e^{-dt}))
    double I = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        double a = b_nodes[i - 1];
        double m = (b_nodes[i] - b_nodes[i - 1]) / dt;
        I = ed * I + a * (1.0 - ed) + m * (dt - (1.0 - ed));
        x[i] = std::exp(-static_cast<double>(i) * dt) * x0 + b_nodes[i] - I;
    }
    return x;
}

} // namespace oracles
