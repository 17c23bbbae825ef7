#include "fracouple/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace fracouple {

namespace {

double norm2(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

Vec sub(const Vec& a, const Vec& b) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

double phi_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

void check_finite(const Vec& v, const char* what, std::size_t step) {
    for (double x : v)
        if (!std::isfinite(x)) {
            std::ostringstream os;
            os << what << ": non-finite state at step " << step;
            throw std::runtime_error(os.str());
        }
}

} // namespace

// ---------------------------------------------------------------------------
// localization

Vec varpi_map(const Vec& x, double a) {
    double r = norm2(x);
    if (r <= a) return x;
    double u = a + 1.0 - std::exp(-(r - a));
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * (u / r);
    return y;
}

Mat varpi_jacobian(const Vec& x, double a) {
    const std::size_t d = x.size();
    double r = norm2(x);
    Mat j(d, Vec(d, 0.0));
    if (r <= a) {
        for (std::size_t i = 0; i < d; ++i) j[i][i] = 1.0;
        return j;
    }
    // varpi = u(r) x / r with u = a + 1 - e^{-(r-a)}:
    // J = (u/r) (I - xx^T/r^2) + u'(r) xx^T/r^2
    double u = a + 1.0 - std::exp(-(r - a));
    double up = std::exp(-(r - a));
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t l = 0; l < d; ++l) {
            double proj = x[i] * x[l] / (r * r);
            j[i][l] = (i == l ? u / r : 0.0) - (u / r) * proj + up * proj;
        }
    }
    return j;
}

LocalizedModel localize(const ModelSpec& m, double a) {
    if (!(a > 0.0)) throw std::invalid_argument("localize: radius must be > 0");
    LocalizedModel lm;
    lm.d = m.d;
    lm.a = a;
    lm.varpi = [a](const Vec& x) { return varpi_map(x, a); };
    lm.grad_varpi = [a](const Vec& x) { return varpi_jacobian(x, a); };
    lm.b_loc = [m, a](const Vec& x) { return m.b(varpi_map(x, a)); };
    lm.h_loc = [m, a](const Vec& x) { return m.h(varpi_map(x, a)); };
    lm.drift_y = [m, a](const Vec& y) {
        Vec x = m.h_inverse(y);
        Vec xp = varpi_map(x, a);
        Mat gh = m.grad_h(xp);       // grad h at varpi(x)
        Mat gp = varpi_jacobian(x, a);
        Vec bx = m.b(xp);
        // (grad h_a)(x) b_a(x) = grad h(varpi(x)) grad varpi(x) b(varpi(x))
        Vec t = mat_vec(gp, bx);
        return mat_vec(gh, t);
    };
    return lm;
}

double kappa1_estimate(const LocalizedModel& lm, std::size_t n_probe,
                       double safety) {
    ProbeSpec probe;
    probe.center = Vec(lm.d, 0.0);
    probe.radius = lm.a;
    probe.count = n_probe;
    std::vector<Vec> xs = probe_points(probe, lm.d);
    std::vector<Vec> ys, fs;
    ys.reserve(xs.size());
    fs.reserve(xs.size());
    for (const auto& x : xs) {
        Vec y = lm.h_loc(x);
        ys.push_back(y);
        fs.push_back(lm.drift_y(y));
    }
    double best = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        for (std::size_t j = i + 1; j < ys.size(); ++j) {
            double dy = norm2(sub(ys[j], ys[i]));
            if (dy < 1e-12) continue;
            best = std::max(best, norm2(sub(fs[j], fs[i])) / dy);
        }
        // short-range pair along a coordinate direction (local slope)
        Vec yp = ys[i];
        yp[i % lm.d] += 1e-4;
        Vec fp = lm.drift_y(yp);
        best = std::max(best, norm2(sub(fp, fs[i])) / 1e-4);
    }
    return safety * best;
}

// ---------------------------------------------------------------------------
// configuration

void validate_coupling_config(const CouplingConfig& cfg) {
    if (!(cfg.alpha > 0.0 && cfg.alpha < 0.5))
        throw std::invalid_argument("alpha must lie in (0, 1/2)");
    if (!(cfg.theta > 0.5 && cfg.theta < cfg.H))
        throw std::invalid_argument("theta must lie in (1/2, H)");
    if (!(cfg.beta > 1.0 / (1.0 - 2.0 * cfg.alpha)))
        throw std::invalid_argument(
            "beta must exceed 1/(1-2*alpha) per schedule condition");
    if (!(cfg.c3 >= 2.0 * cfg.c2 - 1e-12))
        throw std::invalid_argument("c3 must be at least 2*c2");
    if (!(cfg.varsigma > 1.0))
        throw std::invalid_argument("varsigma must exceed 1");
    if (!(cfg.delta1 > 0.0 && cfg.delta1 <= 1.0))
        throw std::invalid_argument("delta1 must lie in (0, 1]");
    if (!(cfg.K > 0.0)) throw std::invalid_argument("K must be positive");
    if (!(cfg.dt > 0.0)) throw std::invalid_argument("dt must be positive");
    double n1 = 1.0 / cfg.dt;
    if (std::abs(n1 - std::llround(n1)) > 1e-9)
        throw std::invalid_argument("dt must divide the unit window (1/dt integer)");
    if (!(cfg.rho_hat > 0.0 && cfg.rho_hat < 1.0))
        throw std::invalid_argument("rho_hat must lie in (0, 1)");
    if (!(cfg.C_K >= 1.0))
        throw std::invalid_argument("C_K must be at least 1");
}

std::size_t interval_steps(const CouplingConfig& cfg, std::size_t ell) {
    std::size_t c2_steps =
        static_cast<std::size_t>(std::llround(cfg.c2 / cfg.dt));
    return c2_steps << ell;
}

double delta3_duration(const CouplingConfig& cfg, std::size_t ell,
                       std::size_t k) {
    return cfg.c3 * std::pow(cfg.varsigma, static_cast<double>(k)) *
           std::pow(2.0, cfg.beta * static_cast<double>(ell));
}

std::size_t wait_steps(const CouplingConfig& cfg, std::size_t ell,
                       std::size_t k) {
    double steps = std::ceil(delta3_duration(cfg, ell, k) / cfg.dt - 1e-9);
    if (steps > 4.0e9) steps = 4.0e9; // clipped later against the horizon anyway
    return static_cast<std::size_t>(steps);
}

CouplingConfig make_coupling_config(const ModelSpec& model, double H,
                                    double theta, double dt, double T_hist) {
    CouplingConfig cfg;
    cfg.H = H;
    cfg.theta = theta;
    cfg.dt = dt;
    cfg.T_hist = T_hist;
    return complete_coupling_config(model, cfg);
}

CouplingConfig complete_coupling_config(const ModelSpec& model,
                                        CouplingConfig cfg) {
    const double dt = cfg.dt;
    if (cfg.kernels.alpha_H == 0.0)
        cfg.kernels = make_kernel_params(cfg.H, cfg.theta, cfg.T_hist);

    // Kbar = sup |h(x2) - h(x1)| over the K-ball, by low-discrepancy probing
    ProbeSpec probe;
    probe.center = Vec(model.d, 0.0);
    probe.radius = cfg.K;
    probe.count = 128;
    std::vector<Vec> xs = probe_points(probe, model.d);
    for (std::size_t c = 0; c < model.d; ++c) {
        Vec e(model.d, 0.0);
        e[c] = cfg.K;
        xs.push_back(e);
        e[c] = -cfg.K;
        xs.push_back(e);
    }
    std::vector<Vec> hs;
    hs.reserve(xs.size());
    for (const auto& x : xs) hs.push_back(model.h(x));
    double kbar = 0.0, hbar_K = 0.0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
        hbar_K = std::max(hbar_K, norm2(hs[i]));
        for (std::size_t j = i + 1; j < hs.size(); ++j)
            kbar = std::max(kbar, norm2(sub(hs[j], hs[i])));
    }
    cfg.Kbar = kbar;
    if (cfg.kappa2 == 0.0) cfg.kappa2 = 4.0 * std::sqrt(kbar);

    if (cfg.M == 0.0) cfg.M = 2.0 * cfg.K;
    // C_hat(M, K) = sup{|x| : |h(x)| <= hbar_M + Kbar}; h is coercive for the
    // supported models, so scan radii outward until |h| clears the level
    double hbar_M = 0.0;
    for (const auto& x : xs) {
        Vec xm = x;
        for (double& v : xm) v *= cfg.M / cfg.K;
        hbar_M = std::max(hbar_M, norm2(model.h(xm)));
    }
    double level = hbar_M + kbar;
    double chat = cfg.M;
    for (double r = cfg.M; r <= 100.0 * (cfg.M + 1.0); r += 0.5) {
        double hmin = std::numeric_limits<double>::infinity();
        for (const auto& x : xs) {
            double n = norm2(x);
            if (n < 1e-9) continue;
            Vec dir = x;
            for (double& v : dir) v *= r / n;
            hmin = std::min(hmin, norm2(model.h(dir)));
        }
        chat = r;
        if (hmin > level) break;
    }
    if (cfg.a_loc == 0.0) cfg.a_loc = std::max(cfg.M, chat) + 1.0;
    if (cfg.kappa1 == 0.0)
        cfg.kappa1 = kappa1_estimate(localize(model, cfg.a_loc));
    if (cfg.Cbar == 0.0) {
        double fmax = cfg.kappa1 * kbar + cfg.kappa2 * std::sqrt(kbar);
        cfg.Cbar = 100.0 * (1.0 + fmax * fmax);
    }
    if (cfg.ell_max == 0) {
        double q = std::pow(2.0, -cfg.alpha);
        std::size_t L = 1;
        while (std::pow(q, static_cast<double>(L + 1)) / (1.0 - q) >=
                   cfg.eps_horizon &&
               L < 400)
            ++L;
        cfg.ell_max = L;
    }
    // snap c2 to a whole number of steps, keep c3 consistent
    std::size_t c2s = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(std::ceil(cfg.c2 / dt - 1e-9))));
    cfg.c2 = static_cast<double>(c2s) * dt;
    cfg.c3 = std::max({cfg.c3, 2.0 * cfg.c2,
                       std::log(cfg.delta1 / 2.0) / std::log(cfg.rho_hat)});
    validate_coupling_config(cfg);
    return cfg;
}

// ---------------------------------------------------------------------------
// rho ODE (reference continuum solver)

RhoSolution rho_ode_solve(const Vec& rho0, const std::vector<Vec>& y1_nodes,
                          const std::function<Vec(const Vec&)>& drift_y,
                          double kappa1, double kappa2, const UniformGrid& grid,
                          double tol_zero, double tol_mono, int max_refine) {
    const std::size_t n = grid.n;
    const std::size_t d = rho0.size();
    if (y1_nodes.size() != n + 1)
        throw std::invalid_argument("rho_ode_solve: y1 path/grid mismatch");
    const double dt = grid.dt;
    const double scale = 1.0 + norm2(rho0);

    auto f_of = [&](const Vec& rho) {
        Vec f(d, 0.0);
        double r = norm2(rho);
        if (r == 0.0) return f;
        double coef = -(kappa1 + kappa2 / std::sqrt(r));
        for (std::size_t c = 0; c < d; ++c) f[c] = coef * rho[c];
        return f;
    };
    auto F = [&](std::size_t cell, double frac, const Vec& rho) {
        // y1 at t = node(cell) + frac*dt by linear interpolation
        Vec y(d);
        for (std::size_t c = 0; c < d; ++c)
            y[c] = (1.0 - frac) * y1_nodes[cell][c] + frac * y1_nodes[cell + 1][c];
        Vec yr = y;
        for (std::size_t c = 0; c < d; ++c) yr[c] += rho[c];
        Vec g1 = drift_y(yr), g0 = drift_y(y), f = f_of(rho);
        Vec out(d);
        for (std::size_t c = 0; c < d; ++c) out[c] = g1[c] - g0[c] + f[c];
        return out;
    };

    RhoSolution sol;
    sol.rho.assign(n + 1, Vec(d, 0.0));
    sol.f_cells.assign(n, Vec(d, 0.0));
    sol.rho[0] = rho0;
    if (norm2(rho0) == 0.0) sol.extinction_time = grid.t0;

    for (std::size_t i = 0; i < n; ++i) {
        const Vec& start = sol.rho[i];
        double r_start = norm2(start);
        if (r_start == 0.0) {
            sol.rho[i + 1] = start;
            continue;
        }
        bool done = false;
        for (int refine = 0; refine <= max_refine && !done; ++refine) {
            std::size_t sub = static_cast<std::size_t>(1) << refine;
            double h = dt / static_cast<double>(sub);
            Vec rho = start;
            Vec facc(d, 0.0);
            bool okcell = true;
            double ext = sol.extinction_time;
            for (std::size_t j = 0; j < sub; ++j) {
                double r = norm2(rho);
                if (r == 0.0) break;
                // once sqrt|rho| <= (k2/2) h the square-root pull alone
                // reaches zero within this substep; land there (RK4 would
                // stagnate at a spurious small fixed point instead)
                if (kappa2 > 0.0 && r <= 0.25 * kappa2 * kappa2 * h * h) {
                    Vec fz = f_of(rho);
                    for (std::size_t c = 0; c < d; ++c)
                        facc[c] += 0.5 * h * fz[c];
                    ext = std::min(ext, grid.node(i) + j * h +
                                            2.0 * std::sqrt(r) / kappa2);
                    rho.assign(d, 0.0);
                    break;
                }
                double frac0 = static_cast<double>(j) / sub;
                double frach = (static_cast<double>(j) + 0.5) / sub;
                double frac1 = static_cast<double>(j + 1) / sub;
                Vec k1 = F(i, frac0, rho);
                Vec t1(d), t2(d), t3(d);
                for (std::size_t c = 0; c < d; ++c) t1[c] = rho[c] + 0.5 * h * k1[c];
                Vec k2 = F(i, frach, t1);
                for (std::size_t c = 0; c < d; ++c) t2[c] = rho[c] + 0.5 * h * k2[c];
                Vec k3 = F(i, frach, t2);
                for (std::size_t c = 0; c < d; ++c) t3[c] = rho[c] + h * k3[c];
                Vec k4 = F(i, frac1, t3);
                Vec cand(d);
                for (std::size_t c = 0; c < d; ++c)
                    cand[c] = rho[c] +
                              h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
                double rc = norm2(cand);
                double dotc = 0.0;
                for (std::size_t c = 0; c < d; ++c) dotc += cand[c] * rho[c];
                bool bad = (dotc <= 0.0) || (rc >= r);
                double absorb_scale = 4.0 * (kappa2 * h) * (kappa2 * h);
                if (bad && (r <= absorb_scale || rc < tol_zero * scale)) {
                    // the square-root pull overshoots only at this scale:
                    // land at the absorbing state
                    Vec fz = f_of(rho);
                    for (std::size_t c = 0; c < d; ++c)
                        facc[c] += 0.5 * h * fz[c];
                    rho.assign(d, 0.0);
                    ext = std::min(ext, grid.node(i) + (j + 1) * h);
                    break;
                }
                if (bad) {
                    okcell = false;
                    break;
                }
                if (rc < tol_zero * scale) {
                    Vec fz = f_of(rho);
                    for (std::size_t c = 0; c < d; ++c)
                        facc[c] += 0.5 * h * fz[c];
                    rho.assign(d, 0.0);
                    ext = std::min(ext, grid.node(i) + (j + 1) * h);
                    break;
                }
                Vec fa = f_of(rho), fb = f_of(cand);
                for (std::size_t c = 0; c < d; ++c)
                    facc[c] += 0.5 * h * (fa[c] + fb[c]);
                rho = cand;
            }
            if (okcell && norm2(rho) <= r_start + tol_mono * scale) {
                sol.rho[i + 1] = rho;
                for (std::size_t c = 0; c < d; ++c)
                    sol.f_cells[i][c] = facc[c] / dt;
                sol.extinction_time = ext;
                done = true;
            } else if (refine == max_refine) {
                sol.rho[i + 1] = rho;
                for (std::size_t c = 0; c < d; ++c)
                    sol.f_cells[i][c] = facc[c] / dt;
                sol.ok = false;
                done = true;
            }
        }
    }
    return sol;
}

// ---------------------------------------------------------------------------
// Girsanov

double girsanov_log_density(const std::vector<std::vector<double>>& g_cells,
                            const WienerPath& w) {
    if (g_cells.size() != w.d)
        throw std::invalid_argument("girsanov: dimension mismatch");
    const std::size_t n = w.grid.n;
    double ito = 0.0, l2 = 0.0;
    for (std::size_t c = 0; c < w.d; ++c) {
        if (g_cells[c].size() != n)
            throw std::invalid_argument("girsanov: grid mismatch");
        for (std::size_t i = 0; i < n; ++i) {
            ito += g_cells[c][i] * w.increments[c][i];
            l2 += g_cells[c][i] * g_cells[c][i];
        }
    }
    double lg = ito - 0.5 * l2 * w.grid.dt;
    if (std::abs(lg) > 700.0)
        throw std::runtime_error(
            "girsanov_density: log-density magnitude exceeds 700 (runaway drift)");
    return lg;
}

double girsanov_density(const std::vector<std::vector<double>>& g_cells,
                        const WienerPath& w) {
    return std::exp(girsanov_log_density(g_cells, w));
}

// ---------------------------------------------------------------------------
// scalar shift coupling

namespace {

// integral over [w_lo, min(u, w_hi)] of min(p(t), p(t+a)) for standard
// normal density p; closed form via the normal CDF
struct OverlapWindow {
    double a = 0.0, w_lo = 0.0, w_hi = 0.0;

    double mass_to(double u) const {
        if (u <= w_lo) return 0.0;
        u = std::min(u, w_hi);
        double m = -0.5 * a; // density crossover: p(t+a) smaller beyond m (a>0)
        double total = 0.0;
        if (a >= 0.0) {
            double hi1 = std::min(u, std::max(m, w_lo));
            if (hi1 > w_lo) total += phi_cdf(hi1) - phi_cdf(w_lo);
            double lo2 = std::max(w_lo, m);
            if (u > lo2) total += phi_cdf(u + a) - phi_cdf(lo2 + a);
        } else {
            double hi1 = std::min(u, std::max(m, w_lo));
            if (hi1 > w_lo) total += phi_cdf(hi1 + a) - phi_cdf(w_lo + a);
            double lo2 = std::max(w_lo, m);
            if (u > lo2) total += phi_cdf(u) - phi_cdf(lo2);
        }
        return total;
    }

    // min(p(t), p(t+a)) / p(t) for t inside the window, else 0
    double ratio(double t) const {
        if (t < w_lo || t > w_hi) return 0.0;
        double e = -a * t - 0.5 * a * a; // log(p(t+a)/p(t))
        return e < 0.0 ? std::exp(e) : 1.0;
    }
};

} // namespace

ShiftCouple scalar_shift_coupling(double a, double b, RngStream& rng) {
    if (!(b > 0.0))
        throw std::invalid_argument("scalar_shift_coupling: b must be > 0");
    if (std::abs(a) > b * (1.0 + 1e-12))
        throw std::invalid_argument("scalar_shift_coupling: |a| must be <= b");

    ShiftCouple out;
    out.M_b = std::max(4.0 * b, -2.0 * std::log(b / 8.0));
    const double half = 0.5 * out.M_b;

    OverlapWindow win;
    win.a = a;
    win.w_lo = -half - std::min(a, 0.0); // both t and t+a stay in [-half, half]
    win.w_hi = half - std::max(a, 0.0);
    const double s = win.mass_to(win.w_hi);
    double pi = (b < 1.0) ? 1.0 - 0.75 * b : 0.5 * s;
    if (b < 1.0 && s < pi)
        throw std::logic_error(
            "scalar_shift_coupling: window overlap below target success mass");
    pi = std::min(pi, s);
    out.pi_star = pi;

    out.success = rng.u01() < pi;
    if (out.success) {
        // draw from min(p, p(.+a)) restricted to the window, by rejection
        for (;;) {
            double x = rng.gaussian();
            if (x < win.w_lo || x > win.w_hi) continue;
            if (rng.u01() < win.ratio(x)) {
                out.u1 = x;
                out.u2 = x + a;
                return out;
            }
        }
    }

    // residual branch: U1 from the residual density, U2 by the quantile map
    const double rej = pi / s;
    double u1;
    for (;;) {
        double x = rng.gaussian();
        if (rng.u01() < 1.0 - rej * win.ratio(x)) {
            u1 = x;
            break;
        }
    }
    out.u1 = u1;
    if (a == 0.0) {
        out.u2 = u1; // residuals coincide, quantile map is the identity
        return out;
    }
    // G1(x) = (Phi(x) - pi/s Q(x)) / (1-pi), G2(x) = same with Q(x - a);
    // outside the removal region the two agree, so the far tails sit on the
    // diagonal exactly
    double q1 = win.mass_to(u1);
    double q2 = win.mass_to(u1 - a);
    if (q1 == q2) {
        out.u2 = u1;
        return out;
    }
    double v = phi_cdf(u1) - rej * q1; // (1-pi) G1(u1)
    auto g2 = [&](double x) { return phi_cdf(x) - rej * win.mass_to(x - a); };
    double lo = u1 - out.M_b - 1.0, hi = u1 + out.M_b + 1.0;
    while (g2(lo) > v) lo -= out.M_b;
    while (g2(hi) < v) hi += out.M_b;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++it) {
        double mid = 0.5 * (lo + hi);
        (g2(mid) < v ? lo : hi) = mid;
    }
    out.u2 = 0.5 * (lo + hi);
    return out;
}

// ---------------------------------------------------------------------------
// state machinery

namespace {

// discrete moving-average context shared by the engine internals
struct ConvCtx {
    double dt = 0.0, coef = 0.0;
    std::size_t L = 0;
    std::vector<double> wt;

    ConvCtx(const KernelParams& p, double dt_) : dt(dt_) {
        L = static_cast<std::size_t>(std::llround(p.T_hist / dt));
        coef = p.alpha_H * std::pow(dt, p.H - 0.5) / (p.H + 0.5);
        wt.resize(L + 1);
        for (std::size_t k = 0; k <= L; ++k) wt[k] = mvn_weight(p.H, k);
    }

    // fBm increment at global step i from Wiener increments dw
    double b_increment(const std::vector<double>& dw, std::size_t i) const {
        std::size_t kmax = std::min(i, L);
        double s = 0.0;
        for (std::size_t k = 0; k <= kmax; ++k) s += wt[k] * dw[i - k];
        return coef * s;
    }
};

Vec drift_y_real(const ModelSpec& m, const Vec& y) {
    Vec x = m.h_inverse(y);
    return mat_vec(m.grad_h(x), m.b(x));
}

void refresh_x(CouplingState& st, const ModelSpec& m) {
    st.x1 = m.h_inverse(st.y1);
    st.x2 = st.coupled_since ? st.x1 : m.h_inverse(st.y2);
}

// Window drift g_w solving the discrete forward map
//   coef * sum_k wt[k] g_tot[i-k] = target_f[i]
// for the in-window cells (forward substitution against the recorded
// history), i.e. the exact discrete counterpart of the kernel inversion.
std::vector<std::vector<double>> invert_forward(
    const CouplingState& st, const ConvCtx& cv, std::size_t win,
    const std::vector<Vec>& target_f, std::size_t n) {
    const std::size_t d = st.y1.size();
    std::vector<std::vector<double>> v(d, std::vector<double>(n, 0.0));
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t gi = win + i;
            std::size_t kmax = std::min(gi, cv.L);
            double mem = 0.0;
            for (std::size_t k = 1; k <= kmax; ++k) {
                std::size_t j = gi - k;
                double g = (j >= win) ? v[c][j - win] : st.drift.gw[c][j];
                mem += cv.wt[k] * g;
            }
            double f = target_f.empty() ? 0.0 : target_f[i][c];
            v[c][i] = f / cv.coef - mem;
        }
    }
    return v;
}

// Contracting drift f_h along an Euler companion path: the recursion shares
// the integrator's discretization exactly, so y + rho reproduces the shifted
// system to rounding accuracy.  Returns false if rho failed to reach zero.
bool build_fh(const ModelSpec& m, const Vec& rho0, const std::vector<Vec>& y_nodes,
              double kappa1, double kappa2, double dt, double tol_zero,
              bool forward_gap, std::vector<Vec>& f_cells, std::vector<Vec>& rho_nodes) {
    const std::size_t n = y_nodes.size() - 1;
    const std::size_t d = rho0.size();
    f_cells.assign(n, Vec(d, 0.0));
    rho_nodes.assign(n + 1, Vec(d, 0.0));
    rho_nodes[0] = rho0;
    const double scale = 1.0 + norm2(rho0);
    Vec rho = rho0;
    for (std::size_t i = 0; i < n; ++i) {
        if (norm2(rho) == 0.0) {
            rho_nodes[i + 1] = rho;
            continue;
        }
        Vec rp(d);
        if (forward_gap) {
            // rho tracks y2 - y1 with y1 given: gap drift at (y1 + rho, y1)
            Vec yr = y_nodes[i];
            for (std::size_t c = 0; c < d; ++c) yr[c] += rho[c];
            Vec g1 = drift_y_real(m, yr), g0 = drift_y_real(m, y_nodes[i]);
            for (std::size_t c = 0; c < d; ++c)
                rp[c] = rho[c] + (g1[c] - g0[c]) * dt;
        } else {
            // rho tracks y2 - y1 with y2 given: gap drift at (y2, y2 - rho)
            Vec yr = y_nodes[i];
            for (std::size_t c = 0; c < d; ++c) yr[c] -= rho[c];
            Vec g1 = drift_y_real(m, y_nodes[i]), g0 = drift_y_real(m, yr);
            for (std::size_t c = 0; c < d; ++c)
                rp[c] = rho[c] + (g1[c] - g0[c]) * dt;
        }
        double r = norm2(rp);
        if (r == 0.0) {
            rho = rp;
            rho_nodes[i + 1] = rho;
            continue;
        }
        double pull = (kappa1 + kappa2 / std::sqrt(r)) * dt;
        if (pull >= 1.0 || r * (1.0 - pull) < tol_zero * scale) {
            // the contraction overshoots the origin within one step: land on it
            for (std::size_t c = 0; c < d; ++c) f_cells[i][c] = -rp[c] / dt;
            rho.assign(d, 0.0);
        } else {
            for (std::size_t c = 0; c < d; ++c) {
                f_cells[i][c] = -(kappa1 + kappa2 / std::sqrt(r)) * rp[c];
                rho[c] = rp[c] * (1.0 - pull);
            }
        }
        rho_nodes[i + 1] = rho;
    }
    return norm2(rho) == 0.0;
}

} // namespace

CouplingState make_state(const ModelSpec& m, const Vec& x1, const Vec& x2,
                         const CouplingConfig& cfg, double t_max) {
    if (x1.size() != m.d || x2.size() != m.d)
        throw std::invalid_argument("make_state: state dimension mismatch");
    const double dt = cfg.dt;
    const std::size_t n1 = static_cast<std::size_t>(std::llround(1.0 / dt));
    const std::size_t n_t =
        static_cast<std::size_t>(std::llround(std::ceil(t_max / dt)));
    const std::size_t c2s =
        static_cast<std::size_t>(std::llround(cfg.c2 / dt));
    // capacity: horizon, plus the worst-case overrun of a dyadic interval
    // started just inside it, plus slack for the unit window
    const std::size_t cap = 2 * n_t + 4 * c2s + 3 * n1 + 64;

    CouplingState st;
    UniformGrid grid(0.0, dt, cap);
    st.w1 = WienerPath(grid, m.d);
    st.w2 = WienerPath(grid, m.d);
    st.drift = DriftRecord(grid, m.d, cfg.T_hist);
    st.y1 = m.h(x1);
    st.y2 = m.h(x2);
    st.x1 = x1;
    st.x2 = x2;
    return st;
}

void advance_shared(CouplingState& st, std::size_t n_steps, const ModelSpec& m,
                    const CouplingConfig& cfg, RngStream& rng) {
    if (st.steps + n_steps > st.capacity())
        throw std::runtime_error("advance_shared: state capacity exceeded");
    ConvCtx cv(cfg.kernels, cfg.dt);
    const std::size_t d = m.d;
    const double sdt = std::sqrt(cfg.dt);
    for (std::size_t s = 0; s < n_steps; ++s) {
        std::size_t i = st.steps;
        for (std::size_t c = 0; c < d; ++c) {
            double g = rng.gaussian() * sdt;
            st.w1.increments[c][i] = g;
            st.w2.increments[c][i] = g;
        }
        Vec f1 = drift_y_real(m, st.y1);
        for (std::size_t c = 0; c < d; ++c)
            st.y1[c] += f1[c] * cfg.dt + cv.b_increment(st.w1.increments[c], i);
        if (st.coupled_since) {
            st.y2 = st.y1;
        } else {
            Vec f2 = drift_y_real(m, st.y2);
            for (std::size_t c = 0; c < d; ++c)
                st.y2[c] += f2[c] * cfg.dt + cv.b_increment(st.w2.increments[c], i);
        }
        check_finite(st.y1, "advance_shared", i);
        check_finite(st.y2, "advance_shared", i);
        ++st.steps;
    }
    refresh_x(st, m);
}

// ---------------------------------------------------------------------------
// admissibility

AdmissibilityReport check_admissibility(const CouplingState& st,
                                        const CouplingConfig& cfg) {
    AdmissibilityReport rep;
    const double tau = st.clock();
    const KernelParams& kp = cfg.kernels;
    const double H = cfg.H;
    const double dt = cfg.dt;

    rep.x1_norm = norm2(st.x1);
    rep.x2_norm = norm2(st.x2);
    rep.phi1 = phi_functional(st.w1, tau, kp.eps_theta, kp);
    rep.phi2 = st.coupled_since
                   ? rep.phi1
                   : phi_functional(st.w2, tau, kp.eps_theta, kp);
    rep.pass_omega2 = rep.x1_norm <= cfg.K && rep.x2_norm <= cfg.K &&
                      rep.phi1 <= cfg.K && rep.phi2 <= cfg.K;

    // weighted L2 norm of R_T applied to the drift history, sup over a dyadic
    // T-grid, with rigorous power-law tail surpluses added
    const double T_max = 4.0 * cfg.T_hist;
    rep.T_grid.push_back(0.0);
    for (double T = dt; T <= T_max * (1.0 + 1e-12); T *= 2.0)
        rep.T_grid.push_back(T);

    bool have_hist = false;
    long i_tau = std::llround(tau / dt);
    for (const auto& r : st.drift.nonzero)
        if (static_cast<long>(r.first) < i_tau) have_hist = true;
    if (!have_hist) {
        rep.sup_T_integral = 0.0;
        rep.pass_omega1 = true;
        return rep;
    }

    // t quadrature: geometric slivers inside (0, dt], unit cells to 4, then
    // doubling cells to t_cap (midpoint rule per piece)
    const double t_cap = 4.0 * cfg.T_hist;
    std::vector<double> ts, tw;
    {
        double hi = dt;
        for (int lvl = 0; lvl < 14; ++lvl) {
            double lo = hi * 0.5;
            ts.push_back(0.5 * (lo + hi));
            tw.push_back(hi - lo);
            hi = lo;
        }
        double t = dt;
        double w = dt;
        while (t < t_cap - 1e-12) {
            if (t >= 4.0 && w < t_cap / 16.0) w *= 2.0;
            double end = std::min(t + w, t_cap);
            ts.push_back(0.5 * (t + end));
            tw.push_back(end - t);
            t = end;
        }
    }

    const double e = H + 0.5;
    double sup = 0.0;
    for (double T : rep.T_grid) {
        auto vals = r_operator(st.drift, tau, T, ts, kp);
        double integral = 0.0;
        for (std::size_t mth = 0; mth < ts.size(); ++mth) {
            double v2 = 0.0;
            for (std::size_t c = 0; c < st.drift.d; ++c)
                v2 += vals[c][mth] * vals[c][mth];
            integral +=
                tw[mth] * std::pow(1.0 + ts[mth], 2.0 * cfg.alpha) * v2;
        }
        // C_g = int (T - s)^{H-1/2} |g(s)| ds over the history window gives
        // |R_T g(t)| <= C_g t^{-1/2-H}; add the tail beyond t_cap
        double cg = 0.0;
        const double lo_time = tau - std::min(kp.T_hist, st.drift.horizon);
        for (const auto& r : st.drift.nonzero) {
            std::size_t j1 =
                std::min<std::size_t>(r.second, static_cast<std::size_t>(i_tau));
            for (std::size_t j = r.first; j < j1; ++j) {
                double c0 = st.drift.grid.node(j);
                if (c0 + dt <= lo_time) continue;
                double p = T - (c0 + dt - tau); // T - s at the cell top
                double q = T - (std::max(c0, lo_time) - tau);
                double ker = (std::pow(q, e) - std::pow(p, e)) / e;
                double gn = 0.0;
                for (std::size_t c = 0; c < st.drift.d; ++c)
                    gn += st.drift.gw[c][j] * st.drift.gw[c][j];
                cg += std::sqrt(gn) * ker;
            }
        }
        double tail = cg * cg * std::pow(2.0, 2.0 * cfg.alpha) *
                      std::pow(t_cap, 2.0 * cfg.alpha - 2.0 * H) /
                      (2.0 * H - 2.0 * cfg.alpha);
        // near-zero sliver below the finest quadrature point:
        // |R_T g(t)|^2 (1+t)^{2 alpha} <= C_0^2 t^{1-2H} with the same C_g
        // bound divided by (t + T - s) >= (T - s); reuse cg against kernel
        // (T-s)^{H-3/2} via the crude bound (T - s) >= dt when T = 0
        double eps0 = dt / std::pow(2.0, 14);
        double c0b = cg / std::max(T + dt, dt);
        double near0 = c0b * c0b * std::pow(eps0, 2.0 - 2.0 * H) /
                       (2.0 - 2.0 * H) * std::pow(1.0 + eps0, 2.0 * cfg.alpha);
        sup = std::max(sup, integral + tail + near0);
    }
    rep.sup_T_integral = sup;
    rep.pass_omega1 = sup <= 1.0;
    return rep;
}

// ---------------------------------------------------------------------------
// step 1

Step1Outcome step1_attempt(CouplingState& st, const ModelSpec& m,
                           const LocalizedModel& lm, const CouplingConfig& cfg,
                           RngStream& rng, bool force_attempt) {
    Step1Outcome out;
    const double dt = cfg.dt;
    const std::size_t n1 = static_cast<std::size_t>(std::llround(1.0 / dt));
    const std::size_t d = m.d;
    const std::size_t win = st.steps;
    if (win + n1 > st.capacity())
        throw std::runtime_error("step1_attempt: state capacity exceeded");

    out.admissibility = check_admissibility(st, cfg);
    bool attempt = force_attempt ||
                   (out.admissibility.pass() && rng.u01() < cfg.delta1);
    if (!attempt) {
        advance_shared(st, n1, m, cfg, rng);
        return out; // attempted = false, branch "skipped", g_w = 0 recorded
    }
    out.attempted = true;

    ConvCtx cv(cfg.kernels, dt);
    const double sdt = std::sqrt(dt);

    // base innovation w1 on the window
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t i = 0; i < n1; ++i)
            st.w1.increments[c][win + i] = rng.gaussian() * sdt;

    // companion path y1 along w1
    std::vector<Vec> y1n(n1 + 1, Vec(d, 0.0));
    std::vector<Vec> dB1(n1, Vec(d, 0.0));
    y1n[0] = st.y1;
    for (std::size_t i = 0; i < n1; ++i) {
        Vec f = drift_y_real(m, y1n[i]);
        for (std::size_t c = 0; c < d; ++c) {
            dB1[i][c] = cv.b_increment(st.w1.increments[c], win + i);
            y1n[i + 1][c] = y1n[i][c] + f[c] * dt + dB1[i][c];
        }
        check_finite(y1n[i + 1], "step1_attempt", win + i);
    }

    // contracting drift f_h and its Wiener-level image g_h
    Vec rho0 = sub(st.y2, st.y1);
    std::vector<Vec> f_cells, rho_nodes;
    bool extinct = build_fh(m, rho0, y1n, cfg.kappa1, cfg.kappa2, dt,
                            cfg.tol_zero, true, f_cells, rho_nodes);
    auto g_h = invert_forward(st, cv, win, f_cells, n1);
    double l2 = 0.0, ito1 = 0.0;
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t i = 0; i < n1; ++i) {
            l2 += g_h[c][i] * g_h[c][i] * dt;
            ito1 += g_h[c][i] * st.w1.increments[c][win + i];
        }
    out.girsanov_l2 = l2;
    if (l2 > cfg.Cbar)
        throw std::runtime_error(
            "step1_attempt: Girsanov budget exceeded (int |g_h|^2 > Cbar)");
    double log_a1 = -ito1 - 0.5 * l2;
    out.a1 = log_a1 >= 0.0 ? 1.0 : std::exp(std::max(log_a1, -745.0));

    // inverse construction: companion from y2 along the same noise, rho~ and
    // the drift of psi(w1)
    std::vector<Vec> ty(n1 + 1, Vec(d, 0.0));
    ty[0] = st.y2;
    for (std::size_t i = 0; i < n1; ++i) {
        Vec f = drift_y_real(m, ty[i]);
        for (std::size_t c = 0; c < d; ++c)
            ty[i + 1][c] = ty[i][c] + f[c] * dt + dB1[i][c];
        check_finite(ty[i + 1], "step1_attempt", win + i);
    }
    std::vector<Vec> ft_cells, rt_nodes;
    build_fh(m, rho0, ty, cfg.kappa1, cfg.kappa2, dt, cfg.tol_zero, false,
             ft_cells, rt_nodes);
    std::vector<Vec> neg_ft(n1, Vec(d, 0.0));
    for (std::size_t i = 0; i < n1; ++i)
        for (std::size_t c = 0; c < d; ++c) neg_ft[i][c] = -ft_cells[i][c];
    auto v_swap = invert_forward(st, cv, win, neg_ft, n1); // drift of w2 = psi(w1)
    double l2t = 0.0, itot = 0.0;
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t i = 0; i < n1; ++i) {
            l2t += v_swap[c][i] * v_swap[c][i] * dt;
            itot += -v_swap[c][i] * st.w1.increments[c][win + i];
        }
    double log_a2 = itot - 0.5 * l2t;
    out.a2 = log_a2 >= 0.0 ? 1.0 : std::exp(std::max(log_a2, -745.0));

    // three-branch selection
    double u = rng.u01();
    const std::vector<std::vector<double>>* v = nullptr;
    const std::vector<Vec>* fb = nullptr;
    double fb_sign = 1.0;
    if (u < 0.5 * out.a1) {
        out.branch = "coupled";
        v = &g_h;
        fb = &f_cells;
    } else if (u < 0.5 * (out.a1 + out.a2)) {
        out.branch = "swapped";
        v = &v_swap;
        fb = &ft_cells;
        fb_sign = -1.0;
    } else {
        out.branch = "diagonal";
    }

    // commit w2 and the drift record
    bool any = false;
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t i = 0; i < n1; ++i) {
            double drift = v ? (*v)[c][i] : 0.0;
            st.w2.increments[c][win + i] =
                st.w1.increments[c][win + i] + drift * dt;
            st.drift.gw[c][win + i] = drift;
            st.drift.gb[c][win + i] = fb ? fb_sign * (*fb)[i][c] : 0.0;
            if (drift != 0.0) any = true;
        }
    }
    if (any) st.drift.mark_nonzero(win, win + n1);

    // integrate both systems honestly from their own noises
    st.y1 = y1n[n1];
    for (std::size_t i = 0; i < n1; ++i) {
        Vec f = drift_y_real(m, st.y2);
        for (std::size_t c = 0; c < d; ++c)
            st.y2[c] += f[c] * dt + cv.b_increment(st.w2.increments[c], win + i);
        check_finite(st.y2, "step1_attempt", win + i);
    }
    st.steps += n1;
    st.coupled_since.reset();
    refresh_x(st, m);

    double gap = norm2(sub(st.x2, st.x1));
    if (gap <= cfg.tol_stick_rel * (1.0 + norm2(st.x1))) {
        out.success = true;
        st.y2 = st.y1;
        st.x2 = st.x1;
        st.coupled_since = st.clock();
    }
    (void)extinct;
    return out;
}

// ---------------------------------------------------------------------------
// step 2

std::vector<std::vector<double>> compute_gS(const CouplingState& st, double T1,
                                            const std::vector<double>& ts,
                                            const CouplingConfig& cfg) {
    return r_operator(st.drift, T1, 0.0, ts, cfg.kernels);
}

Step2Outcome step2_attempt(CouplingState& st, std::size_t ell,
                           const ModelSpec& m, const CouplingConfig& cfg,
                           RngStream& rng) {
    if (ell < 1) throw std::invalid_argument("step2_attempt: ell must be >= 1");
    Step2Outcome out;
    const double dt = cfg.dt;
    const std::size_t d = m.d;
    const std::size_t n2 = interval_steps(cfg, ell);
    const std::size_t win = st.steps;
    if (win + n2 > st.capacity())
        throw std::runtime_error("step2_attempt: state capacity exceeded");
    ConvCtx cv(cfg.kernels, dt);
    const double sdt = std::sqrt(dt);

    // discrete continuation of the drift history: the window g_w for which
    // the noise-level drift g_B vanishes identically on the interval
    auto v = invert_forward(st, cv, win, {}, n2);
    double nrm2 = 0.0;
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t i = 0; i < n2; ++i) nrm2 += v[c][i] * v[c][i] * dt;
    out.gS_norm = std::sqrt(nrm2);

    if (out.gS_norm < 1e-200) {
        // no history to cancel: both systems share the innovations
        out.success = true;
        for (std::size_t i = 0; i < n2; ++i)
            for (std::size_t c = 0; c < d; ++c) {
                double g = rng.gaussian() * sdt;
                st.w1.increments[c][win + i] = g;
                st.w2.increments[c][win + i] = g;
            }
    } else {
        double b_ell =
            (ell == 1) ? std::sqrt(cfg.C_K)
                       : std::pow(cfg.c2, -cfg.alpha) * std::sqrt(cfg.C_K) *
                             std::pow(2.0, -cfg.alpha * static_cast<double>(ell));
        double b = std::max(b_ell, out.gS_norm * (1.0 + 1e-12));
        ShiftCouple sc = scalar_shift_coupling(out.gS_norm, b, rng);
        out.success = sc.success;
        out.u1 = sc.u1;
        out.u2 = sc.u2;

        // lift: unit direction e along int g_S, shared orthogonal complement
        double z = 0.0;
        std::vector<std::vector<double>> xi(d, std::vector<double>(n2, 0.0));
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t i = 0; i < n2; ++i) {
                xi[c][i] = rng.gaussian() * sdt;
                z += xi[c][i] * v[c][i] * sdt / out.gS_norm;
            }
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t i = 0; i < n2; ++i) {
                double e = v[c][i] * sdt / out.gS_norm;
                st.w1.increments[c][win + i] = xi[c][i] + (sc.u1 * sdt - z) * e;
                st.w2.increments[c][win + i] = xi[c][i] + (sc.u2 * sdt - z) * e;
            }
        if (out.success) {
            for (std::size_t c = 0; c < d; ++c)
                for (std::size_t i = 0; i < n2; ++i)
                    out.max_lift_err = std::max(
                        out.max_lift_err,
                        std::abs(st.w2.increments[c][win + i] -
                                 st.w1.increments[c][win + i] - v[c][i] * dt));
        }
    }

    // record the realized drift; on success g_B = 0 on the interval by
    // construction of the continuation (residual below rounding)
    bool any = false;
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t i = 0; i < n2; ++i) {
            double g =
                (st.w2.increments[c][win + i] - st.w1.increments[c][win + i]) /
                dt;
            st.drift.gw[c][win + i] = g;
            if (g != 0.0) any = true;
        }
    if (any) st.drift.mark_nonzero(win, win + n2);
    if (!out.success && any) {
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t i = 0; i < n2; ++i) {
                std::size_t gi = win + i;
                std::size_t kmax = std::min(gi, cv.L);
                double s = 0.0;
                for (std::size_t k = 0; k <= kmax; ++k)
                    s += cv.wt[k] * st.drift.gw[c][gi - k];
                st.drift.gb[c][gi] = cv.coef * s;
            }
    }

    // integrate both systems
    for (std::size_t i = 0; i < n2; ++i) {
        std::size_t gi = win + i;
        Vec f1 = drift_y_real(m, st.y1);
        for (std::size_t c = 0; c < d; ++c)
            st.y1[c] += f1[c] * dt + cv.b_increment(st.w1.increments[c], gi);
        Vec f2 = drift_y_real(m, st.y2);
        for (std::size_t c = 0; c < d; ++c)
            st.y2[c] += f2[c] * dt + cv.b_increment(st.w2.increments[c], gi);
        check_finite(st.y1, "step2_attempt", gi);
        check_finite(st.y2, "step2_attempt", gi);
    }
    st.steps += n2;
    st.coupled_since.reset();
    refresh_x(st, m);

    if (out.success) {
        double gap = norm2(sub(st.x2, st.x1));
        if (gap <= cfg.tol_stick_rel * (1.0 + norm2(st.x1))) {
            st.y2 = st.y1;
            st.x2 = st.x1;
            st.coupled_since = st.clock();
        } else {
            out.success = false; // numerical sticking failure, counted honestly
        }
    }
    return out;
}

void step3_wait(CouplingState& st, std::size_t ell, const ModelSpec& m,
                const CouplingConfig& cfg, RngStream& rng) {
    std::size_t n3 = wait_steps(cfg, ell, st.k);
    n3 = std::min(n3, st.capacity() - st.steps);
    advance_shared(st, n3, m, cfg, rng);
}

// ---------------------------------------------------------------------------
// calibration and the scheme

std::size_t tau0_wait(const ModelSpec& m, const Vec& x1, const Vec& x2,
                      const CouplingConfig& cfg) {
    double ex = (2.0 * cfg.theta - 1.0) / 4.0;
    double s = std::pow(m.V(x1), ex) + std::pow(m.V(x2), ex);
    std::size_t u = 0;
    double f = 1.0;
    while (f * s > 1.0 && u < 100000000) {
        f *= cfg.rho_hat;
        ++u;
    }
    return std::max<std::size_t>(u, 1);
}

double measure_CK(CouplingConfig& cfg, const ModelSpec& m, std::size_t n_runs,
                  RngStream& rng) {
    validate_coupling_config(cfg);
    LocalizedModel lm = localize(m, cfg.a_loc);
    const double dt = cfg.dt;
    double best = 0.0;
    for (std::size_t run = 0; run < n_runs; ++run) {
        // representative entry states: uniform in the K-ball, then the
        // shared-noise wait that precedes every first attempt
        Vec x1(m.d), x2(m.d);
        for (int tries = 0;; ++tries) {
            for (std::size_t c = 0; c < m.d; ++c)
                x1[c] = (2.0 * rng.u01() - 1.0) * cfg.K;
            if (norm2(x1) <= cfg.K || tries > 200) break;
        }
        for (int tries = 0;; ++tries) {
            for (std::size_t c = 0; c < m.d; ++c)
                x2[c] = (2.0 * rng.u01() - 1.0) * cfg.K;
            if (norm2(x2) <= cfg.K || tries > 200) break;
        }
        std::size_t u0 = tau0_wait(m, x1, x2, cfg);
        double t_span = static_cast<double>(u0) + 4.0;
        CouplingState st = make_state(m, x1, x2, cfg, t_span);
        advance_shared(st, u0 * static_cast<std::size_t>(std::llround(1.0 / dt)),
                       m, cfg, rng);
        Step1Outcome s1 = step1_attempt(st, m, lm, cfg, rng, true);
        if (!s1.success) continue;

        // weighted tail integral of the continuation past the window
        const double t_cap = 4.0 * cfg.T_hist;
        std::vector<double> ts, tw;
        double hi = dt;
        for (int lvl = 0; lvl < 14; ++lvl) {
            double lo = hi * 0.5;
            ts.push_back(0.5 * (lo + hi));
            tw.push_back(hi - lo);
            hi = lo;
        }
        double t = dt, w = dt;
        while (t < t_cap - 1e-12) {
            if (t >= 4.0 && w < t_cap / 16.0) w *= 2.0;
            double end = std::min(t + w, t_cap);
            ts.push_back(0.5 * (t + end));
            tw.push_back(end - t);
            t = end;
        }
        auto gs = compute_gS(st, st.clock(), ts, cfg);
        double integral = 0.0;
        for (std::size_t i = 0; i < ts.size(); ++i) {
            double v2 = 0.0;
            for (std::size_t c = 0; c < m.d; ++c) v2 += gs[c][i] * gs[c][i];
            integral += tw[i] * std::pow(1.0 + ts[i], 2.0 * cfg.alpha) * v2;
        }
        // power-law tail surplus beyond t_cap (same bound as admissibility)
        const double e = cfg.H + 0.5;
        double cg = 0.0;
        long i_tau = std::llround(st.clock() / dt);
        const double lo_time = st.clock() - cfg.T_hist;
        for (const auto& r : st.drift.nonzero) {
            std::size_t j1 =
                std::min<std::size_t>(r.second, static_cast<std::size_t>(i_tau));
            for (std::size_t j = r.first; j < j1; ++j) {
                double c0 = st.drift.grid.node(j);
                if (c0 + dt <= lo_time) continue;
                double p = -(c0 + dt - st.clock());
                double q = -(std::max(c0, lo_time) - st.clock());
                double ker = (std::pow(q, e) - std::pow(p, e)) / e;
                double gn = 0.0;
                for (std::size_t c = 0; c < m.d; ++c)
                    gn += st.drift.gw[c][j] * st.drift.gw[c][j];
                cg += std::sqrt(gn) * ker;
            }
        }
        integral += cg * cg * std::pow(2.0, 2.0 * cfg.alpha) *
                    std::pow(t_cap, 2.0 * cfg.alpha - 2.0 * cfg.H) /
                    (2.0 * cfg.H - 2.0 * cfg.alpha);
        best = std::max(best, integral);
    }
    double ck = std::max(1.0, 1.5 * best);
    cfg.C_K = ck;
    double c2_raw = std::pow(ck, 1.0 / (2.0 * cfg.alpha));
    std::size_t c2s = static_cast<std::size_t>(std::max<long long>(
        1, std::llround(std::ceil(c2_raw / dt - 1e-9))));
    cfg.c2 = static_cast<double>(c2s) * dt;
    cfg.c3 = std::max(cfg.c3, 2.0 * cfg.c2);
    return ck;
}

CouplingResult run_coupling(const ModelSpec& m, const Vec& x1, const Vec& x2,
                            const CouplingConfig& cfg, double t_max,
                            RngStream& rng) {
    validate_coupling_config(cfg);
    CouplingResult res;
    const double dt = cfg.dt;
    const std::size_t n1 = static_cast<std::size_t>(std::llround(1.0 / dt));
    const std::size_t n_t =
        static_cast<std::size_t>(std::llround(std::ceil(t_max / dt)));

    std::size_t u0 = tau0_wait(m, x1, x2, cfg);
    res.tau0 = static_cast<double>(u0);
    if (res.tau0 > t_max) {
        res.t_censor = t_max;
        return res; // censored during the initial wait, no attempts
    }

    LocalizedModel lm = localize(m, cfg.a_loc);
    CouplingState st = make_state(m, x1, x2, cfg, t_max);
    advance_shared(st, u0 * n1, m, cfg, rng);
    st.tau_prev = st.clock();
    st.k = 1;

    while (st.steps < n_t) {
        TrialRecord tr;
        tr.k = st.k;
        tr.tau_prev = st.clock();

        Step1Outcome s1 = step1_attempt(st, m, lm, cfg, rng);
        tr.attempted = s1.attempted;
        tr.step1_success = s1.success;
        tr.branch = s1.branch;
        tr.girsanov_l2 = s1.girsanov_l2;
        tr.admissibility = s1.admissibility;
        tr.step1_steps = n1;

        bool coupled = false;
        std::size_t ell_fail = 0;
        if (s1.success) {
            std::size_t ell = 1;
            for (;;) {
                if (st.steps >= n_t || ell > cfg.ell_max ||
                    st.steps + interval_steps(cfg, ell) > st.capacity()) {
                    coupled = true; // chain intact through the horizon
                    break;
                }
                Step2Outcome s2 = step2_attempt(st, ell, m, cfg, rng);
                tr.step2_steps += interval_steps(cfg, ell);
                tr.gS_norm_last = s2.gS_norm;
                if (!s2.success) {
                    ell_fail = ell;
                    break;
                }
                ++ell;
            }
        }

        if (coupled) {
            tr.ell_star = -1;
            tr.tau_k = st.clock();
            res.trials.push_back(tr);
            res.coupled = true;
            res.tau_infty = tr.tau_prev + 1.0; // the step-1 snap time
            return res;
        }

        tr.ell_star = static_cast<long>(ell_fail);
        std::size_t before = st.steps;
        step3_wait(st, ell_fail, m, cfg, rng);
        tr.step3_steps = st.steps - before;
        tr.tau_k = st.clock();
        res.trials.push_back(tr);
        st.tau_prev = st.clock();
        ++st.k;
    }
    res.t_censor = t_max;
    return res;
}

// ---------------------------------------------------------------------------
// trial log

void write_trial_log(const std::vector<TrialRecord>& trials,
                     const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_trial_log: cannot open " + path);
    os << "k,attempted,step1_success,ell_star,tau_prev,tau_k,girsanov_l2,"
          "branch,adm_sup_T,adm_phi1,adm_phi2,adm_pass\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& t : trials) {
        os << t.k << ',' << (t.attempted ? 1 : 0) << ','
           << (t.step1_success ? 1 : 0) << ',' << t.ell_star << ','
           << num(t.tau_prev) << ',' << num(t.tau_k) << ','
           << num(t.girsanov_l2) << ',' << t.branch << ','
           << num(t.admissibility.sup_T_integral) << ','
           << num(t.admissibility.phi1) << ',' << num(t.admissibility.phi2)
           << ',' << (t.admissibility.pass() ? 1 : 0) << '\n';
    }
}

} // namespace fracouple
