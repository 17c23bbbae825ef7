#include "fracouple/models.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fracouple {

namespace {

Mat identity(std::size_t d) {
    Mat m(d, Vec(d, 0.0));
    for (std::size_t i = 0; i < d; ++i) m[i][i] = 1.0;
    return m;
}

double norm2sq(const Vec& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
}

double inf_norm(const Mat& a) {
    double m = 0.0;
    for (const auto& row : a) {
        double s = 0.0;
        for (double v : row) s += std::abs(v);
        m = std::max(m, s);
    }
    return m;
}

} // namespace

Mat mat_inverse(const Mat& a) {
    const std::size_t d = a.size();
    Mat m = a, inv = identity(d);
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t best = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(m[r][col]) > std::abs(m[best][col])) best = r;
        if (m[best][col] == 0.0)
            throw std::runtime_error("mat_inverse: singular matrix");
        std::swap(m[col], m[best]);
        std::swap(inv[col], inv[best]);
        double p = m[col][col];
        for (std::size_t k = 0; k < d; ++k) {
            m[col][k] /= p;
            inv[col][k] /= p;
        }
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            double f = m[r][col];
            if (f == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) {
                m[r][k] -= f * m[col][k];
                inv[r][k] -= f * inv[col][k];
            }
        }
    }
    return inv;
}

Vec mat_vec(const Mat& a, const Vec& x) {
    Vec y(a.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) y[i] += a[i][j] * x[j];
    return y;
}

ModelSpec make_model(const std::string& name, std::size_t d, double rho_rot) {
    ModelSpec m;
    m.name = name;
    if (name == "scalar_sin") {
        m.d = 1;
        m.b = [](const Vec& x) { return Vec{-x[0]}; };
        m.sigma = [](const Vec& x) {
            return Mat{{1.0 / (1.0 + 0.5 * std::sin(x[0]))}};
        };
        m.h = [](const Vec& x) { return Vec{x[0] - 0.5 * std::cos(x[0])}; };
        m.grad_h = [](const Vec& x) { return Mat{{1.0 + 0.5 * std::sin(x[0])}}; };
        m.h_inverse = [](const Vec& y) {
            // h is strictly increasing with h' >= 1/2: Newton from y
            double x = y[0];
            for (int it = 0; it < 100; ++it) {
                double f = x - 0.5 * std::cos(x) - y[0];
                double fp = 1.0 + 0.5 * std::sin(x);
                double dx = f / fp;
                x -= dx;
                if (std::abs(dx) < 1e-15) break;
            }
            return Vec{x};
        };
        m.V = [](const Vec& x) { return 1.0 + x[0] * x[0]; };
        m.grad_V = [](const Vec& x) { return Vec{2.0 * x[0]}; };
        m.beta0 = 2.0;
        m.kappa0 = 2.0;
        m.sigma_bound = 2.0;
        return m;
    }
    if (name == "planar_rotation") {
        m.d = 2;
        m.b = [rho_rot](const Vec& z) {
            double r = std::sqrt(z[0] * z[0] + z[1] * z[1]);
            if (r == 0.0) return Vec{0.0, 0.0};
            double c = z[0] / r; // cos of the angle of z
            return Vec{-z[0] - rho_rot * c * (-z[1]), -z[1] - rho_rot * c * z[0]};
        };
        m.sigma = [](const Vec&) { return identity(2); };
        m.h = [](const Vec& z) { return z; };
        m.grad_h = [](const Vec&) { return identity(2); };
        m.h_inverse = [](const Vec& y) { return y; };
        m.V = [](const Vec& z) { return 1.0 + norm2sq(z); };
        m.grad_V = [](const Vec& z) { return Vec{2.0 * z[0], 2.0 * z[1]}; };
        m.beta0 = 2.0;
        m.kappa0 = 2.0;
        m.sigma_bound = 1.0;
        return m;
    }
    if (name == "additive_baseline") {
        m.d = d;
        m.b = [](const Vec& x) {
            Vec y(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
            return y;
        };
        m.sigma = [d](const Vec&) { return identity(d); };
        m.h = [](const Vec& x) { return x; };
        m.grad_h = [d](const Vec&) { return identity(d); };
        m.h_inverse = [](const Vec& y) { return y; };
        m.V = [](const Vec& x) { return 1.0 + norm2sq(x); };
        m.grad_V = [](const Vec& x) {
            Vec y(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = 2.0 * x[i];
            return y;
        };
        m.beta0 = 2.0;
        m.kappa0 = 2.0;
        m.sigma_bound = 1.0;
        return m;
    }
    throw std::invalid_argument(
        "make_model: unknown model '" + name +
        "' (available: scalar_sin, planar_rotation, additive_baseline)");
}

Trajectory integrate(const ModelSpec& model, const Vec& x0, const FbmPath& fbm) {
    if (fbm.d != model.d)
        throw std::invalid_argument("integrate: noise dimension mismatch");
    if (x0.size() != model.d)
        throw std::invalid_argument("integrate: initial-condition dimension mismatch");
    const double dt = fbm.grid.dt;
    Trajectory traj(fbm.grid, model.d);
    traj.states[0] = x0;
    for (std::size_t i = 0; i < fbm.grid.n; ++i) {
        const Vec& x = traj.states[i];
        Vec drift = model.b(x);
        Mat sig = model.sigma(x);
        Vec& next = traj.states[i + 1];
        for (std::size_t c = 0; c < model.d; ++c) {
            double db = 0.0;
            for (std::size_t k = 0; k < model.d; ++k)
                db += sig[c][k] * fbm.increments[k][i];
            next[c] = x[c] + drift[c] * dt + db;
        }
        for (double v : next)
            if (!std::isfinite(v)) {
                std::ostringstream os;
                os << "integrate: non-finite state at step " << (i + 1)
                   << " (t = " << fbm.grid.node(i + 1) << ")";
                throw std::runtime_error(os.str());
            }
    }
    return traj;
}

std::vector<Vec> probe_points(const ProbeSpec& probe, std::size_t d) {
    if (probe.count < 1)
        throw std::invalid_argument("probe_points: need at least one point");
    Vec center = probe.center;
    if (center.empty()) center.assign(d, 0.0);
    if (center.size() != d)
        throw std::invalid_argument("probe_points: center dimension mismatch");
    static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};
    std::vector<Vec> pts;
    pts.reserve(probe.count);
    const double scale = probe.radius / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < probe.count; ++i) {
        Vec p(d);
        for (std::size_t c = 0; c < d; ++c) {
            // Halton radical inverse in base primes[c % 10]
            int base = primes[c % 10];
            double u = 0.0, f = 1.0 / base;
            std::size_t k = i + 1;
            while (k) {
                u += f * static_cast<double>(k % base);
                k /= base;
                f /= base;
            }
            p[c] = center[c] + scale * (2.0 * u - 1.0);
        }
        pts.push_back(std::move(p));
    }
    return pts;
}

AssumptionReport check_h1(const ModelSpec& m, const ProbeSpec& probe) {
    AssumptionReport rep;
    rep.worst = -1e300;
    for (const Vec& x : probe_points(probe, m.d)) {
        Vec gv = m.grad_V(x), bx = m.b(x);
        double lhs = 0.0;
        for (std::size_t i = 0; i < m.d; ++i) lhs += gv[i] * bx[i];
        double margin = lhs - (m.beta0 - m.kappa0 * m.V(x));
        if (margin > rep.worst) {
            rep.worst = margin;
            rep.argmax = x;
        }
    }
    rep.pass = rep.worst <= 1e-9;
    return rep;
}

AssumptionReport check_h2(const ModelSpec& m, const ProbeSpec& probe,
                          double tol_fd) {
    AssumptionReport rep;
    rep.worst = 0.0;
    const double step = 1e-5;
    auto sigma_inv = [&](const Vec& x) { return mat_inverse(m.sigma(x)); };
    for (const Vec& x : probe_points(probe, m.d)) {
        Mat sig = m.sigma(x);
        Mat inv = mat_inverse(sig);
        double cond = inf_norm(sig) * inf_norm(inv);
        rep.worst_cond = std::max(rep.worst_cond, cond);

        double dev = 0.0;
        // (i) grad_h * sigma = Identity
        Mat gh = m.grad_h(x);
        for (std::size_t i = 0; i < m.d; ++i)
            for (std::size_t j = 0; j < m.d; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < m.d; ++k) s += gh[i][k] * sig[k][j];
                dev = std::max(dev, std::abs(s - (i == j ? 1.0 : 0.0)));
            }
        // (ii) finite-difference Jacobian of h matches sigma^{-1}
        for (std::size_t j = 0; j < m.d; ++j) {
            Vec xp = x, xm = x;
            xp[j] += step;
            xm[j] -= step;
            Vec hp = m.h(xp), hm = m.h(xm);
            for (std::size_t i = 0; i < m.d; ++i) {
                double fd = (hp[i] - hm[i]) / (2.0 * step);
                dev = std::max(dev, std::abs(fd - inv[i][j]));
            }
        }
        // (iii) cross-derivative symmetry of sigma^{-1} (integrability)
        for (std::size_t k = 0; k < m.d; ++k) {
            Vec xp = x, xm = x;
            xp[k] += step;
            xm[k] -= step;
            Mat ip = sigma_inv(xp), im = sigma_inv(xm);
            for (std::size_t i = 0; i < m.d; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    double dk_ij = (ip[i][j] - im[i][j]) / (2.0 * step);
                    Vec yp = x, ym = x;
                    yp[j] += step;
                    ym[j] -= step;
                    Mat jp = sigma_inv(yp), jm = sigma_inv(ym);
                    double dj_ik = (jp[i][k] - jm[i][k]) / (2.0 * step);
                    dev = std::max(dev, std::abs(dk_ij - dj_ik));
                }
        }
        if (dev > rep.worst) {
            rep.worst = dev;
            rep.argmax = x;
        }
    }
    rep.pass = rep.worst <= tol_fd;
    return rep;
}

ContractionReport contraction_estimate(const ModelSpec& m,
                                       const KernelParams& params,
                                       std::size_t n_paths, double dt,
                                       RngStream& rng) {
    ContractionReport rep;
    const double psi_exp = (2.0 * params.theta - 1.0) / 4.0;
    auto Psi = [&](const Vec& x) { return std::pow(m.V(x), psi_exp); };

    // initial points: origin plus low-discrepancy points in a radius-5 ball
    ProbeSpec ps;
    ps.radius = 5.0;
    ps.count = 8;
    std::vector<Vec> inits = probe_points(ps, m.d);
    inits.push_back(Vec(m.d, 0.0));

    const std::size_t n = static_cast<std::size_t>(std::llround(1.0 / dt));
    UniformGrid g(0.0, dt, n);
    struct Sample {
        double lhs, a, z;
    };
    std::vector<Sample> samples;
    samples.reserve(inits.size() * n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        FbmPath bpath = sample_fgn(params, g, m.d, rng);
        double z = 1.0 + holder_norm(bpath, params.theta, 0.0, 1.0);
        for (const Vec& x : inits) {
            Trajectory t = integrate(m, x, bpath);
            samples.push_back({Psi(t.states[n]), Psi(x), z});
        }
    }
    auto C_of = [&](double rho) {
        double c = 0.0;
        for (const Sample& s : samples) c = std::max(c, (s.lhs - rho * s.a) / s.z);
        return c;
    };
    // C(rho) decreases in rho; accept the smallest rho whose constant is
    // within 50% of the near-1 limit
    double c_ref = C_of(0.99);
    double rho_hat = 0.99, c_hat = c_ref;
    for (double rho = 0.02; rho < 0.99; rho += 0.01) {
        double c = C_of(rho);
        if (c <= 1.5 * c_ref) {
            rho_hat = rho;
            c_hat = c;
            break;
        }
    }
    rep.rho_hat = rho_hat;
    rep.C_hat = c_hat;
    rep.ok = rho_hat < 1.0 && std::isfinite(c_hat);
    std::size_t active = 0;
    for (const Sample& s : samples)
        if (s.lhs - rho_hat * s.a >= 0.99 * c_hat * s.z) ++active;
    rep.active_fraction =
        static_cast<double>(active) / static_cast<double>(samples.size());
    return rep;
}

PathBoundReport path_bound_check(const ModelSpec& m, const Trajectory& traj,
                                 const FbmPath& fbm, double C_diag,
                                 double beta_tilde, double theta) {
    PathBoundReport rep;
    auto F = [&](const Vec& x) { return 1.0 + norm2sq(x); };
    double lhs = 0.0;
    for (const Vec& x : traj.states) lhs = std::max(lhs, F(x));
    double a = traj.grid.t0, b = traj.grid.node(traj.grid.n);
    double hb = holder_norm(fbm, theta, a, b);
    rep.lhs = lhs;
    rep.rhs = C_diag * (F(traj.states.front()) +
                        beta_tilde * std::pow(1.0 + hb, 4.0 / (2.0 * theta - 1.0)));
    rep.violated = rep.lhs > rep.rhs;
    return rep;
}

} // namespace fracouple
