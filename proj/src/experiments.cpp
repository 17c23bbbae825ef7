#include "fracouple/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "fracouple/kernels.hpp"
#include "fracouple/rng.hpp"

namespace fracouple {

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double vnorm(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

Vec draw_ball(std::size_t d, double radius, RngStream& rng) {
    Vec x(d);
    for (int tries = 0; tries < 200; ++tries) {
        for (std::size_t c = 0; c < d; ++c)
            x[c] = (2.0 * rng.u01() - 1.0) * radius;
        if (vnorm(x) <= radius) return x;
    }
    for (double& v : x) v *= radius / (vnorm(x) + 1e-300);
    return x;
}

} // namespace

void validate_experiment_config(const ExperimentConfig& cfg) {
    if (cfg.n_replicas < 1)
        throw std::invalid_argument("n_replicas must be at least 1");
    if (!(cfg.t_max > 0.0))
        throw std::invalid_argument("t_max must be positive");
    if (cfg.n_workers < 1)
        throw std::invalid_argument("worker count must be at least 1");
    if (!cfg.x1.empty() && cfg.x1.size() != cfg.model_dim)
        throw std::invalid_argument("x1 dimension does not match the model");
    if (!cfg.x2.empty() && cfg.x2.size() != cfg.model_dim)
        throw std::invalid_argument("x2 dimension does not match the model");
    validate_coupling_config(cfg.coupling);
}

std::vector<TauSample> run_replicas(const ExperimentConfig& cfg) {
    validate_experiment_config(cfg);
    const ModelSpec model = make_model(cfg.model_id, cfg.model_dim);
    std::vector<TauSample> out(cfg.n_replicas);

    auto one = [&](std::size_t r) {
        RngStream rng(cfg.master_seed, static_cast<std::uint64_t>(r));
        Vec x1 = cfg.x1.empty() ? draw_ball(model.d, cfg.coupling.K, rng)
                                : cfg.x1;
        Vec x2 = cfg.x2.empty() ? draw_ball(model.d, cfg.coupling.K, rng)
                                : cfg.x2;
        CouplingResult res =
            run_coupling(model, x1, x2, cfg.coupling, cfg.t_max, rng);
        out[r] = {res.coupled, res.coupled ? res.tau_infty : cfg.t_max};
    };

    std::size_t workers = std::min(cfg.n_workers, cfg.n_replicas);
    if (workers <= 1) {
        for (std::size_t r = 0; r < cfg.n_replicas; ++r) one(r);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t r = next.fetch_add(1);
                    if (r >= cfg.n_replicas) return;
                    one(r);
                }
            });
        for (auto& th : pool) th.join();
    }
    return out;
}

TailEstimate estimate_tail_from_samples(const std::vector<TauSample>& samples,
                                        double t_max) {
    if (samples.empty())
        throw std::invalid_argument("estimate_tail_from_samples: no samples");
    TailEstimate est;
    est.t_max = t_max;
    est.n_replicas = samples.size();

    std::vector<double> taus; // coupled times only
    for (const auto& s : samples) {
        if (s.first && s.second <= t_max) {
            taus.push_back(s.second);
            ++est.n_coupled;
        } else {
            ++est.n_censored;
        }
    }
    std::sort(taus.begin(), taus.end());

    // node set: 0, the distinct coupling times, t_max
    std::vector<double> nodes;
    nodes.push_back(0.0);
    for (double t : taus)
        if (nodes.empty() || t != nodes.back()) nodes.push_back(t);
    if (nodes.back() < t_max) nodes.push_back(t_max);

    const double n = static_cast<double>(samples.size());
    for (double t : nodes) {
        // coupled strictly after t, plus all censored replicas
        std::size_t after =
            taus.end() - std::upper_bound(taus.begin(), taus.end(), t);
        std::size_t alive = after + est.n_censored;
        double s = static_cast<double>(alive) / n;
        double se = std::sqrt(std::max(s * (1.0 - s), 0.0) / n);
        est.t.push_back(t);
        est.survival.push_back(s);
        est.ci_lo.push_back(std::max(0.0, s - 1.96 * se));
        est.ci_hi.push_back(std::min(1.0, s + 1.96 * se));
        est.n_at_risk.push_back(alive);
    }

    // least-squares slope of log S vs log t on the 0.05 <= S <= 0.8 window
    std::vector<double> lx, ly;
    double win_lo = std::numeric_limits<double>::infinity(), win_hi = 0.0;
    for (std::size_t i = 0; i < est.t.size(); ++i) {
        double s = est.survival[i];
        if (est.t[i] > 0.0 && s >= 0.05 && s <= 0.8 && s > 0.0) {
            lx.push_back(std::log(est.t[i]));
            ly.push_back(std::log(s));
            win_lo = std::min(win_lo, est.t[i]);
            win_hi = std::max(win_hi, est.t[i]);
        }
    }
    std::size_t uncensored_in_window = 0;
    for (double t : taus)
        if (t >= win_lo && t <= win_hi) ++uncensored_in_window;
    if (lx.size() >= 3 && uncensored_in_window >= 10) {
        double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
        double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
        double sxx = 0.0, sxy = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sxx += (lx[i] - mx) * (lx[i] - mx);
            sxy += (lx[i] - mx) * (ly[i] - my);
        }
        if (sxx > 0.0) {
            est.slope = sxy / sxx;
            double rss = 0.0;
            for (std::size_t i = 0; i < lx.size(); ++i) {
                double r = ly[i] - my - est.slope * (lx[i] - mx);
                rss += r * r;
            }
            double dof = static_cast<double>(lx.size()) - 2.0;
            double se = std::sqrt(rss / std::max(dof, 1.0) / sxx);
            est.slope_ci_lo = est.slope - 1.96 * se;
            est.slope_ci_hi = est.slope + 1.96 * se;
            est.slope_reliable = true;
        }
    }
    return est;
}

TailEstimate estimate_coupling_tail(const ExperimentConfig& cfg) {
    return estimate_tail_from_samples(run_replicas(cfg), cfg.t_max);
}

TvBoundCurve estimate_tv_bound(const TailEstimate& tail,
                               const std::vector<double>& t_grid) {
    TvBoundCurve curve;
    for (double t : t_grid) {
        // right-continuous step value of the survival estimate at t
        auto it = std::upper_bound(tail.t.begin(), tail.t.end(), t);
        std::size_t i = (it == tail.t.begin())
                            ? 0
                            : static_cast<std::size_t>(it - tail.t.begin()) - 1;
        curve.t.push_back(t);
        curve.bound.push_back(tail.survival[i]);
        curve.bound_hi.push_back(tail.ci_hi[i]);
    }
    return curve;
}

RateFit rate_fit(const TailEstimate& tail, double eps) {
    RateFit fit;
    fit.envelope_exponent = 0.125 - eps;
    if (!tail.slope_reliable) {
        fit.undetermined = true;
        return fit;
    }
    fit.reliable = true;
    fit.slope_abs = std::abs(tail.slope);
    fit.ci_lo = std::abs(tail.slope_ci_hi); // |.| flips the interval
    fit.ci_hi = std::abs(tail.slope_ci_lo);
    if (fit.ci_lo > fit.ci_hi) std::swap(fit.ci_lo, fit.ci_hi);
    // decay at least as fast as the envelope, up to the fit uncertainty
    fit.consistent = fit.ci_hi >= fit.envelope_exponent;
    return fit;
}

// ---------------------------------------------------------------------------
// validation suite

namespace {

ValidationItem item_fgn_covariance(const CouplingConfig& cc) {
    const double H = cc.H;
    KernelParams p = make_kernel_params(H, cc.theta, 8.0);
    const std::size_t npaths = 3000, n = 128;
    UniformGrid g(0.0, 1.0, n);
    RngStream rng(101, 0);
    std::vector<double> sum(5, 0.0), sum2(5, 0.0);
    for (std::size_t r = 0; r < npaths; ++r) {
        FbmPath b = sample_fgn(p, g, 1, rng);
        for (std::size_t k = 0; k < 5; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i + k < n; ++i)
                acc += b.increments[0][i] * b.increments[0][i + k];
            acc /= static_cast<double>(n - k);
            sum[k] += acc;
            sum2[k] += acc * acc;
        }
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
        double m = sum[k] / npaths;
        double var = sum2[k] / npaths - m * m;
        double se = std::sqrt(std::max(var, 1e-300) / npaths);
        worst = std::max(worst, std::abs(m - fgn_autocov(H, k)) / se);
    }
    return {"fgn_covariance", worst < 4.0, worst, 4.0};
}

ValidationItem item_mvn_variance(const CouplingConfig& cc) {
    KernelParams p = make_kernel_params(cc.H, cc.theta, 8.0);
    const double dt = 1.0 / 64.0;
    const std::size_t npaths = 3000;
    UniformGrid g(-8.0, dt, static_cast<std::size_t>(std::llround(9.0 / dt)));
    RngStream rng(103, 0);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t r = 0; r < npaths; ++r) {
        WienerPath w(g, 1);
        for (std::size_t i = 0; i < g.n; ++i)
            w.increments[0][i] = rng.gaussian() * std::sqrt(dt);
        FbmPath b = mvn_map(w, p, 0.0);
        double b1 = 0.0;
        for (std::size_t i = 0; i < b.grid.n; ++i) {
            if (b.grid.node(i) > 1.0 - 1e-9) break;
            b1 += b.increments[0][i];
        }
        s1 += b1 * b1;
        s2 += b1 * b1 * b1 * b1;
    }
    double var = s1 / npaths;
    double se = std::sqrt(std::max(s2 / npaths - var * var, 1e-300) / npaths);
    double expect = 1.0 - truncation_variance_deficit(cc.H, 8.0);
    double z = std::abs(var - expect) / se;
    return {"mvn_variance", z < 4.0, z, 4.0};
}

ValidationItem item_r_operator(const CouplingConfig& cc) {
    KernelParams p = make_kernel_params(cc.H, cc.theta, 8.0);
    const double dt = 1.0 / 128.0;
    const double tau = 3.0;
    UniformGrid g(0.0, dt, static_cast<std::size_t>(std::llround(tau / dt)));
    DriftRecord rec(g, 1, 8.0);
    // smooth bump supported on [1, 2]
    for (std::size_t i = 0; i < g.n; ++i) {
        double t = g.node(i) + 0.5 * dt;
        if (t > 1.0 && t < 2.0)
            rec.gw[0][i] = std::exp(-1.0 / ((t - 1.0) * (2.0 - t)));
    }
    rec.mark_nonzero(0, g.n);
    std::vector<double> ts{0.3, 0.7, 1.5};
    double T = 0.25;
    auto vals = r_operator(rec, tau, T, ts, p);
    double worst = 0.0;
    for (std::size_t m = 0; m < ts.size(); ++m) {
        double t = ts[m];
        // dense midpoint quadrature of t^{1/2-H} (T-s)^{H-1/2}/(t+T-s) g(s)
        double acc = 0.0;
        const int sub = 64;
        for (std::size_t i = 0; i < g.n; ++i) {
            if (rec.gw[0][i] == 0.0) continue;
            for (int j = 0; j < sub; ++j) {
                double s = g.node(i) + (j + 0.5) * dt / sub - tau;
                acc += std::pow(T - s, cc.H - 0.5) / (t + T - s) *
                       rec.gw[0][i] * dt / sub;
            }
        }
        acc *= std::pow(t, 0.5 - cc.H);
        worst = std::max(worst, std::abs(vals[0][m] - acc) /
                                    std::max(std::abs(acc), 1e-12));
    }
    return {"r_operator_oracle", worst < 1e-5, worst, 1e-5};
}

ValidationItem item_round_trip(const CouplingConfig& cc) {
    KernelParams p = make_kernel_params(cc.H, cc.theta, 8.0);
    const std::size_t n = 256;
    const double dt = 1.0 / static_cast<double>(n);
    UniformGrid g(0.0, dt, n);
    DriftRecord hist(g, 1, 8.0);
    std::vector<std::vector<double>> gcells(1, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        double t = (static_cast<double>(i) + 0.5) * dt;
        gcells[0][i] = std::sin(3.0 * t) + 0.5 * std::cos(7.0 * t);
    }
    auto gb = gw_to_gb(gcells, hist, 0, p);
    auto back = gb_to_gw(gb, hist, 0, p);
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        scale = std::max(scale, std::abs(gcells[0][i]));
    for (std::size_t i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(back[0][i] - gcells[0][i]) / scale);
    return {"inversion_round_trip", worst < 1e-5, worst, 1e-5};
}

ValidationItem item_euler_order(const CouplingConfig& cc) {
    // self-convergence halving factor of the pathwise Euler error for the
    // additive baseline (expected ~2 for order one)
    ModelSpec m = make_model("additive_baseline", 1);
    KernelParams p = make_kernel_params(cc.H, cc.theta, 8.0);
    const std::size_t nf = 512;
    UniformGrid gf(0.0, 1.0 / nf, nf);
    RngStream rng(107, 0);
    double e1 = 0.0, e2 = 0.0;
    const std::size_t npaths = 20;
    for (std::size_t r = 0; r < npaths; ++r) {
        FbmPath fine = sample_fgn(p, gf, 1, rng);
        auto coarsen = [&](std::size_t factor) {
            std::size_t nc = nf / factor;
            UniformGrid gc(0.0, 1.0 / nc, nc);
            FbmPath b(gc, 1, cc.H);
            for (std::size_t i = 0; i < nc; ++i)
                for (std::size_t j = 0; j < factor; ++j)
                    b.increments[0][i] += fine.increments[0][i * factor + j];
            return b;
        };
        Trajectory ref = integrate(m, {0.4}, fine);
        Trajectory c1 = integrate(m, {0.4}, coarsen(4));
        Trajectory c2 = integrate(m, {0.4}, coarsen(2));
        e1 += std::abs(c1.states.back()[0] - ref.states.back()[0]);
        e2 += std::abs(c2.states.back()[0] - ref.states.back()[0]);
    }
    // error vs the nested reference scales like C (dt - dt_ref), so the
    // expected ratio between the 4x and 2x coarsenings is (4-1)/(2-1) = 3
    double factor = e1 / std::max(e2, 1e-300);
    return {"euler_self_convergence", std::abs(factor - 3.0) < 0.9,
            factor, 3.9};
}

ValidationItem item_h1_h2(const ExperimentConfig& cfg) {
    ModelSpec m = make_model(cfg.model_id, cfg.model_dim);
    ProbeSpec probe;
    probe.center = Vec(m.d, 0.0);
    probe.radius = 5.0;
    probe.count = 128;
    AssumptionReport h1 = check_h1(m, probe);
    AssumptionReport h2 = check_h2(m, probe);
    bool ok = h1.pass && h2.pass;
    return {"h1_h2_model", ok, std::max(h1.worst, h2.worst), 1.0};
}

ValidationItem item_rho_bound(const CouplingConfig&) {
    RngStream rng(109, 0);
    const std::size_t n = 192; // span [0, 3]: covers every extinction deadline
    UniformGrid g(0.0, 1.0 / 64.0, n);
    auto drift = [](const Vec& y) { return Vec{-y[0]}; };
    double worst = 0.0;
    for (std::size_t r = 0; r < 100; ++r) {
        double rho0 = 0.05 + 2.0 * rng.u01();
        double k2 = 1.0 + 5.0 * rng.u01();
        std::vector<Vec> y1(n + 1, Vec{2.0 * rng.u01() - 1.0});
        RhoSolution sol = rho_ode_solve(Vec{rho0}, y1, drift, 1.5, k2, g);
        for (std::size_t i = 0; i <= n; ++i) {
            double root = std::sqrt(rho0) - 0.5 * k2 * g.node(i);
            double bound = root > 0.0 ? root * root : 0.0;
            worst = std::max(worst, std::abs(sol.rho[i][0]) - bound);
        }
        worst = std::max(
            worst, sol.extinction_time - (2.0 * std::sqrt(rho0) / k2 + 2.0 * g.dt));
    }
    return {"rho_ode_bound", worst < 1e-6, worst, 1e-6};
}

ValidationItem item_girsanov(const CouplingConfig&) {
    UniformGrid g(0.0, 1.0 / 16.0, 16);
    std::vector<std::vector<double>> gc(1, std::vector<double>(16));
    for (std::size_t i = 0; i < 16; ++i)
        gc[0][i] = std::sin(2.0 * g.node(i)) + 0.8;
    RngStream rng(113, 0);
    const std::size_t reps = 20000;
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
        WienerPath w(g, 1);
        for (std::size_t i = 0; i < 16; ++i)
            w.increments[0][i] = rng.gaussian() * std::sqrt(g.dt);
        double d = girsanov_density(gc, w);
        s1 += d;
        s2 += d * d;
    }
    double mean = s1 / reps;
    double se = std::sqrt(std::max(s2 / reps - mean * mean, 1e-300) / reps);
    double z = std::abs(mean - 1.0) / se;
    return {"girsanov_mean", z < 4.0, z, 4.0};
}

ValidationItem item_scalar_coupling(const CouplingConfig&) {
    RngStream rng(127, 0);
    const double b = 0.5, a = 0.25;
    const std::size_t reps = 20000;
    std::size_t succ = 0, viol = 0;
    double pi = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
        ShiftCouple sc = scalar_shift_coupling(a, b, rng);
        pi = sc.pi_star;
        if (sc.success) ++succ;
        if (std::abs(sc.u2 - sc.u1) > sc.M_b) ++viol;
    }
    double freq = static_cast<double>(succ) / reps;
    double se = std::sqrt(pi * (1.0 - pi) / reps);
    double z = std::abs(freq - pi) / se;
    bool ok = viol == 0 && z < 4.0 && pi >= 1.0 - b && pi <= 1.0 - 0.5 * b;
    return {"scalar_coupling", ok, z + static_cast<double>(viol), 4.0};
}

// empirical KS distance against the standard normal CDF
double ks_stat(std::vector<double>& xs) {
    std::sort(xs.begin(), xs.end());
    double n = static_cast<double>(xs.size());
    double ks = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double f = 0.5 * std::erfc(-xs[i] / std::sqrt(2.0));
        ks = std::max(ks, std::abs(f - static_cast<double>(i) / n));
        ks = std::max(ks, std::abs(f - static_cast<double>(i + 1) / n));
    }
    return ks;
}

ValidationItem item_step1_marginal(const CouplingConfig& base) {
    // reduced-scale slice test of the three-branch sampler's Wiener marginals
    ModelSpec m = make_model("scalar_sin", 1);
    CouplingConfig cfg = make_coupling_config(m, base.H, base.theta, 1.0 / 32.0, 4.0);
    cfg.K = 1.5;
    double kbar = std::abs(m.h(Vec{1.5})[0] - m.h(Vec{-1.5})[0]);
    cfg.Kbar = kbar;
    cfg.kappa2 = 4.0 * std::sqrt(kbar);
    cfg.delta1 = 1.0;
    LocalizedModel lm = localize(m, cfg.a_loc);
    const std::size_t n1 = 32, attempts = 1500;
    std::vector<std::vector<double>> s1(n1), s2(n1);
    const double sdt = std::sqrt(cfg.dt);
    for (std::size_t r = 0; r < attempts; ++r) {
        CouplingState st = make_state(m, Vec{1.0}, Vec{-1.0}, cfg, 4.0);
        RngStream rng(131, static_cast<std::uint64_t>(r));
        advance_shared(st, n1, m, cfg, rng);
        st.y1 = m.h(Vec{1.0});
        st.y2 = m.h(Vec{-1.0});
        st.x1 = Vec{1.0};
        st.x2 = Vec{-1.0};
        std::size_t win = st.steps;
        step1_attempt(st, m, lm, cfg, rng, true);
        for (std::size_t i = 0; i < n1; ++i) {
            s1[i].push_back(st.w1.increments[0][win + i] / sdt);
            s2[i].push_back(st.w2.increments[0][win + i] / sdt);
        }
    }
    // Bonferroni-corrected KS threshold over 2 * n1 slices at level 0.01
    double alpha = 0.01 / (2.0 * static_cast<double>(n1));
    double crit = std::sqrt(-0.5 * std::log(alpha / 2.0)) /
                  std::sqrt(static_cast<double>(attempts));
    double worst = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
        worst = std::max(worst, ks_stat(s1[i]));
        worst = std::max(worst, ks_stat(s2[i]));
    }
    return {"step1_marginal_ks", worst < crit, worst, crit};
}

ValidationItem item_schedule(const ExperimentConfig& cfg) {
    ModelSpec m = make_model(cfg.model_id, cfg.model_dim);
    CouplingConfig cc = cfg.coupling;
    std::size_t viol = 0;
    std::size_t c2s = interval_steps(cc, 0);
    for (unsigned r = 0; r < 5; ++r) {
        RngStream rng(137, r);
        Vec x1 = draw_ball(m.d, std::min(cc.K, 2.0), rng);
        Vec x2 = draw_ball(m.d, std::min(cc.K, 2.0), rng);
        CouplingResult res =
            run_coupling(m, x1, x2, cc, std::min(cfg.t_max, 40.0), rng);
        std::size_t k = 1;
        for (const auto& tr : res.trials) {
            if (tr.ell_star > 0) {
                // failed at ell*: intervals 1..ell* were run in full
                std::size_t expect =
                    c2s * ((std::size_t{2} << tr.ell_star) - 2);
                if (tr.step2_steps != expect) ++viol;
            }
            if (tr.ell_star >= 0) {
                std::size_t w =
                    wait_steps(cc, static_cast<std::size_t>(tr.ell_star), k);
                // the final trial's wait may be clipped by the horizon
                bool last = &tr == &res.trials.back();
                if (tr.step3_steps > w || (tr.step3_steps < w && !last))
                    ++viol;
            }
            ++k;
        }
    }
    return {"schedule_invariants", viol == 0, static_cast<double>(viol), 0.0};
}

} // namespace

std::vector<ValidationItem> validate_suite(const ExperimentConfig& cfg) {
    const CouplingConfig& cc = cfg.coupling;
    std::vector<ValidationItem> items;
    items.push_back(item_fgn_covariance(cc));
    items.push_back(item_mvn_variance(cc));
    items.push_back(item_r_operator(cc));
    items.push_back(item_round_trip(cc));
    items.push_back(item_euler_order(cc));
    items.push_back(item_h1_h2(cfg));
    items.push_back(item_rho_bound(cc));
    items.push_back(item_girsanov(cc));
    items.push_back(item_scalar_coupling(cc));
    items.push_back(item_step1_marginal(cc));
    items.push_back(item_schedule(cfg));
    return items;
}

void write_survival_csv(const TailEstimate& tail, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_survival_csv: cannot open " + path);
    os << "t,survival,ci_lo,ci_hi,n_at_risk\n";
    for (std::size_t i = 0; i < tail.t.size(); ++i)
        os << fmt17(tail.t[i]) << ',' << fmt17(tail.survival[i]) << ','
           << fmt17(tail.ci_lo[i]) << ',' << fmt17(tail.ci_hi[i]) << ','
           << tail.n_at_risk[i] << '\n';
}

void write_validation_report(const std::vector<ValidationItem>& items,
                             const std::string& path) {
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("write_validation_report: cannot open " + path);
    for (const auto& it : items)
        os << it.item << ',' << (it.pass ? "pass" : "fail") << ','
           << fmt17(it.value) << ',' << fmt17(it.threshold) << '\n';
}

} // namespace fracouple
