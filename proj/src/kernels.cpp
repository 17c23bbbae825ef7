#include "fracouple/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace fracouple {

namespace {

// --------------------------------------------------------------------------
// Gauss-Legendre rules on [-1, 1], computed once per order by Newton iteration
// on the Legendre polynomial roots.
struct GLRule {
    std::vector<double> x, w;
};

const GLRule& gl_rule(int n) {
    static std::map<int, GLRule> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    GLRule r;
    r.x.resize(n);
    r.w.resize(n);
    for (int i = 0; i < n; ++i) {
        // Chebyshev-based initial guess for root i (descending order)
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        for (int it2 = 0; it2 < 100; ++it2) {
            // evaluate P_n and P_n' by recurrence
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            double dp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        double dp = n * (x * p1 - p0) / (x * x - 1.0);
        r.x[i] = x;
        r.w[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return cache.emplace(n, std::move(r)).first->second;
}

// integrate f over [a, b] with one GL panel
template <class F>
double gl_panel(const F& f, double a, double b, int n) {
    const GLRule& r = gl_rule(n);
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += r.w[i] * f(mid + half * r.x[i]);
    return s * half;
}

// integrate f over [a, b] with panels graded geometrically toward the endpoint
// `toward` (= a or b), for integrands with an endpoint derivative singularity
template <class F>
double gl_graded(const F& f, double a, double b, int n, bool toward_b,
                 int levels = 48) {
    double s = 0.0;
    double w = b - a;
    if (w <= 0.0) return 0.0;
    double frac = 1.0;
    for (int j = 0; j < levels; ++j) {
        double next = frac * 0.5;
        double lo, hi;
        if (toward_b) {
            lo = b - w * frac;
            hi = b - w * next;
        } else {
            lo = a + w * next;
            hi = a + w * frac;
        }
        s += gl_panel(f, lo, hi, n);
        frac = next;
    }
    // residual sliver adjacent to the singular endpoint (integrand bounded)
    if (toward_b)
        s += gl_panel(f, b - w * frac, b, n);
    else
        s += gl_panel(f, a, a + w * frac, n);
    return s;
}

inline double pw(double x, double e) { return x > 0.0 ? std::pow(x, e) : 0.0; }

} // namespace

// --------------------------------------------------------------------------
// normalization

namespace {
// int_{1/b}^inf ((1+u)^{H-1/2} - u^{H-1/2})^2 du, mapped by u = 1/v to
// int_0^b v^{1-2H} A(v)^2 dv with A(v) = ((1+v)^{H-1/2} - 1)/v, then
// flattened by v = b x^p so the v^{1-2H} endpoint singularity (severe as
// H -> 1) becomes a high-order zero the graded rule resolves exactly.
double mvn_tail_integral(double H, double b) {
    const double Hm = H - 0.5;
    auto A = [&](double v) {
        if (v < 1e-150) return Hm;
        return std::expm1(Hm * std::log1p(v)) / v;
    };
    const int p = static_cast<int>(std::ceil(4.0 / (2.0 - 2.0 * H)));
    auto f = [&](double x) {
        double xp = std::pow(x, p);
        double a = A(b * xp);
        return std::pow(x, p * (2.0 - 2.0 * H) - 1.0) * a * a;
    };
    return std::pow(b, 2.0 - 2.0 * H) * p * gl_graded(f, 0.0, 1.0, 16, false);
}
} // namespace

double mvn_unit_variance(double H) {
    // Var(B_1)/alpha_H^2 = 1/(2H) + int_0^inf ((1+u)^{H-1/2} - u^{H-1/2})^2 du
    double Hm = H - 0.5;
    auto f_lo = [&](double u) {
        double d = std::pow(1.0 + u, Hm) - std::pow(u, Hm);
        return d * d;
    };
    double lo = gl_graded(f_lo, 0.0, 1.0, 16, false);
    double hi = mvn_tail_integral(H, 1.0);
    return 1.0 / (2.0 * H) + lo + hi;
}

double alpha_H_calibrate(double H) { return 1.0 / std::sqrt(mvn_unit_variance(H)); }

double alpha_H_closed_form(double H) {
    double num = 2.0 * H * std::sin(std::numbers::pi * H) * std::tgamma(2.0 * H);
    return std::sqrt(num) / std::tgamma(H + 0.5);
}

double truncation_variance_deficit(double H, double T_hist) {
    double a2 = 1.0 / mvn_unit_variance(H);
    return a2 * mvn_tail_integral(H, 1.0 / T_hist);
}

KernelParams make_kernel_params(double H, double theta, double T_hist, int quad_nodes) {
    if (!(H > 0.5 && H < 1.0))
        throw std::invalid_argument("KernelParams: H must lie strictly in (1/2, 1)");
    if (!(theta > 0.5 && theta < H))
        throw std::invalid_argument("KernelParams: theta must lie in (1/2, H)");
    if (T_hist <= 0.0) throw std::invalid_argument("KernelParams: T_hist must be > 0");
    KernelParams p;
    p.H = H;
    p.alpha_H = alpha_H_calibrate(H);
    p.theta = theta;
    p.eps_theta = 0.5 * (H - theta);
    p.quad_nodes = quad_nodes;
    p.T_hist = T_hist;
    // continuation constant of the drift-inversion formula; cross-checked
    // numerically by calibrate_inversion_C
    p.inv_C = -std::sin(std::numbers::pi * (H - 0.5)) / std::numbers::pi;
    return p;
}

// --------------------------------------------------------------------------
// DriftRecord

DriftRecord::DriftRecord(const UniformGrid& g, std::size_t d_, double horizon_)
    : grid(g), d(d_), horizon(horizon_),
      gw(d_, std::vector<double>(g.n, 0.0)), gb(d_, std::vector<double>(g.n, 0.0)) {
    if (d < 1) throw std::invalid_argument("DriftRecord: dimension must be >= 1");
    if (horizon <= 0.0) throw std::invalid_argument("DriftRecord: horizon must be > 0");
}

void DriftRecord::mark_nonzero(std::size_t i0, std::size_t i1) {
    if (i0 >= i1) return;
    i1 = std::min(i1, grid.n);
    nonzero.emplace_back(i0, i1);
    std::sort(nonzero.begin(), nonzero.end());
    // merge overlapping/adjacent ranges
    std::vector<std::pair<std::size_t, std::size_t>> merged;
    for (const auto& r : nonzero) {
        if (!merged.empty() && r.first <= merged.back().second)
            merged.back().second = std::max(merged.back().second, r.second);
        else
            merged.push_back(r);
    }
    nonzero = std::move(merged);
}

// --------------------------------------------------------------------------
// FFT and fGn sampler

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw std::invalid_argument("fft_inplace: size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                std::complex<double> u = a[i + j];
                std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse)
        for (auto& z : a) z /= static_cast<double>(n);
}

double fgn_autocov(double H, std::size_t k) {
    double kk = static_cast<double>(k);
    double e = 2.0 * H;
    if (k == 0) return 1.0;
    return 0.5 * (std::pow(kk + 1.0, e) - 2.0 * std::pow(kk, e) + std::pow(kk - 1.0, e));
}

FgnSampler::FgnSampler(double H, std::size_t n) : n_(n) {
    if (!(H > 0.5 && H < 1.0))
        throw std::invalid_argument("FgnSampler: H must lie strictly in (1/2, 1)");
    if (n < 1) throw std::invalid_argument("FgnSampler: n must be >= 1");
    M_ = 1;
    while (M_ < 2 * n) M_ <<= 1;
    std::vector<std::complex<double>> c(M_);
    for (std::size_t j = 0; j < M_; ++j) {
        std::size_t lag = std::min(j, M_ - j);
        c[j] = fgn_autocov(H, lag);
    }
    fft_inplace(c, false);
    double lam_max = 0.0;
    for (const auto& z : c) lam_max = std::max(lam_max, z.real());
    sqrt_lambda_.resize(M_);
    for (std::size_t j = 0; j < M_; ++j) {
        double lam = c[j].real();
        if (lam < -1e-10 * lam_max) {
            std::ostringstream os;
            os << "FgnSampler: circulant embedding eigenvalue " << lam
               << " below tolerance (resolution problem at n=" << n << ")";
            throw std::runtime_error(os.str());
        }
        sqrt_lambda_[j] = std::sqrt(std::max(lam, 0.0));
    }
}

void FgnSampler::sample_unit(RngStream& rng, std::vector<double>& out) const {
    std::vector<std::complex<double>> z(M_);
    const std::size_t half = M_ / 2;
    z[0] = sqrt_lambda_[0] * rng.gaussian();
    z[half] = sqrt_lambda_[half] * rng.gaussian();
    const double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t j = 1; j < half; ++j) {
        double a = rng.gaussian(), b = rng.gaussian();
        std::complex<double> v(a * inv_sqrt2, b * inv_sqrt2);
        z[j] = sqrt_lambda_[j] * v;
        z[M_ - j] = sqrt_lambda_[M_ - j] * std::conj(v);
    }
    fft_inplace(z, false);
    double scale = 1.0 / std::sqrt(static_cast<double>(M_));
    for (std::size_t i = 0; i < n_; ++i) out.push_back(z[i].real() * scale);
}

FbmPath sample_fgn(const KernelParams& params, const UniformGrid& grid,
                   std::size_t d, RngStream& rng) {
    FgnSampler sampler(params.H, grid.n);
    FbmPath b(grid, d, params.H);
    double scale = std::pow(grid.dt, params.H);
    std::vector<double> buf;
    for (std::size_t c = 0; c < d; ++c) {
        buf.clear();
        sampler.sample_unit(rng, buf);
        for (std::size_t i = 0; i < grid.n; ++i) b.increments[c][i] = scale * buf[i];
    }
    return b;
}

// --------------------------------------------------------------------------
// Mandelbrot-Van Ness map

double mvn_weight(double H, std::size_t k) {
    double e = H + 0.5;
    if (k == 0) return 1.0;
    double kk = static_cast<double>(k);
    return std::pow(kk + 1.0, e) - 2.0 * std::pow(kk, e) + std::pow(kk - 1.0, e);
}

FbmPath mvn_map(const WienerPath& w, const KernelParams& params, double out_start) {
    const double dt = w.grid.dt;
    const double past = out_start - w.grid.t0;
    if (past + 1e-12 * dt < params.T_hist) {
        std::ostringstream os;
        os << "mvn_map: insufficient past coverage: have " << past
           << " time units before out_start, need T_hist = " << params.T_hist
           << " (missing " << params.T_hist - past << ")";
        throw std::invalid_argument(os.str());
    }
    const std::size_t i0 = static_cast<std::size_t>(std::llround(past / dt));
    if (std::abs(w.grid.node(i0) - out_start) > 1e-9 * dt)
        throw std::invalid_argument("mvn_map: out_start is not a grid node");
    const std::size_t n_out = w.grid.n - i0;
    const std::size_t max_lag = static_cast<std::size_t>(std::llround(params.T_hist / dt));
    // precompute convolution weights up to the largest used lag
    std::vector<double> wt(std::min(max_lag, w.grid.n) + 1);
    for (std::size_t k = 0; k < wt.size(); ++k) wt[k] = mvn_weight(params.H, k);
    const double coef = params.alpha_H * std::pow(dt, params.H - 0.5) / (params.H + 0.5);

    FbmPath b(UniformGrid(out_start, dt, n_out), w.d, params.H);
    for (std::size_t c = 0; c < w.d; ++c) {
        const std::vector<double>& dw = w.increments[c];
        for (std::size_t i = 0; i < n_out; ++i) {
            const std::size_t gi = i0 + i;
            const std::size_t kmax = std::min(gi, max_lag);
            double s = 0.0;
            for (std::size_t k = 0; k <= kmax; ++k) s += wt[k] * dw[gi - k];
            b.increments[c][i] = coef * s;
        }
    }
    return b;
}

// --------------------------------------------------------------------------
// R_T operator

namespace {
// int over source cell [p, q] (p < q <= 0) of (T-s)^{H-1/2} / (t+T-s) ds
double r_cell_integral(double t, double T, double p, double q, double H, int gln) {
    auto f = [&](double s) { return std::pow(T - s, H - 0.5) / (t + T - s); };
    double width = q - p;
    if ((T - q) < 2.0 * width || (t + T - q) < 2.0 * width)
        return gl_graded(f, p, q, gln, true);
    return gl_panel(f, p, q, gln);
}
} // namespace

std::vector<std::vector<double>> r_operator(const DriftRecord& g, double tau,
                                            double T, const std::vector<double>& ts,
                                            const KernelParams& params) {
    const double dt = g.grid.dt;
    const double H = params.H;
    const int gln = params.quad_nodes;
    // history cells: indices < i_tau within the horizon
    const double lo_time = tau - std::min(params.T_hist, g.horizon);
    std::vector<std::vector<double>> out(g.d, std::vector<double>(ts.size(), 0.0));
    long i_tau = std::llround((tau - g.grid.t0) / dt);
    if (i_tau <= 0) return out;

    for (const auto& rng : g.nonzero) {
        std::size_t j1 = std::min<std::size_t>(rng.second, static_cast<std::size_t>(i_tau));
        for (std::size_t j = rng.first; j < j1; ++j) {
            double cell_t0 = g.grid.node(j);
            if (cell_t0 + dt <= lo_time) continue;
            double p = std::max(cell_t0, lo_time) - tau; // relative, <= 0
            double q = cell_t0 + dt - tau;
            bool any = false;
            for (std::size_t c = 0; c < g.d; ++c)
                if (g.gw[c][j] != 0.0) any = true;
            if (!any) continue;
            for (std::size_t m = 0; m < ts.size(); ++m) {
                double t = ts[m];
                if (!(t > 0.0)) throw std::invalid_argument("r_operator: t must be > 0");
                double ker = r_cell_integral(t, T, p, q, H, gln);
                double pref = std::pow(t, 0.5 - H) * ker;
                for (std::size_t c = 0; c < g.d; ++c) {
                    double v = g.gw[c][j];
                    if (v != 0.0) out[c][m] += pref * v;
                }
            }
        }
    }
    return out;
}

// --------------------------------------------------------------------------
// inversion pair

namespace {

// Average-conserving piecewise-quadratic reconstruction from cell means:
// on cell j the function is qa + qb x + qc x^2 in the local coordinate
// x = (s - s_j)/dt in [0, 1], fitted to the three nearest cell means
// (one-sided at the ends).  Exact on global quadratics.
void quad_reconstruct(const std::vector<double>& fc, std::vector<double>& qa,
                      std::vector<double>& qb, std::vector<double>& qc) {
    const std::size_t n = fc.size();
    qa.resize(n);
    qb.resize(n);
    qc.resize(n);
    if (n == 1) {
        qa[0] = fc[0];
        qb[0] = qc[0] = 0.0;
        return;
    }
    if (n == 2) {
        double beta = fc[1] - fc[0];
        for (std::size_t j = 0; j < 2; ++j) {
            qa[j] = fc[j] - 0.5 * beta;
            qb[j] = beta;
            qc[j] = 0.0;
        }
        return;
    }
    for (std::size_t j = 0; j < n; ++j) {
        double g2, bet, alp;
        if (j == 0) {
            g2 = 0.5 * (fc[2] - 2.0 * fc[1] + fc[0]);
            bet = fc[1] - fc[0] - 2.0 * g2;
            alp = fc[0] - 0.5 * bet - g2 / 3.0;
        } else if (j + 1 == n) {
            g2 = 0.5 * (fc[n - 1] - 2.0 * fc[n - 2] + fc[n - 3]);
            bet = fc[n - 1] - fc[n - 2];
            alp = fc[n - 2] + 0.5 * bet - g2 / 3.0;
        } else {
            g2 = 0.5 * (fc[j + 1] - 2.0 * fc[j] + fc[j - 1]);
            bet = fc[j] - fc[j - 1];
            alp = fc[j] - 0.5 * bet - g2 / 3.0;
        }
        qa[j] = alp;
        qb[j] = bet;
        qc[j] = g2;
    }
}

// Kernel moments over the lag-k cell: m_r(k) = int_{k-1}^k u^c (k-u)^r du,
// r = 0, 1, 2, for a power kernel u^c.  Closed antiderivatives for small k;
// for large k the closed forms lose digits to cancellation, so a plain GL
// panel is used instead (the integrand is smooth away from u = 0).
void kernel_moments(double c, std::size_t n, std::vector<double>& m0,
                    std::vector<double>& m1, std::vector<double>& m2) {
    const double e = c + 1.0;
    m0.assign(n + 1, 0.0);
    m1.assign(n + 1, 0.0);
    m2.assign(n + 1, 0.0);
    for (std::size_t k = 1; k <= n; ++k) {
        double kk = static_cast<double>(k);
        if (k <= 32) {
            double d0 = (std::pow(kk, e) - std::pow(kk - 1.0, e)) / e;
            double d1 =
                (std::pow(kk, e + 1.0) - std::pow(kk - 1.0, e + 1.0)) / (e + 1.0);
            double d2 =
                (std::pow(kk, e + 2.0) - std::pow(kk - 1.0, e + 2.0)) / (e + 2.0);
            m0[k] = d0;
            m1[k] = kk * d0 - d1;
            m2[k] = kk * kk * d0 - 2.0 * kk * d1 + d2;
        } else {
            auto f0 = [&](double u) { return std::pow(u, c); };
            auto f1 = [&](double u) { return std::pow(u, c) * (kk - u); };
            auto f2 = [&](double u) { return std::pow(u, c) * (kk - u) * (kk - u); };
            m0[k] = gl_panel(f0, kk - 1.0, kk, 16);
            m1[k] = gl_panel(f1, kk - 1.0, kk, 16);
            m2[k] = gl_panel(f2, kk - 1.0, kk, 16);
        }
    }
}

// cell averages of d/dt int_0^t (t-s)^c fhat(s) ds for the reconstructed
// fhat; returns (Psi((i+1)dt) - Psi(i dt)) / dt scaled by dt^{c+1}
void abel_smooth_part(const std::vector<double>& fc, double c, double dt,
                      std::vector<double>& out) {
    const std::size_t n = fc.size();
    static thread_local std::vector<double> qa, qb, qc, m0, m1, m2;
    static thread_local double memo_c = 1e300;
    quad_reconstruct(fc, qa, qb, qc);
    if (memo_c != c || m0.size() < n + 1) {
        kernel_moments(c, n, m0, m1, m2);
        memo_c = c;
    }
    out.assign(n, 0.0);
    const double scale = std::pow(dt, c + 1.0) / dt;
    double psi_prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double psi = 0.0; // Psi((i+1) dt) / dt^{c+1}
        for (std::size_t j = 0; j <= i; ++j) {
            std::size_t k = i + 1 - j;
            psi += qa[j] * m0[k] + qb[j] * m1[k] + qc[j] * m2[k];
        }
        out[i] = scale * (psi - psi_prev);
        psi_prev = psi;
    }
}

// Full Abel evaluation with boundary treatment.  The continuous pair maps a
// function that is smooth at the window start to one behaving like
// t^{-c} + smooth there (c = +-(H-1/2)), so the image of the previous map in
// a round trip carries a t^q component, q = -c, that per-cell quadratics
// represent poorly.  Split the input as A t^q + residual, with A fitted
// through the first four cell means against the exact means of
// {t^q, 1, t, t^2}; the t^q part maps in closed form (its image is the
// constant B(q+1, c+1)), the residual goes through the quadratic rule.  The
// split is exact by linearity for any A, so a poor fit only costs accuracy,
// never correctness.
void abel_cell_averages(const std::vector<double>& fc, double c, double dt,
                        std::vector<double>& out) {
    const std::size_t n = fc.size();
    if (n < 10) {
        abel_smooth_part(fc, c, dt, out);
        return;
    }
    // basis exponents: the two leading singular orders plus a quadratic
    const double p0 = -c, p1 = 1.0 - c;
    const double expo[5] = {p0, p1, 0.0, 1.0, 2.0};
    auto cell_mean = [&](double p, std::size_t j) {
        return (std::pow(j + 1.0, p + 1.0) - std::pow(static_cast<double>(j), p + 1.0)) /
               (p + 1.0) * std::pow(dt, p);
    };
    // interpolate the first five cell means in the basis
    double M[5][5], rhs[5], sol[5];
    for (int j = 0; j < 5; ++j) {
        for (int b = 0; b < 5; ++b) M[j][b] = cell_mean(expo[b], j);
        rhs[j] = fc[j];
    }
    int piv[5] = {0, 1, 2, 3, 4};
    for (int col = 0; col < 5; ++col) {
        int best = col;
        for (int r = col + 1; r < 5; ++r)
            if (std::abs(M[piv[r]][col]) > std::abs(M[piv[best]][col])) best = r;
        std::swap(piv[col], piv[best]);
        for (int r = col + 1; r < 5; ++r) {
            double f = M[piv[r]][col] / M[piv[col]][col];
            for (int k = col; k < 5; ++k) M[piv[r]][k] -= f * M[piv[col]][k];
            rhs[piv[r]] -= f * rhs[piv[col]];
        }
    }
    for (int col = 4; col >= 0; --col) {
        double s = rhs[piv[col]];
        for (int k = col + 1; k < 5; ++k) s -= M[piv[col]][k] * sol[k];
        sol[col] = s / M[piv[col]][col];
    }
    const double A0 = sol[0], A1 = sol[1];

    static thread_local std::vector<double> resid;
    resid.resize(n);
    for (std::size_t j = 0; j < n; ++j)
        resid[j] = fc[j] - A0 * cell_mean(p0, j) - A1 * cell_mean(p1, j);
    abel_smooth_part(resid, c, dt, out);
    // image of t^p: cell averages of (c+p+1) B(p+1, c+1) t^{c+p}
    for (int b = 0; b < 2; ++b) {
        double p = expo[b], A = (b == 0) ? A0 : A1;
        if (A == 0.0) continue;
        double beta = (p + c + 1.0) * std::tgamma(p + 1.0) * std::tgamma(c + 1.0) /
                      std::tgamma(p + c + 2.0);
        for (std::size_t i = 0; i < n; ++i)
            out[i] += A * beta * cell_mean(p + c, i);
    }
}

} // namespace

std::vector<std::vector<double>> gw_to_gb(const std::vector<std::vector<double>>& g,
                                          const DriftRecord& hist,
                                          std::size_t win_start,
                                          const KernelParams& params) {
    if (g.empty() || g.size() != hist.d)
        throw std::invalid_argument("gw_to_gb: dimension mismatch with history record");
    const std::size_t n = g[0].size();
    const double dt = hist.grid.dt;
    const double H = params.H;
    const std::size_t max_lag = static_cast<std::size_t>(std::llround(params.T_hist / dt));
    const double coef = params.alpha_H * std::pow(dt, H - 0.5) / (H + 0.5);
    std::vector<double> wt(max_lag + n + 1);
    for (std::size_t k = 0; k < wt.size(); ++k) wt[k] = mvn_weight(H, k);

    std::vector<std::vector<double>> gb(hist.d, std::vector<double>(n, 0.0));
    std::vector<double> win;
    for (std::size_t c = 0; c < hist.d; ++c) {
        // window part: product integration of the reconstructed g against
        // the (t-s)^{H-1/2} kernel (shares the cell-average convention with
        // gb_to_gw so the pair are mutual inverses on smooth drifts)
        abel_cell_averages(g[c], H - 0.5, dt, win);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            // history contribution (piecewise-constant record, sparse)
            const std::size_t gi = win_start + i;
            for (const auto& r : hist.nonzero) {
                std::size_t j1 = std::min<std::size_t>(r.second, win_start);
                for (std::size_t j = r.first; j < j1; ++j) {
                    std::size_t lag = gi - j;
                    if (lag > max_lag) continue;
                    s += wt[lag] * hist.gw[c][j];
                }
            }
            gb[c][i] = params.alpha_H * win[i] + coef * s;
        }
    }
    return gb;
}

std::vector<std::vector<double>> gb_to_gw(const std::vector<std::vector<double>>& f,
                                          const DriftRecord& hist,
                                          std::size_t win_start,
                                          const KernelParams& params,
                                          bool* jump_flag, double tol_jump) {
    if (f.empty() || f.size() != hist.d)
        throw std::invalid_argument("gb_to_gw: dimension mismatch with history record");
    const std::size_t n = f[0].size();
    const double dt = hist.grid.dt;
    const double H = params.H;
    const double e = 1.5 - H;
    const double cH = 1.0 / (params.alpha_H * std::tgamma(H + 0.5) * std::tgamma(1.5 - H));
    if (jump_flag) {
        *jump_flag = false;
        for (std::size_t c = 0; c < hist.d; ++c)
            for (std::size_t i = 0; i + 1 < n; ++i)
                if (std::abs(f[c][i + 1] - f[c][i]) > tol_jump) *jump_flag = true;
    }

    // local Abel term: cell averages of d/dt Phi with
    //   Phi(t) = int_0^t (t-s)^{1/2-H} f(s) ds,
    // product-integrated against the reconstructed f
    std::vector<std::vector<double>> gw(hist.d, std::vector<double>(n, 0.0));
    std::vector<double> win;
    for (std::size_t c = 0; c < hist.d; ++c) {
        abel_cell_averages(f[c], 0.5 - H, dt, win);
        for (std::size_t i = 0; i < n; ++i) gw[c][i] = cH * win[i];
    }

    // memory term: cell averages of inv_C * (R_0 hist)(u), graded near u = 0
    bool have_hist = false;
    for (const auto& r : hist.nonzero)
        if (r.first < win_start) have_hist = true;
    if (have_hist) {
        const double tau = hist.grid.node(win_start);
        const GLRule& rule = gl_rule(4);
        std::vector<double> us;
        std::vector<double> uw; // quadrature weight / dt for the owning cell
        std::vector<std::size_t> ucell;
        for (std::size_t i = 0; i < n; ++i) {
            double a = i * dt, b = (i + 1) * dt;
            if (i == 0) {
                // graded panels toward the integrable u^{1/2-H} singularity at
                // the window start (R_0 of the history blows up like u^{1/2-H})
                int levels = 36;
                double frac = 1.0;
                for (int j = 0; j < levels; ++j) {
                    double next = frac * 0.5;
                    double hi = a + (b - a) * frac;
                    double lo = a + (b - a) * next;
                    for (int m = 0; m < 4; ++m) {
                        double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
                        us.push_back(mid + half * rule.x[m]);
                        uw.push_back(rule.w[m] * half / dt);
                        ucell.push_back(i);
                    }
                    frac = next;
                }
                // drop the last sliver [a, a + frac*(b-a)]: the integrand there
                // is O(frac^{1-(H-1/2)}) relative, below double precision
            } else {
                for (int m = 0; m < 4; ++m) {
                    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
                    us.push_back(mid + half * rule.x[m]);
                    uw.push_back(rule.w[m] * half / dt);
                    ucell.push_back(i);
                }
            }
        }
        auto rvals = r_operator(hist, tau, 0.0, us, params);
        for (std::size_t c = 0; c < hist.d; ++c)
            for (std::size_t m = 0; m < us.size(); ++m)
                gw[c][ucell[m]] += params.inv_C * uw[m] * rvals[c][m];
    }
    return gw;
}

double calibrate_inversion_C(const KernelParams& params, double dt) {
    // History bump on [-1, 0), zero g_B target on [0, 1]: the continuation is
    // C * R_0(hist).  Fit C so that the forward map of the continuation
    // cancels the history tail in least squares.
    const std::size_t nh = static_cast<std::size_t>(std::llround(1.0 / dt));
    const std::size_t n = nh;
    UniformGrid grid(-1.0, dt, 2 * nh);
    DriftRecord hist(grid, 1, params.T_hist);
    for (std::size_t i = 0; i < nh; ++i) {
        double t = grid.node(i) + 0.5 * dt;
        hist.gw[0][i] = std::sin(std::numbers::pi * (t + 1.0)); // smooth bump
    }
    hist.mark_nonzero(0, nh);
    // tail of the history under the forward map on the window
    std::vector<std::vector<double>> zero(1, std::vector<double>(n, 0.0));
    auto tail = gw_to_gb(zero, hist, nh, params);
    // continuation with C = 1
    KernelParams p1 = params;
    p1.inv_C = 1.0;
    std::vector<std::vector<double>> fzero(1, std::vector<double>(n, 0.0));
    auto cont = gb_to_gw(fzero, hist, nh, p1);
    // forward map of the continuation alone (no history)
    DriftRecord empty(grid, 1, params.T_hist);
    auto fwd = gw_to_gb(cont, empty, nh, params);
    // least squares: minimize || C * fwd + tail ||^2
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += -tail[0][i] * fwd[0][i];
        den += fwd[0][i] * fwd[0][i];
    }
    return num / den;
}

// --------------------------------------------------------------------------
// Hölder norm and admissibility functionals

double holder_norm(const PathIncrements& p, double theta, double a, double b) {
    if (!(theta > 0.0 && theta < 1.0))
        throw std::invalid_argument("holder_norm: theta must lie in (0, 1)");
    const double dt = p.grid.dt;
    long ia = std::llround((a - p.grid.t0) / dt);
    long ib = std::llround((b - p.grid.t0) / dt);
    if (ia < 0 || ib > static_cast<long>(p.grid.n) || ia >= ib ||
        std::abs(p.grid.node(ia) - a) > 1e-9 * dt ||
        std::abs(p.grid.node(ib) - b) > 1e-9 * dt)
        throw std::invalid_argument("holder_norm: window not covered by grid");
    // node values on the window
    const std::size_t m = static_cast<std::size_t>(ib - ia);
    std::vector<std::vector<double>> vals(p.d, std::vector<double>(m + 1, 0.0));
    for (std::size_t c = 0; c < p.d; ++c)
        for (std::size_t i = 0; i < m; ++i)
            vals[c][i + 1] = vals[c][i] + p.increments[c][ia + i];
    double best = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j <= m; ++j) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < p.d; ++c) {
                double diff = vals[c][j] - vals[c][i];
                d2 += diff * diff;
            }
            double q = std::sqrt(d2) / std::pow(static_cast<double>(j - i) * dt, theta);
            best = std::max(best, q);
        }
    }
    return best;
}

double phi_functional(const WienerPath& w, double tau, double eps,
                      const KernelParams& params) {
    const double dt = w.grid.dt;
    const double H = params.H;
    long i_tau = std::llround((tau - w.grid.t0) / dt);
    long i_lo = std::llround((tau - 1.0 - params.T_hist - w.grid.t0) / dt);
    long i_mem_end = std::llround((tau - 1.0 - w.grid.t0) / dt);
    long i_win_end = std::llround((tau + 1.0 - w.grid.t0) / dt);
    if (i_mem_end < 0 || i_win_end > static_cast<long>(w.grid.n))
        throw std::invalid_argument("phi_functional: insufficient path coverage around tau");
    i_lo = std::max<long>(i_lo, 0);

    // m_c(t) = int_{mem} (t-r)^{H-1/2} dw_r at window nodes, exact per cell
    const std::size_t nwin = static_cast<std::size_t>(i_win_end - i_tau);
    const double e = H + 0.5;
    std::vector<std::vector<double>> mem(w.d, std::vector<double>(nwin + 1, 0.0));
    for (long j = i_lo; j < i_mem_end; ++j) {
        double p = w.grid.node(j), q = p + dt;
        for (std::size_t m = 0; m <= nwin; ++m) {
            double t = tau + static_cast<double>(m) * dt;
            double ker = (std::pow(t - p, e) - std::pow(t - q, e)) / (e * dt);
            for (std::size_t c = 0; c < w.d; ++c)
                mem[c][m] += ker * w.increments[c][j];
        }
    }
    double sup = 0.0;
    for (std::size_t i = 0; i < nwin; ++i) {
        for (std::size_t j = i + 1; j <= nwin; ++j) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < w.d; ++c) {
                double diff = mem[c][j] - mem[c][i];
                d2 += diff * diff;
            }
            sup = std::max(sup, std::sqrt(d2) / (static_cast<double>(j - i) * dt));
        }
    }
    return sup + holder_norm(w, 0.5 - eps, tau - 1.0, tau);
}

// --------------------------------------------------------------------------
// memory decomposition diagnostic

namespace {
// int_{lo}^{hi} (t-r)^{H-1/2} dW_r for piecewise-linear W, exact per cell
void wiener_kernel_integral(const WienerPath& w, double lo, double hi, double t,
                            double H, std::vector<double>& acc, double sign) {
    if (hi <= lo) return;
    const double dt = w.grid.dt;
    const double e = H + 0.5;
    long j0 = static_cast<long>(std::floor((lo - w.grid.t0) / dt + 1e-9));
    long j1 = static_cast<long>(std::ceil((hi - w.grid.t0) / dt - 1e-9));
    j0 = std::max<long>(j0, 0);
    j1 = std::min<long>(j1, static_cast<long>(w.grid.n));
    for (long j = j0; j < j1; ++j) {
        double p = std::max(w.grid.node(j), lo);
        double q = std::min(w.grid.node(j) + dt, hi);
        if (q <= p) continue;
        double ker = (pw(t - p, e) - pw(t - q, e)) / (e * dt);
        for (std::size_t c = 0; c < w.d; ++c)
            acc[c] += sign * ker * w.increments[c][j];
    }
}
} // namespace

MemoryDecomposition memory_decomposition(const WienerPath& w, double s, double t,
                                         const std::vector<double>& breakpoints,
                                         const KernelParams& params) {
    if (!(s < t))
        throw std::invalid_argument("memory_decomposition: need s < t");
    for (std::size_t i = 1; i < breakpoints.size(); ++i)
        if (!(breakpoints[i] > breakpoints[i - 1]))
            throw std::invalid_argument("memory_decomposition: breakpoints must increase");
    const double H = params.H;
    const double h = t - s;
    const double fs = std::floor(s);
    const double tail_end = fs - 1.0;
    const double w_lo = w.grid.t0;

    MemoryDecomposition out;
    out.gamma1.assign(w.d, 0.0);
    out.gamma2.assign(w.d, 0.0);
    out.gamma3.assign(w.d, 0.0);
    out.total.assign(w.d, 0.0);

    auto kernel_diff = [&](double lo, double hi, std::vector<double>& acc) {
        wiener_kernel_integral(w, lo, hi, t, H, acc, 1.0);
        wiener_kernel_integral(w, lo, hi, s, H, acc, -1.0);
    };

    // memory blocks over breakpoints: Lambda_m integrates over
    // [tau_{m-1}, min(tau_m, tau_{k-1} - 1)] for m < k (tau_{-1} = -inf,
    // truncated at the path start) and [tau_{k-1} - 1, floor(s) - 1] for m = k
    if (breakpoints.empty()) {
        std::vector<double> acc(w.d, 0.0);
        kernel_diff(w_lo, tail_end, acc);
        out.lambda.push_back(std::move(acc));
    } else {
        const double tau_last = breakpoints.back();
        for (std::size_t m = 0; m < breakpoints.size(); ++m) {
            std::vector<double> acc(w.d, 0.0);
            double lo = (m == 0) ? w_lo : breakpoints[m - 1];
            double hi = std::min(breakpoints[m], tau_last - 1.0);
            if (hi > lo) kernel_diff(lo, hi, acc);
            out.lambda.push_back(std::move(acc));
        }
        std::vector<double> acc(w.d, 0.0);
        if (tail_end > tau_last - 1.0) kernel_diff(tau_last - 1.0, tail_end, acc);
        out.lambda.push_back(std::move(acc));
    }

    kernel_diff(tail_end, s - h, out.gamma1);
    wiener_kernel_integral(w, s - h, s, s, H, out.gamma2, 1.0);
    wiener_kernel_integral(w, s - h, t, t, H, out.gamma3, 1.0);

    for (std::size_t c = 0; c < w.d; ++c) {
        double sum = out.gamma1[c] - out.gamma2[c] + out.gamma3[c];
        for (const auto& lam : out.lambda) sum += lam[c];
        out.total[c] = params.alpha_H * sum;
    }
    return out;
}

} // namespace fracouple
