#pragma once

// Three-step asymptotic coupling engine for SDEs driven by fractional
// Brownian motion (H > 1/2):
//   Step 1  Girsanov coupling on a unit window: a contracting drift f_h in
//           h-coordinates (rho ODE), mapped to a Wiener-level drift g_h by
//           the kernel inversion, realized by a three-branch sampler whose
//           marginals stay Wiener.
//   Step 2  dyadic shift couplings along the deterministic continuation g_S
//           of the accumulated drift, on intervals of length c2 * 2^ell.
//   Step 3  waiting periods with shared innovations after a failed trial.
// Plus the (K, alpha)-admissibility predicate that gates every attempt.
//
// Internally both systems are integrated in h-coordinates (dy = (grad h b)
// (h^{-1}(y)) dt + dB) and the drift constructions are carried out with the
// exact discrete inverse of the truncated moving-average map, so that on a
// successful coupling the two discrete paths coincide to rounding accuracy
// and the snap to equality is a no-op up to floating point.

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fracouple/kernels.hpp"
#include "fracouple/models.hpp"
#include "fracouple/rng.hpp"

namespace fracouple {

struct CouplingConfig {
    double H = 0.7;
    double theta = 0.55;      // Hölder exponent, in (1/2, H)
    double alpha = 0.25;      // admissibility weight exponent, in (0, 1/2)
    double K = 10.0;          // admissibility radius
    double c2 = 1.0;          // dyadic base length; = C_K^{1/(2 alpha)} once measured
    double c3 = 4.0;          // wait base; >= 2 c2 and >= log(delta1/2)/log(rho_hat)
    double beta = 2.5;        // wait exponent; > 1/(1 - 2 alpha)
    double varsigma = 1.25;   // per-trial wait growth factor, > 1
    double delta1 = 0.9;      // probability of attempting step 1 when admissible
    double dt = 1.0 / 32.0;
    double T_hist = 8.0;      // memory truncation horizon
    double C_K = 1.0;         // weighted-tail bound from measure_CK (>= 1)
    double Kbar = 0.0;        // sup |h(x2) - h(x1)| over the K-ball (probed)
    double kappa2 = 0.0;      // 0 -> 4 sqrt(Kbar) rule at make_coupling_config
    double M = 0.0;           // companion excursion radius; 0 -> 2 K default
    double a_loc = 0.0;       // localization radius; 0 -> max{M, C_hat(M,K)} + 1
    double kappa1 = 0.0;      // 0 -> kappa1_estimate over the localized model
    double Cbar = 0.0;        // budget on int_0^1 |g_h|^2; 0 -> derived bound
    double rho_hat = 0.5;     // one-step contraction factor (contraction_estimate)
    double tol_stick_rel = 1e-8;  // sticking tolerance, scaled by 1 + |X^1|
    double tol_zero = 1e-12;      // absorbing threshold of the rho ODE
    double tol_mono = 1e-9;       // monotonicity slack before step rejection
    int max_refine = 12;          // rho ODE substep halvings before giving up
    std::size_t ell_max = 0;      // 0 -> smallest with residual mass < eps_horizon
    double eps_horizon = 1e-3;    // declared residual failure mass at ell_max
    KernelParams kernels;         // derived at make_coupling_config
};

// Builds a config with all derived quantities filled in (kernel params, Kbar
// and kappa2 = 4 sqrt(Kbar), localization radius, kappa1, Girsanov budget,
// ell_max) and validated.  C_K / c2 stay at their defaults until measure_CK.
CouplingConfig make_coupling_config(const ModelSpec& model, double H,
                                    double theta, double dt, double T_hist);

// Same derivation from a partially filled config: every field left at its
// zero sentinel (kernels, Kbar, kappa2, M, a_loc, kappa1, Cbar, ell_max) is
// computed, c2 is snapped to a grid multiple, and the result is validated.
CouplingConfig complete_coupling_config(const ModelSpec& model,
                                        CouplingConfig cfg);

// Throws std::invalid_argument naming the violated constraint.
void validate_coupling_config(const CouplingConfig& cfg);

// Schedule arithmetic.  Lengths are defined in integer steps so the logged
// invariants are exact: the dyadic base c2 is snapped to a grid multiple at
// configuration time and waits are rounded up to whole steps.
std::size_t interval_steps(const CouplingConfig& cfg, std::size_t ell);
double delta3_duration(const CouplingConfig& cfg, std::size_t ell, std::size_t k);
std::size_t wait_steps(const CouplingConfig& cfg, std::size_t ell, std::size_t k);

// ---------------------------------------------------------------------------
// localization

struct LocalizedModel {
    std::size_t d = 1;
    double a = 0.0;
    std::function<Vec(const Vec&)> varpi;       // radial retraction into B(0, a+1)
    std::function<Mat(const Vec&)> grad_varpi;  // Jacobian, operator norm <= 1
    std::function<Vec(const Vec&)> b_loc;       // b o varpi
    std::function<Vec(const Vec&)> h_loc;       // h o varpi
    std::function<Vec(const Vec&)> drift_y;     // (grad h_a  b_a)(h^{-1}(y))
};

// varpi_a(x) = x for |x| <= a, (x/|x|)(a + 1 - e^{-(|x|-a)}) beyond: C^1,
// image in the closed ball of radius a+1, radial derivative in (0, 1].
Vec varpi_map(const Vec& x, double a);
Mat varpi_jacobian(const Vec& x, double a);

LocalizedModel localize(const ModelSpec& m, double a);

// sup over probe pairs y1, y2 in h(B(0, a)) of
// |drift_y(y2) - drift_y(y1)| / |y2 - y1|, times the safety factor.
double kappa1_estimate(const LocalizedModel& lm, std::size_t n_probe = 256,
                       double safety = 1.2);

// ---------------------------------------------------------------------------
// rho ODE

struct RhoSolution {
    std::vector<Vec> rho;      // node values, grid.n + 1 entries
    std::vector<Vec> f_cells;  // cell averages of f_h = -k1 rho - k2 rho/sqrt|rho|
    double extinction_time = std::numeric_limits<double>::infinity();
    bool ok = true;            // false if refinement failed somewhere
};

// d rho/dt = drift_y(y1(t) + rho) - drift_y(y1(t)) - k1 rho - k2 rho/sqrt|rho|
// by RK4 with adaptive substeps; zero is absorbing (|rho| < tol_zero -> 0);
// a cell where |rho| grows by more than tol_mono is re-done with halved
// substeps, up to max_refine halvings.
RhoSolution rho_ode_solve(const Vec& rho0, const std::vector<Vec>& y1_nodes,
                          const std::function<Vec(const Vec&)>& drift_y,
                          double kappa1, double kappa2, const UniformGrid& grid,
                          double tol_zero = 1e-12, double tol_mono = 1e-9,
                          int max_refine = 12);

// ---------------------------------------------------------------------------
// Girsanov density on a unit window

// log D = sum_i g(t_i) . dw_i - (1/2) sum_i |g(t_i)|^2 dt for cell-sampled g;
// throws std::runtime_error if |log D| > 700 (runaway drift).
double girsanov_log_density(const std::vector<std::vector<double>>& g_cells,
                            const WienerPath& w);
double girsanov_density(const std::vector<std::vector<double>>& g_cells,
                        const WienerPath& w);

// ---------------------------------------------------------------------------
// scalar shift coupling

struct ShiftCouple {
    double u1 = 0.0, u2 = 0.0;
    bool success = false;  // success  <=>  u2 = u1 + a exactly
    double M_b = 0.0;      // sure bound on |u2 - u1|
    double pi_star = 0.0;  // exact success probability
};

// Couple of standard normals with P(U2 = U1 + a) = pi_star, |U2 - U1| <= M_b
// surely, and |U_i| <= M_b / 2 on success.  For b < 1, pi_star = 1 - 0.75 b
// (inside [1-b, 1-b/2]); the overlap in excess of pi_star is thinned into the
// residual quantile coupling, whose far tails sit on the diagonal.
// Requires b > 0 and |a| <= b.
ShiftCouple scalar_shift_coupling(double a, double b, RngStream& rng);

// ---------------------------------------------------------------------------
// coupling state

struct AdmissibilityReport {
    double sup_T_integral = 0.0;  // grid max plus rigorous tail surplus
    double x1_norm = 0.0, x2_norm = 0.0;
    double phi1 = 0.0, phi2 = 0.0;
    bool pass_omega1 = true, pass_omega2 = true;
    std::vector<double> T_grid;
    bool pass() const { return pass_omega1 && pass_omega2; }
};

struct CouplingState {
    enum class Phase { WaitTau0, Step1, Step2, Step3, Done };
    Phase phase = Phase::WaitTau0;
    std::size_t k = 0;         // trial index (1-based once trials start)
    double tau_prev = 0.0;     // end of the previous trial
    std::size_t steps = 0;     // clock in grid steps from time 0
    Vec y1, y2;                // states in h-coordinates
    Vec x1, x2;                // h^{-1} images, refreshed at phase boundaries
    WienerPath w1, w2;         // innovations from time 0 (zero implicit past)
    DriftRecord drift;         // g_w / g_B record on the same grid
    std::optional<double> coupled_since;

    double dt() const { return w1.grid.dt; }
    double clock() const { return static_cast<double>(steps) * dt(); }
    std::size_t capacity() const { return w1.grid.n; }
};

// Fresh state at time 0 with zero past, capacity for simulations up to
// t_max plus the worst-case overrun of a trial in progress.
CouplingState make_state(const ModelSpec& m, const Vec& x1, const Vec& x2,
                         const CouplingConfig& cfg, double t_max);

AdmissibilityReport check_admissibility(const CouplingState& state,
                                        const CouplingConfig& cfg);

// Advances both systems n_steps with shared innovations (g_w = 0; the pair
// difference of the noises evolves only through the drift memory).
void advance_shared(CouplingState& state, std::size_t n_steps,
                    const ModelSpec& m, const CouplingConfig& cfg,
                    RngStream& rng);

// ---------------------------------------------------------------------------
// trial bookkeeping

struct TrialRecord {
    std::size_t k = 0;
    bool attempted = false;
    bool step1_success = false;
    long ell_star = 0;  // 0 = step-1 failure, -1 = full success
    double tau_prev = 0.0, tau_k = 0.0;
    double girsanov_l2 = 0.0;   // int_0^1 |g_h|^2 of the attempted drift
    std::string branch = "skipped";  // coupled | swapped | diagonal | skipped
    AdmissibilityReport admissibility;
    std::size_t step1_steps = 0, step2_steps = 0, step3_steps = 0;
    double gS_norm_last = 0.0;  // |g_S|_2 of the last dyadic trial
};

// CSV with header k,attempted,step1_success,ell_star,tau_prev,tau_k,
// girsanov_l2,branch,adm_sup_T,adm_phi1,adm_phi2,adm_pass
void write_trial_log(const std::vector<TrialRecord>& trials,
                     const std::string& path);

// ---------------------------------------------------------------------------
// the three steps

struct Step1Outcome {
    bool attempted = false;
    bool success = false;
    std::string branch = "skipped";
    double girsanov_l2 = 0.0;
    double a1 = 0.0, a2 = 0.0;  // branch acceptance ratios
    AdmissibilityReport admissibility;
};

// One unit-window attempt starting at the current clock; advances the state
// by 1/dt steps.  force_attempt bypasses the admissibility gate and the
// delta1 thinning (used by calibration).
Step1Outcome step1_attempt(CouplingState& state, const ModelSpec& m,
                           const LocalizedModel& lm, const CouplingConfig& cfg,
                           RngStream& rng, bool force_attempt = false);

// Deterministic continuation of the accumulated drift past T1, evaluated at
// the relative times ts > 0 (the memory operator applied to the history).
std::vector<std::vector<double>> compute_gS(const CouplingState& state,
                                            double T1,
                                            const std::vector<double>& ts,
                                            const CouplingConfig& cfg);

struct Step2Outcome {
    bool success = false;
    double gS_norm = 0.0;
    double u1 = 0.0, u2 = 0.0;
    double max_lift_err = 0.0;  // max |(W2-W1) - int g_S| over the interval
};

// Dyadic trial ell >= 1 on the next interval of length c2 2^ell; advances
// the state across it.
Step2Outcome step2_attempt(CouplingState& state, std::size_t ell,
                           const ModelSpec& m, const CouplingConfig& cfg,
                           RngStream& rng);

// Waiting period after a failed trial (ell = ell_star, 0 if step 1 failed);
// advances wait_steps(cfg, ell, k) steps with shared innovations, clipped to
// the state capacity.
void step3_wait(CouplingState& state, std::size_t ell, const ModelSpec& m,
                const CouplingConfig& cfg, RngStream& rng);

// ---------------------------------------------------------------------------
// calibration and the full scheme

// Monte Carlo bound (max over successful forced step-1 outcomes, safety 1.5,
// floor 1) of int_0^inf (1+t)^{2 alpha} |g_S(t)|^2 dt; sets cfg.C_K and
// c2 = C_K^{1/(2 alpha)} (snapped to a grid multiple) and bumps c3 to keep
// c3 >= 2 c2.  Returns the C_K estimate.
double measure_CK(CouplingConfig& cfg, const ModelSpec& m, std::size_t n_runs,
                  RngStream& rng);

// Number of whole time units to wait before the first trial:
// inf{u in N : rho_hat^u (Psi(x1) + Psi(x2)) <= 1}, Psi = V^{(2 theta - 1)/4}
// (at least 1, so the admissibility functionals are well defined).
std::size_t tau0_wait(const ModelSpec& m, const Vec& x1, const Vec& x2,
                      const CouplingConfig& cfg);

struct CouplingResult {
    bool coupled = false;
    double tau_infty = std::numeric_limits<double>::infinity();
    double tau0 = 0.0;
    double t_censor = 0.0;  // simulated horizon when censored
    std::vector<TrialRecord> trials;
};

// Full scheme: WaitTau0 -> (Step1 -> Step2(1, 2, ...) -> Step3)* until the
// dyadic successes reach ell_max (declared success, residual eps_horizon) or
// persist beyond t_max (coupled at the horizon), or the clock passes t_max
// without an active success chain (censored).
CouplingResult run_coupling(const ModelSpec& m, const Vec& x1, const Vec& x2,
                            const CouplingConfig& cfg, double t_max,
                            RngStream& rng);

} // namespace fracouple
