#pragma once

// Fractional kernel machinery: fGn sampling (circulant embedding), the
// truncated moving-average map from Wiener to fBm increments, the weighted
// memory operator R_T, the drift inversion pair g_w <-> g_B, Hölder norms and
// the admissibility memory functional.
//
// Discretization convention used throughout: drift functions (g_w, g_B, f_h)
// are represented by their per-cell averages on a uniform grid (piecewise
// constant), while Wiener/fBm paths are piecewise linear between nodes.  All
// singular kernel integrals against these representations are evaluated with
// exact antiderivatives (product integration); no raw finite differencing of
// singular integrals anywhere.

#include <complex>
#include <cstddef>
#include <utility>
#include <vector>

#include "fracouple/grid.hpp"
#include "fracouple/rng.hpp"

namespace fracouple {

struct KernelParams {
    double H = 0.0;        // Hurst parameter, in (1/2, 1)
    double alpha_H = 0.0;  // moving-average normalization, Var(B_1) = 1
    double theta = 0.0;    // Hölder exponent, in (1/2, H)
    double eps_theta = 0.0; // = (H - theta) / 2, enforced
    int quad_nodes = 8;    // Gauss-Legendre points per cell for R_T quadrature
    double T_hist = 256.0; // truncation horizon for infinite-past integrals
    double delta = 0.0;    // weighted-norm exponent; recorded only, unused
    double inv_C = 1.0;    // memory-term constant of the g_B -> g_w inversion;
                           // make_kernel_params sets -sin(pi(H-1/2))/pi
                           // (calibrated; the continuation identity gives 1)
};

// Builds params with alpha_H from the variance calibration quadrature.
KernelParams make_kernel_params(double H, double theta, double T_hist,
                                int quad_nodes = 8);

// 1 / Var of the H-kernel moving average at t = 1 (untruncated), by graded
// high-resolution quadrature; alpha_H = 1/sqrt of this.
double mvn_unit_variance(double H);
double alpha_H_calibrate(double H);
// Known closed form, kept as an independent cross-check of the calibration.
double alpha_H_closed_form(double H);
// Variance deficit of B_1 when the kernel past is truncated at T_hist.
double truncation_variance_deficit(double H, double T_hist);
// Fits the memory-term constant of gb_to_gw by least squares on the
// round-trip identity with a nonzero history (expected to return ~1).
double calibrate_inversion_C(const KernelParams& params, double dt);

// ---------------------------------------------------------------------------
// Drift record: per-cell samples of g_w and g_B over the simulation grid,
// with a sparsity index of the cells where g_w may be nonzero.
struct DriftRecord {
    UniformGrid grid;
    std::size_t d = 0;
    double horizon = 0.0; // = T_hist
    std::vector<std::vector<double>> gw; // d x n cell averages
    std::vector<std::vector<double>> gb; // d x n cell averages
    std::vector<std::pair<std::size_t, std::size_t>> nonzero; // disjoint [i0,i1)

    DriftRecord() = default;
    DriftRecord(const UniformGrid& g, std::size_t d_, double horizon_);
    // declare cells [i0, i1) as potentially nonzero (merged into the index)
    void mark_nonzero(std::size_t i0, std::size_t i1);
};

// ---------------------------------------------------------------------------
// fGn sampling by circulant embedding of the exact autocovariance.
class FgnSampler {
  public:
    FgnSampler(double H, std::size_t n);
    // appends n unit-spacing, unit-variance fGn samples to out
    void sample_unit(RngStream& rng, std::vector<double>& out) const;
    std::size_t n() const { return n_; }

  private:
    std::size_t n_ = 0, M_ = 0;
    std::vector<double> sqrt_lambda_;
};

// power-of-two complex FFT (forward: e^{-2pi i jk/M})
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

// exact unit-lag fGn autocovariance gamma(k)
double fgn_autocov(double H, std::size_t k);

FbmPath sample_fgn(const KernelParams& params, const UniformGrid& grid,
                   std::size_t d, RngStream& rng);

// Truncated Mandelbrot-Van Ness map: fBm increments on [out_start, w.t_end]
// from two-sided Wiener increments; past truncated at params.T_hist.
FbmPath mvn_map(const WienerPath& w, const KernelParams& params, double out_start);

// Convolution weights of the discrete MVN/forward-inversion kernel:
// weight(0) = 1, weight(k) = (k+1)^{H+1/2} - 2k^{H+1/2} + (k-1)^{H+1/2}.
double mvn_weight(double H, std::size_t k);

// ---------------------------------------------------------------------------
// (R_T g)(t) = int_{-inf}^0 t^{1/2-H} (T-s)^{H-1/2} / (t+T-s) g(s) ds,
// evaluated for the record's g_w history at absolute time tau (history window
// [tau - T_hist, tau] mapped onto [-T_hist, 0]).  Returns d x ts.size().
std::vector<std::vector<double>> r_operator(const DriftRecord& g, double tau,
                                            double T, const std::vector<double>& ts,
                                            const KernelParams& params);

// Forward inversion: g_B cell averages on the window of n_win cells starting
// at cell index win_start of hist.grid, from the window's g_w cells plus the
// recorded g_w history before win_start (truncated at horizon).
std::vector<std::vector<double>> gw_to_gb(const std::vector<std::vector<double>>& g,
                                          const DriftRecord& hist,
                                          std::size_t win_start,
                                          const KernelParams& params);

// Inverse: g_w cell averages on the window from g_B (= f) on the window and
// the g_w history; memory term through r_operator, local term by the exact
// product-integrated Abel derivative.  jump_flag (optional) is set when f has
// adjacent-cell jumps above tol_jump, where the rule loses accuracy.
std::vector<std::vector<double>> gb_to_gw(const std::vector<std::vector<double>>& f,
                                          const DriftRecord& hist,
                                          std::size_t win_start,
                                          const KernelParams& params,
                                          bool* jump_flag = nullptr,
                                          double tol_jump = 1e100);

// ---------------------------------------------------------------------------
// sup over grid node pairs a <= s < t <= b of |p(t)-p(s)| / (t-s)^theta
// (Euclidean norm across coordinates).
double holder_norm(const PathIncrements& p, double theta, double a, double b);

// phi_{tau,eps}(w): sup over window node pairs of the normalized truncated
// memory integral plus the (1/2-eps)-Hölder norm of w on [tau-1, tau].
double phi_functional(const WienerPath& w, double tau, double eps,
                      const KernelParams& params);

// ---------------------------------------------------------------------------
// Diagnostic decomposition of B_t - B_s into local terms Gamma_1,2,3 and
// memory terms Lambda_m over past breakpoints.
struct MemoryDecomposition {
    std::vector<std::vector<double>> lambda; // one entry per breakpoint block, each d-vector
    std::vector<double> gamma1, gamma2, gamma3; // d-vectors
    std::vector<double> total; // alpha_H * (sum lambda + g1 - g2 + g3)
};
MemoryDecomposition memory_decomposition(const WienerPath& w, double s, double t,
                                         const std::vector<double>& breakpoints,
                                         const KernelParams& params);

} // namespace fracouple
