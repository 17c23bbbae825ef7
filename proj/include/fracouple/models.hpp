#pragma once

// SDE model declarations (drift, diffusion, potential, Lyapunov function),
// numerical validation of the structural assumptions, and pathwise Euler
// integration against fractional-Brownian increments.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "fracouple/grid.hpp"
#include "fracouple/kernels.hpp"
#include "fracouple/rng.hpp"

namespace fracouple {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

struct ModelSpec {
    std::string name;
    std::size_t d = 1;
    std::function<Vec(const Vec&)> b;          // drift
    std::function<Mat(const Vec&)> sigma;      // diffusion (d x d)
    std::function<Vec(const Vec&)> h;          // potential with grad_h = sigma^{-1}
    std::function<Mat(const Vec&)> grad_h;     // Jacobian of h
    std::function<Vec(const Vec&)> h_inverse;  // inverse of h (used by the coupler)
    std::function<double(const Vec&)> V;       // Lyapunov function, > 0
    std::function<Vec(const Vec&)> grad_V;
    double beta0 = 2.0;       // drift constants of the Lyapunov inequality
    double kappa0 = 2.0;
    double sigma_bound = 1.0; // sup norm bound on sigma
};

// builtin models: "scalar_sin", "planar_rotation" (uses rho_rot),
// "additive_baseline" (any d)
ModelSpec make_model(const std::string& name, std::size_t d = 1,
                     double rho_rot = 1.0);

struct Trajectory {
    UniformGrid grid;
    std::size_t d;
    std::vector<Vec> states; // (n+1) rows, d entries each

    Trajectory(const UniformGrid& g, std::size_t dim)
        : grid(g), d(dim), states(g.n + 1, Vec(dim, 0.0)) {}
};

// first-order Euler step X_{i+1} = X_i + b(X_i) dt + sigma(X_i) dB_i
// (pathwise/Young reading, valid for H > 1/2); throws on non-finite states,
// naming the first bad step
Trajectory integrate(const ModelSpec& model, const Vec& x0, const FbmPath& fbm);

// deterministic low-discrepancy probe points inside the ball of the given
// radius around center
struct ProbeSpec {
    Vec center;
    double radius = 5.0;
    std::size_t count = 256;
};

std::vector<Vec> probe_points(const ProbeSpec& probe, std::size_t d);

struct AssumptionReport {
    bool pass = true;
    double worst = 0.0;       // worst margin (h1) / worst deviation (h2)
    Vec argmax;               // probe point attaining it
    double worst_cond = 0.0;  // h2 only: max condition estimate of sigma
};

// Lyapunov drift inequality (grad V(x) | b(x)) <= beta0 - kappa0 V(x)
AssumptionReport check_h1(const ModelSpec& m, const ProbeSpec& probe);

// structure of the diffusion: sigma invertible, grad_h = sigma^{-1} (finite
// differences), and the cross-derivative (integrability) condition
// d_k (sigma^{-1})_{ij} = d_j (sigma^{-1})_{ik} needed for sigma^{-1} to be
// a Jacobian
AssumptionReport check_h2(const ModelSpec& m, const ProbeSpec& probe,
                          double tol_fd = 1e-5);

struct ContractionReport {
    bool ok = false;
    double rho_hat = 1.0;
    double C_hat = 0.0;
    double active_fraction = 0.0;
};

// empirical one-step contraction Psi(X_1) <= rho Psi(x) + C (1 + ||B||_theta)
// with Psi = V^{(2 theta - 1)/4}, fitted over a point grid times n_paths
// noise draws
ContractionReport contraction_estimate(const ModelSpec& m,
                                       const KernelParams& params,
                                       std::size_t n_paths, double dt,
                                       RngStream& rng);

struct PathBoundReport {
    bool violated = false;
    double lhs = 0.0;
    double rhs = 0.0;
};

// diagnostic bound sup_t F(X_t) <= C_diag (F(X_tau) +
// beta_tilde (1 + ||B||_theta)^{4/(2 theta - 1)}), F(x) = 1 + |x|^2
PathBoundReport path_bound_check(const ModelSpec& m, const Trajectory& traj,
                                 const FbmPath& fbm, double C_diag,
                                 double beta_tilde, double theta);

// small dense helpers shared with the coupling engine
Mat mat_inverse(const Mat& a);
Vec mat_vec(const Mat& a, const Vec& x);

} // namespace fracouple
