#pragma once

// Classical finite-difference solvers: ground truth for Error-k, generator of
// the first s_T states, and the residual-consistency oracle. They use exactly
// the discrete operators of residuals.hpp, so an oracle pair plugged into the
// matching residual vanishes to solver tolerance.

#include "nstagger/field.hpp"
#include "nstagger/residuals.hpp"

#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

namespace nstagger {

enum class Equation { diffusion, ns_periodic, ns_lid_driven };

struct RandomFieldSpec {
    GridSpec grid;
    double amplitude = 512.0; // 8^3
    double shift = 64.0;
    double exponent = 4.0;
    std::uint64_t seed = 0;
};

/// Eigenvalue of the negative 5-point Laplacian for Fourier mode (ky, kx).
double laplacian_eigenvalue(std::size_t ky, std::size_t kx, std::size_t h, std::size_t w,
                            double dx);

/// Gaussian random field with mode coefficients c_k = sqrt(amplitude) *
/// (lambda_k + shift)^(-exponent/2) * xi_k, field(x) = sum_k c_k e^{2 pi i k.x},
/// so E|c_k|^2 = amplitude * (lambda_k + shift)^(-exponent). The mean mode is zero.
Field sample_random_field(const RandomFieldSpec& spec);

/// Forward mode coefficients (1/N) sum_x f(x) e^{-2 pi i k.x}; test and audit helper.
std::vector<std::complex<double>> mode_coefficients(const Field& f);

struct OracleConfig {
    Equation equation = Equation::diffusion;
    double dt = 1e-3;
    double dx = 1.0;
    std::optional<double> reynolds;
    TimeScheme scheme = TimeScheme::crank_nicolson;
    double picard_tol = 1e-10;
    std::size_t picard_max_iters = 50;
    double poisson_tol = 1e-10;
    double cg_tol = 1e-12;
    std::optional<std::vector<double>> forcing;
    double lid_speed = 1.0;
    /// Burn-in before the first lid-driven bootstrap frame.
    double lid_burn_in = 1.98;

    DiffusionResidualConfig diffusion_residual(const GridSpec& grid) const;
    NSResidualConfig ns_residual(const GridSpec& grid) const;
};

/// Trajectory of steps + 1 frames starting at u0. CN steps are solved by
/// conjugate gradients; explicit steps require dt/dx^2 <= 0.25.
FieldSequence solve_diffusion(const Field& u0, std::size_t steps, const OracleConfig& cfg);
Field diffusion_step(const Field& u, const OracleConfig& cfg);

/// Stream-function trajectory from an initial vorticity omega0 (steps + 1 frames).
FieldSequence solve_ns(const Field& omega0, std::size_t steps, const OracleConfig& cfg);
/// One Crank-Nicolson step of the stream function.
Field ns_step(const Field& psi, const OracleConfig& cfg);

/// Stream function with -L(psi) = omega: spectral on periodic grids, CG with
/// psi = 0 walls on lid-driven grids.
Field stream_from_vorticity(const Field& omega, const OracleConfig& cfg);

/// One oracle step of the configured equation on a full-grid state field.
Field oracle_step(const Field& state, const OracleConfig& cfg);

/// First s_T states. Diffusion starts from `init` (u0); Navier-Stokes from
/// vorticity `init`, with the lid-driven case burned in for cfg.lid_burn_in first.
FieldSequence prepare_bootstrap(const Field& init, std::size_t s_t, const OracleConfig& cfg);

} // namespace nstagger
