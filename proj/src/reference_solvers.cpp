#include "nstagger/reference_solvers.hpp"

#include "nstagger/errors.hpp"
#include "nstagger/fft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace nstagger {
namespace {

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// 5-point Laplacian with periodic wrap; boundary rows of walled grids are
// masked out by the callers.
void laplacian(std::span<const double> u, std::size_t h, std::size_t w, double dx,
               std::span<double> out) {
    const double inv = 1.0 / (dx * dx);
    for (std::size_t r = 0; r < h; ++r) {
        const std::size_t ru = (r + h - 1) % h, rd = (r + 1) % h;
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t cl = (c + w - 1) % w, cr = (c + 1) % w;
            out[r * w + c] = (u[ru * w + c] + u[rd * w + c] + u[r * w + cl] + u[r * w + cr] -
                              4.0 * u[r * w + c]) *
                             inv;
        }
    }
}

std::vector<char> interior_mask(std::size_t h, std::size_t w, bool walled) {
    std::vector<char> m(h * w, 1);
    if (!walled) return m;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            if (r == 0 || c == 0 || r == h - 1 || c == w - 1) m[r * w + c] = 0;
    return m;
}

// Conjugate gradients on the active entries of x for an SPD operator. Inactive
// entries of x are held fixed; `apply` must only read inactive entries of its
// argument when computing active outputs through the fixed data. Stops at
// max|r| <= tol * scale, with scale = max(1, max|b|) unless given.
template <typename Apply>
void conjugate_gradient(Apply&& apply, std::span<const double> b, std::vector<double>& x,
                        const std::vector<char>& active, double tol, std::size_t max_iter,
                        const char* what, double scale = 0.0) {
    const std::size_t n = x.size();
    std::vector<double> r(n, 0.0), p(n, 0.0), ap(n, 0.0);
    apply(std::span<const double>(x), std::span<double>(ap));
    double bmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        r[i] = b[i] - ap[i];
        bmax = std::max(bmax, std::abs(b[i]));
    }
    const double stop = tol * (scale > 0.0 ? scale : std::max(1.0, bmax));
    p = r;
    double rr = 0.0;
    for (std::size_t i = 0; i < n; ++i) rr += r[i] * r[i];
    for (std::size_t it = 0; it < max_iter; ++it) {
        if (max_abs(r) <= stop) return;
        apply(std::span<const double>(p), std::span<double>(ap));
        double pap = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (active[i]) pap += p[i] * ap[i];
        const double alpha = rr / pap;
        double rr_new = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            rr_new += r[i] * r[i];
        }
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = active[i] ? r[i] + beta * p[i] : 0.0;
    }
    if (max_abs(r) > stop) {
        throw SolverError(std::string(what) + ": CG did not converge, residual " +
                          std::to_string(max_abs(r)));
    }
}

void check_grid(const GridSpec& g, const OracleConfig& cfg) {
    g.validate();
    if (!(cfg.dt > 0.0)) throw ConfigError("oracle dt must be positive");
    if (cfg.picard_tol <= 0.0 || cfg.poisson_tol <= 0.0 || cfg.cg_tol <= 0.0) {
        throw ConfigError("oracle tolerances must be positive");
    }
}

Tensor as_tensor(const Field& f) { return field_tensor(f); }

} // namespace

double laplacian_eigenvalue(std::size_t ky, std::size_t kx, std::size_t h, std::size_t w,
                            double dx) {
    const double ay = 2.0 * std::numbers::pi * static_cast<double>(ky) / static_cast<double>(h);
    const double ax = 2.0 * std::numbers::pi * static_cast<double>(kx) / static_cast<double>(w);
    return ((2.0 - 2.0 * std::cos(ay)) + (2.0 - 2.0 * std::cos(ax))) / (dx * dx);
}

Field sample_random_field(const RandomFieldSpec& spec) {
    const GridSpec& g = spec.grid;
    g.validate();
    if (g.boundary != Boundary::periodic || !is_power_of_two(g.height) ||
        !is_power_of_two(g.width)) {
        throw ConfigError("random fields need a periodic power-of-two grid");
    }
    const std::size_t h = g.height, w = g.width, n = h * w;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<fft::cplx> z(n);
    for (auto& v : z) v = normal(rng);
    // Forward DFT of real white noise: Hermitian, E|Z_k|^2 = n.
    fft::transform2d(z, h, w, false);
    const double norm = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t ky = 0; ky < h; ++ky)
        for (std::size_t kx = 0; kx < w; ++kx) {
            const double lam = laplacian_eigenvalue(ky, kx, h, w, g.dx);
            const double mult = std::sqrt(spec.amplitude) * std::pow(lam + spec.shift, -spec.exponent / 2.0);
            z[ky * w + kx] *= mult * norm;
        }
    z[0] = 0.0;
    fft::transform2d(z, h, w, true);
    std::vector<double> v(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = z[i].real();
        mean += v[i];
    }
    mean /= static_cast<double>(n);
    for (auto& x : v) x -= mean;
    return Field(g, std::move(v), 0.0);
}

std::vector<std::complex<double>> mode_coefficients(const Field& f) {
    std::vector<fft::cplx> z(f.values().begin(), f.values().end());
    fft::transform2d(z, f.height(), f.width(), false);
    const double inv = 1.0 / static_cast<double>(z.size());
    for (auto& v : z) v *= inv;
    return z;
}

DiffusionResidualConfig OracleConfig::diffusion_residual(const GridSpec& grid) const {
    DiffusionResidualConfig c;
    c.dx = grid.dx;
    c.dt = dt;
    c.scheme = scheme;
    c.boundary = grid.boundary == Boundary::periodic ? DiffusionBoundary::periodic
                                                     : DiffusionBoundary::dirichlet;
    return c;
}

NSResidualConfig OracleConfig::ns_residual(const GridSpec& grid) const {
    NSResidualConfig c;
    c.dx = grid.dx;
    c.dt = dt;
    c.reynolds = reynolds.value_or(0.0);
    c.forcing = forcing;
    c.boundary = grid.boundary;
    if (grid.boundary == Boundary::dirichlet_lid) c.lid_speed = lid_speed;
    return c;
}

Field diffusion_step(const Field& u, const OracleConfig& cfg) {
    const GridSpec& g = u.grid();
    check_grid(g, cfg);
    const std::size_t h = g.height, w = g.width, n = g.size();
    const bool walled = g.boundary != Boundary::periodic;
    const auto active = interior_mask(h, w, walled);
    const double r = cfg.dt / (g.dx * g.dx);
    std::vector<double> lu(n);
    laplacian(u.values(), h, w, g.dx, lu);
    std::vector<double> next(u.values().begin(), u.values().end());

    if (cfg.scheme == TimeScheme::explicit_euler) {
        if (r > 0.25) {
            throw ConfigError("explicit diffusion step violates dt/dx^2 <= 0.25 (got " +
                              std::to_string(r) + ")");
        }
        for (std::size_t i = 0; i < n; ++i)
            if (active[i]) next[i] += cfg.dt * lu[i];
        return Field(g, std::move(next), u.time() + cfg.dt);
    }

    // Posed per unit time, so the CG residual is the scheme's own residual and
    // the tolerance bounds it directly rather than dt times it.
    const double inv_dt = 1.0 / cfg.dt;
    std::vector<double> b(n);
    double umax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        b[i] = inv_dt * u.values()[i] + 0.5 * lu[i];
        umax = std::max(umax, std::abs(u.values()[i]));
    }
    std::vector<double> tmp(n);
    auto apply = [&](std::span<const double> x, std::span<double> out) {
        laplacian(x, h, w, g.dx, tmp);
        for (std::size_t i = 0; i < n; ++i) out[i] = inv_dt * x[i] - 0.5 * tmp[i];
    };
    conjugate_gradient(apply, b, next, active, cfg.cg_tol, 10 * n + 100, "diffusion CN step",
                       std::max(1.0, umax));
    return Field(g, std::move(next), u.time() + cfg.dt);
}

FieldSequence solve_diffusion(const Field& u0, std::size_t steps, const OracleConfig& cfg) {
    FieldSequence seq;
    seq.dt = cfg.dt;
    seq.frames.push_back(u0);
    for (std::size_t s = 0; s < steps; ++s) seq.frames.push_back(diffusion_step(seq.back(), cfg));
    return seq;
}

Field stream_from_vorticity(const Field& omega, const OracleConfig& cfg) {
    const GridSpec& g = omega.grid();
    const std::size_t h = g.height, w = g.width, n = g.size();
    if (g.boundary == Boundary::periodic) {
        std::vector<fft::cplx> z(omega.values().begin(), omega.values().end());
        fft::transform2d(z, h, w, false);
        for (std::size_t ky = 0; ky < h; ++ky)
            for (std::size_t kx = 0; kx < w; ++kx) {
                const double lam = laplacian_eigenvalue(ky, kx, h, w, g.dx);
                z[ky * w + kx] = (ky == 0 && kx == 0) ? fft::cplx(0.0) : z[ky * w + kx] / lam;
            }
        fft::transform2d(z, h, w, true);
        std::vector<double> psi(n);
        for (std::size_t i = 0; i < n; ++i) psi[i] = z[i].real() / static_cast<double>(n);
        return Field(g, std::move(psi), omega.time());
    }
    const auto active = interior_mask(h, w, true);
    std::vector<double> psi(n, 0.0), tmp(n);
    auto apply = [&](std::span<const double> x, std::span<double> out) {
        laplacian(x, h, w, g.dx, tmp);
        for (std::size_t i = 0; i < n; ++i) out[i] = active[i] ? -tmp[i] : 0.0;
    };
    conjugate_gradient(apply, omega.values(), psi, active, cfg.poisson_tol, 10 * n + 100,
                       "lid-driven Poisson solve");
    return Field(g, std::move(psi), omega.time());
}

namespace {

// Warm-started Poisson solve used inside Picard iterations.
Field stream_from_vorticity_guess(const Field& omega, const Field& guess, const OracleConfig& cfg) {
    if (omega.grid().boundary == Boundary::periodic) return stream_from_vorticity(omega, cfg);
    const GridSpec& g = omega.grid();
    const std::size_t h = g.height, w = g.width, n = g.size();
    const auto active = interior_mask(h, w, true);
    std::vector<double> psi(guess.values().begin(), guess.values().end()), tmp(n);
    for (std::size_t i = 0; i < n; ++i)
        if (!active[i]) psi[i] = 0.0;
    auto apply = [&](std::span<const double> x, std::span<double> out) {
        laplacian(x, h, w, g.dx, tmp);
        for (std::size_t i = 0; i < n; ++i) out[i] = active[i] ? -tmp[i] : 0.0;
    };
    conjugate_gradient(apply, omega.values(), psi, active, cfg.poisson_tol, 10 * n + 100,
                       "lid-driven Poisson solve");
    return Field(g, std::move(psi), omega.time());
}

} // namespace

Field ns_step(const Field& psi, const OracleConfig& cfg) {
    const GridSpec& g = psi.grid();
    check_grid(g, cfg);
    const NSResidualConfig rc = cfg.ns_residual(g);
    rc.validate();
    const std::size_t n = g.size();
    const bool walled = g.boundary == Boundary::dirichlet_lid;
    const auto active = interior_mask(g.height, g.width, walled);

    const Tensor psi_n = as_tensor(psi);
    const Tensor omega_n = vorticity_from_stream(psi_n, g.dx, g.boundary, cfg.lid_speed);
    const Tensor rhs_n = ns_rhs(omega_n, psi_n, rc);

    std::vector<double> base(n);
    for (std::size_t i = 0; i < n; ++i) base[i] = omega_n.data()[i] + 0.5 * cfg.dt * rhs_n.data()[i];

    Tensor omega_m = omega_n;
    Field psi_m = psi;
    double last_delta = 0.0;
    for (std::size_t it = 0; it < cfg.picard_max_iters; ++it) {
        const Tensor rhs_m = ns_rhs(omega_m, as_tensor(psi_m), rc);
        std::vector<double> next(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            if (active[i]) next[i] = base[i] + 0.5 * cfg.dt * rhs_m.data()[i];
        psi_m = stream_from_vorticity_guess(Field(g, std::move(next), psi.time()), psi_m, cfg);
        const Tensor omega_new = vorticity_from_stream(as_tensor(psi_m), g.dx, g.boundary, cfg.lid_speed);
        double delta = 0.0, scale_ref = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            delta = std::max(delta, std::abs(omega_new.data()[i] - omega_m.data()[i]));
            scale_ref = std::max(scale_ref, std::abs(omega_new.data()[i]));
        }
        omega_m = omega_new;
        last_delta = delta;
        if (delta <= cfg.picard_tol * scale_ref) {
            psi_m.set_time(psi.time() + cfg.dt);
            return psi_m;
        }
    }
    throw SolverError("Picard iteration did not converge in " +
                      std::to_string(cfg.picard_max_iters) + " iterations, last update " +
                      std::to_string(last_delta));
}

FieldSequence solve_ns(const Field& omega0, std::size_t steps, const OracleConfig& cfg) {
    check_grid(omega0.grid(), cfg);
    FieldSequence seq;
    seq.dt = cfg.dt;
    seq.frames.push_back(stream_from_vorticity(omega0, cfg));
    for (std::size_t s = 0; s < steps; ++s) seq.frames.push_back(ns_step(seq.back(), cfg));
    return seq;
}

Field oracle_step(const Field& state, const OracleConfig& cfg) {
    return cfg.equation == Equation::diffusion ? diffusion_step(state, cfg) : ns_step(state, cfg);
}

FieldSequence prepare_bootstrap(const Field& init, std::size_t s_t, const OracleConfig& cfg) {
    if (s_t == 0) throw ConfigError("s_T must be >= 1");
    if (cfg.equation == Equation::diffusion) return solve_diffusion(init, s_t - 1, cfg);
    if (cfg.equation == Equation::ns_periodic) return solve_ns(init, s_t - 1, cfg);
    const auto burn = static_cast<std::size_t>(std::llround(cfg.lid_burn_in / cfg.dt));
    FieldSequence full = solve_ns(init, burn + s_t - 1, cfg);
    FieldSequence seq;
    seq.dt = cfg.dt;
    seq.frames.assign(full.frames.begin() + static_cast<long>(burn), full.frames.end());
    return seq;
}

} // namespace nstagger
