#pragma once

// Discretized PDE operators evaluated as autodiff graphs, so the
// physics-constrained loss is differentiable end to end.
//
// Axis convention: x runs along columns (axis 1), y along rows (axis 0), so
// d/dx uses column neighbours and d/dy row neighbours. On lid-driven grids the
// lid is the last row (y = max) and moves in +x.

#include "nstagger/field.hpp"
#include "nstagger/tensor.hpp"

#include <optional>
#include <vector>

namespace nstagger {

enum class TimeScheme { explicit_euler, crank_nicolson };
enum class DiffusionBoundary { periodic, dirichlet };

struct DiffusionResidualConfig {
    double dx = 1.0;
    double dt = 1.0;
    TimeScheme scheme = TimeScheme::crank_nicolson;
    DiffusionBoundary boundary = DiffusionBoundary::periodic;
    /// Dirichlet data f_{t+dt} on the boundary ring. When empty the boundary
    /// is held at the values of u_t.
    std::optional<std::vector<double>> boundary_values;
};

struct NSResidualConfig {
    double dx = 1.0;
    double dt = 1.0;
    double reynolds = 1.0;
    /// Source added to the right-hand side of the vorticity equation.
    std::optional<std::vector<double>> forcing;
    Boundary boundary = Boundary::periodic;
    std::optional<double> lid_speed;

    /// Throws ConfigError on non-positive Re/dx/dt or a lid-driven config without lid speed.
    void validate() const;
};

/// 5-point Laplacian of a [H,W] tensor with periodic wrap.
Tensor laplacian_periodic(const Tensor& u, double dx);

Tensor diffusion_residual(const Tensor& u_t, const Tensor& u_next,
                          const DiffusionResidualConfig& cfg);
Field diffusion_residual(const Field& u_t, const Field& u_next, const DiffusionResidualConfig& cfg);

/// omega = -L(psi). Periodic grids wrap; lid-driven grids (psi = 0 on the walls)
/// get wall values from Thom's formula and zero corners.
Tensor vorticity_from_stream(const Tensor& psi, double dx, Boundary boundary,
                             double lid_speed = 1.0);
Field vorticity_from_stream(const Field& psi, double lid_speed = 1.0);

/// Right-hand side of the vorticity equation:
/// -psi_y * omega_x + psi_x * omega_y + (1/Re) L(omega) + forcing.
Tensor ns_rhs(const Tensor& omega, const Tensor& psi, const NSResidualConfig& cfg);

/// Crank-Nicolson residual on full-grid stream functions. Periodic grids
/// return [H,W]; lid-driven grids return the interior [H-2,W-2].
Tensor ns_vorticity_residual(const Tensor& psi_t, const Tensor& psi_next,
                             const NSResidualConfig& cfg);
Field ns_vorticity_residual(const Field& psi_t, const Field& psi_next, const NSResidualConfig& cfg);

/// Mean over all entries of all residuals of the squared value.
Tensor msr_loss(const std::vector<Tensor>& residuals);

/// A residual operator on "state" tensors: the fields a neural solver sees
/// and predicts. For lid-driven flow the state is the interior of psi and the
/// zero walls are restored before evaluation.
class ResidualOperator {
public:
    static ResidualOperator diffusion(GridSpec grid, DiffusionResidualConfig cfg);
    static ResidualOperator navier_stokes(GridSpec grid, NSResidualConfig cfg);

    Tensor operator()(const Tensor& prev_state, const Tensor& next_state) const;

    bool is_navier_stokes() const { return ns_.has_value(); }
    const GridSpec& grid() const { return grid_; }
    /// Grid of the state tensors (the interior for lid-driven flow).
    GridSpec state_grid() const;
    double dt() const;
    const std::optional<DiffusionResidualConfig>& diffusion_config() const { return diff_; }
    const std::optional<NSResidualConfig>& ns_config() const { return ns_; }

    /// Full-grid field -> state tensor [h,w] and back.
    Tensor to_state(const Field& full) const;
    Field from_state(const Tensor& state, double time) const;

private:
    GridSpec grid_;
    std::optional<DiffusionResidualConfig> diff_;
    std::optional<NSResidualConfig> ns_;
};

Tensor field_tensor(const Field& f);
Field tensor_field(const Tensor& t, const GridSpec& grid, double time);

} // namespace nstagger
