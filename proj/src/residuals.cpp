#include "nstagger/residuals.hpp"

#include "nstagger/errors.hpp"

#include <cmath>

namespace nstagger {
namespace {

// Neighbour views: value at (r-1), (r+1), (c-1), (c+1) with periodic wrap.
Tensor up(const Tensor& u) { return circular_shift(u, 0, 1); }    // u[r-1][c]
Tensor down(const Tensor& u) { return circular_shift(u, 0, -1); } // u[r+1][c]
Tensor left(const Tensor& u) { return circular_shift(u, 1, 1); }  // u[r][c-1]
Tensor right(const Tensor& u) { return circular_shift(u, 1, -1); } // u[r][c+1]

Tensor d_dx(const Tensor& u, double dx) { return scale(sub(right(u), left(u)), 0.5 / dx); }
Tensor d_dy(const Tensor& u, double dx) { return scale(sub(down(u), up(u)), 0.5 / dx); }

enum class Region { interior, boundary, top, bottom, left_wall, right_wall };

Tensor mask(std::size_t h, std::size_t w, Region region, double value = 1.0) {
    std::vector<double> m(h * w, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const bool edge_r = r == 0 || r == h - 1;
            const bool edge_c = c == 0 || c == w - 1;
            bool on = false;
            switch (region) {
            case Region::interior: on = !edge_r && !edge_c; break;
            case Region::boundary: on = edge_r || edge_c; break;
            case Region::top: on = r == h - 1 && !edge_c; break;
            case Region::bottom: on = r == 0 && !edge_c; break;
            case Region::left_wall: on = c == 0 && !edge_r; break;
            case Region::right_wall: on = c == w - 1 && !edge_r; break;
            }
            if (on) m[r * w + c] = value;
        }
    }
    return Tensor::from(Shape{h, w}, std::move(m));
}

void require_matching(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || a.shape() != b.shape()) {
        throw ShapeError("residual inputs must be matching [H,W] tensors, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
}

} // namespace

void NSResidualConfig::validate() const {
    if (!(reynolds > 0.0) || !std::isfinite(reynolds)) throw ConfigError("Re must be positive");
    if (!(dx > 0.0) || !(dt > 0.0)) throw ConfigError("dx and dt must be positive");
    if (boundary == Boundary::dirichlet_lid && !lid_speed) {
        throw ConfigError("lid-driven residual needs a lid speed");
    }
}

Tensor field_tensor(const Field& f) {
    return Tensor::from(Shape{f.height(), f.width()},
                        std::vector<double>(f.values().begin(), f.values().end()));
}

Field tensor_field(const Tensor& t, const GridSpec& grid, double time) {
    return Field(grid, std::vector<double>(t.data().begin(), t.data().end()), time);
}

Tensor laplacian_periodic(const Tensor& u, double dx) {
    const Tensor nb = add(add(up(u), down(u)), add(left(u), right(u)));
    return scale(sub(nb, scale(u, 4.0)), 1.0 / (dx * dx));
}

Tensor diffusion_residual(const Tensor& u_t, const Tensor& u_next,
                          const DiffusionResidualConfig& cfg) {
    require_matching(u_t, u_next);
    const Tensor rate = scale(sub(u_next, u_t), 1.0 / cfg.dt);
    Tensor rhs = laplacian_periodic(u_t, cfg.dx);
    if (cfg.scheme == TimeScheme::crank_nicolson) {
        rhs = scale(add(rhs, laplacian_periodic(u_next, cfg.dx)), 0.5);
    }
    Tensor r = sub(rate, rhs);
    if (cfg.boundary == DiffusionBoundary::periodic) return r;

    const std::size_t h = u_t.shape()[0], w = u_t.shape()[1];
    std::vector<double> f;
    if (cfg.boundary_values) {
        if (cfg.boundary_values->size() != h * w) {
            throw ShapeError("Dirichlet data must cover the full grid");
        }
        f = *cfg.boundary_values;
    } else {
        f.assign(u_t.data().begin(), u_t.data().end());
    }
    const Tensor target = Tensor::from(Shape{h, w}, std::move(f));
    return add(mul(mask(h, w, Region::interior), r),
               mul(mask(h, w, Region::boundary), sub(u_next, target)));
}

Field diffusion_residual(const Field& u_t, const Field& u_next, const DiffusionResidualConfig& cfg) {
    if (!(u_t.grid() == u_next.grid())) throw ShapeError("diffusion residual: grid mismatch");
    return tensor_field(diffusion_residual(field_tensor(u_t), field_tensor(u_next), cfg),
                        u_t.grid(), u_next.time());
}

Tensor vorticity_from_stream(const Tensor& psi, double dx, Boundary boundary, double lid_speed) {
    const Tensor omega = scale(laplacian_periodic(psi, dx), -1.0);
    if (boundary == Boundary::periodic) return omega;

    const std::size_t h = psi.shape()[0], w = psi.shape()[1];
    const double c = -2.0 / (dx * dx);
    Tensor out = mul(mask(h, w, Region::interior), omega);
    out = add(out, mul(mask(h, w, Region::top), scale(sub(up(psi), psi), c)));
    out = add(out, mul(mask(h, w, Region::bottom), scale(sub(down(psi), psi), c)));
    out = add(out, mul(mask(h, w, Region::left_wall), scale(sub(right(psi), psi), c)));
    out = add(out, mul(mask(h, w, Region::right_wall), scale(sub(left(psi), psi), c)));
    return add(out, mask(h, w, Region::top, -2.0 * lid_speed / dx));
}

Field vorticity_from_stream(const Field& psi, double lid_speed) {
    return tensor_field(
        vorticity_from_stream(field_tensor(psi), psi.grid().dx, psi.grid().boundary, lid_speed),
        psi.grid(), psi.time());
}

Tensor ns_rhs(const Tensor& omega, const Tensor& psi, const NSResidualConfig& cfg) {
    const Tensor adv = add(scale(mul(d_dy(psi, cfg.dx), d_dx(omega, cfg.dx)), -1.0),
                           mul(d_dx(psi, cfg.dx), d_dy(omega, cfg.dx)));
    Tensor rhs = add(adv, scale(laplacian_periodic(omega, cfg.dx), 1.0 / cfg.reynolds));
    if (cfg.forcing) {
        if (cfg.forcing->size() != omega.size()) throw ShapeError("forcing does not match grid");
        rhs = add(rhs, Tensor::from(omega.shape(), *cfg.forcing));
    }
    return rhs;
}

Tensor ns_vorticity_residual(const Tensor& psi_t, const Tensor& psi_next,
                             const NSResidualConfig& cfg) {
    require_matching(psi_t, psi_next);
    cfg.validate();
    const double lid = cfg.lid_speed.value_or(1.0);
    const Tensor w_t = vorticity_from_stream(psi_t, cfg.dx, cfg.boundary, lid);
    const Tensor w_n = vorticity_from_stream(psi_next, cfg.dx, cfg.boundary, lid);
    const Tensor rate = scale(sub(w_n, w_t), 1.0 / cfg.dt);
    const Tensor avg = scale(add(ns_rhs(w_t, psi_t, cfg), ns_rhs(w_n, psi_next, cfg)), 0.5);
    const Tensor r = sub(rate, avg);
    if (cfg.boundary == Boundary::periodic) return r;
    const std::size_t h = psi_t.shape()[0], w = psi_t.shape()[1];
    return slice2d(r, 1, h - 1, 1, w - 1);
}

Field ns_vorticity_residual(const Field& psi_t, const Field& psi_next, const NSResidualConfig& cfg) {
    if (!(psi_t.grid() == psi_next.grid())) throw ShapeError("NS residual: grid mismatch");
    const Tensor r = ns_vorticity_residual(field_tensor(psi_t), field_tensor(psi_next), cfg);
    GridSpec g = psi_t.grid();
    g.height = r.shape()[0];
    g.width = r.shape()[1];
    return tensor_field(r, g, psi_next.time());
}

Tensor msr_loss(const std::vector<Tensor>& residuals) {
    if (residuals.empty()) throw ContractError("msr_loss needs at least one residual");
    std::size_t total = 0;
    Tensor acc;
    for (const auto& r : residuals) {
        total += r.size();
        const Tensor s = reduce_sum(square(r));
        acc = acc.defined() ? add(acc, s) : s;
    }
    return scale(acc, 1.0 / static_cast<double>(total));
}

ResidualOperator ResidualOperator::diffusion(GridSpec grid, DiffusionResidualConfig cfg) {
    grid.validate();
    ResidualOperator op;
    op.grid_ = grid;
    op.diff_ = std::move(cfg);
    return op;
}

ResidualOperator ResidualOperator::navier_stokes(GridSpec grid, NSResidualConfig cfg) {
    grid.validate();
    cfg.boundary = grid.boundary;
    if (cfg.boundary == Boundary::dirichlet_lid && !cfg.lid_speed) cfg.lid_speed = 1.0;
    cfg.validate();
    ResidualOperator op;
    op.grid_ = grid;
    op.ns_ = std::move(cfg);
    return op;
}

GridSpec ResidualOperator::state_grid() const {
    GridSpec g = grid_;
    if (ns_ && grid_.boundary == Boundary::dirichlet_lid) {
        g.height -= 2;
        g.width -= 2;
    }
    return g;
}

double ResidualOperator::dt() const { return diff_ ? diff_->dt : ns_->dt; }

Tensor ResidualOperator::operator()(const Tensor& prev_state, const Tensor& next_state) const {
    if (diff_) return diffusion_residual(prev_state, next_state, *diff_);
    if (grid_.boundary == Boundary::dirichlet_lid) {
        return ns_vorticity_residual(pad(prev_state, 1, PadMode::zero),
                                     pad(next_state, 1, PadMode::zero), *ns_);
    }
    return ns_vorticity_residual(prev_state, next_state, *ns_);
}

Tensor ResidualOperator::to_state(const Field& full) const {
    const Tensor t = field_tensor(full);
    if (ns_ && grid_.boundary == Boundary::dirichlet_lid) {
        return slice2d(t, 1, grid_.height - 1, 1, grid_.width - 1);
    }
    return t;
}

Field ResidualOperator::from_state(const Tensor& state, double time) const {
    if (ns_ && grid_.boundary == Boundary::dirichlet_lid) {
        return tensor_field(pad(state, 1, PadMode::zero), grid_, time);
    }
    return tensor_field(state, grid_, time);
}

} // namespace nstagger
