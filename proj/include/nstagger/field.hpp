#pragma once

/**
 * @file field.hpp
 * @brief Regular-grid scalar fields and the staggered decomposition between a
 * fine grid and its interleaved coarse subgrids, in space and in time.
 *
 * Storage is row-major with (row, column) = (vertical, horizontal). Subgrid
 * (i, j) holds the fine points whose row is congruent to i modulo s_H and
 * whose column is congruent to j modulo s_W, so coarse index (r, c) of
 * subgrid (i, j) is fine index (r * s_H + i, c * s_W + j).
 */

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace nstagger {

enum class Boundary { periodic, dirichlet_lid };

struct GridSpec {
    std::size_t height = 0;
    std::size_t width = 0;
    double dx = 1.0;
    Boundary boundary = Boundary::periodic;

    std::size_t size() const { return height * width; }
    /// Throws DimensionError when the invariants H, W >= 2 and dx > 0 fail.
    void validate() const;
    bool operator==(const GridSpec&) const = default;
};

bool is_power_of_two(std::size_t n);

/// Scalar field on a regular grid. Immutable after construction except
/// through `values_mut` while the owner still builds it.
class Field {
public:
    Field() = default;
    Field(GridSpec grid, std::vector<double> values, double time = 0.0);
    static Field zeros(GridSpec grid, double time = 0.0);

    const GridSpec& grid() const { return grid_; }
    std::size_t height() const { return grid_.height; }
    std::size_t width() const { return grid_.width; }
    double time() const { return time_; }
    void set_time(double t) { time_ = t; }

    std::span<const double> values() const { return values_; }
    std::vector<double>& values_mut() { return values_; }

    double operator()(std::size_t r, std::size_t c) const { return values_[r * grid_.width + c]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * grid_.width + c]; }

private:
    GridSpec grid_{};
    std::vector<double> values_;
    double time_ = 0.0;
};

struct StaggerFactors {
    std::size_t s_h = 1;
    std::size_t s_w = 1;
    std::size_t s_t = 1;

    std::size_t spatial_count() const { return s_h * s_w; }
    std::size_t subtask_count() const { return s_h * s_w * s_t; }
    bool operator==(const StaggerFactors&) const = default;
};

/// Throws DimensionError unless s_H | H and s_W | W (and all factors positive).
void check_divisible(const GridSpec& grid, const StaggerFactors& factors);

/// Grid of a single subgrid: (H/s_H) x (W/s_W) with per-axis coarse spacing.
/// dx records the row-axis spacing dx * s_H.
GridSpec coarse_grid(const GridSpec& fine, const StaggerFactors& factors);

struct SubfieldArray {
    StaggerFactors factors;
    GridSpec origin_grid;
    /// s_H * s_W entries; subgrid (i, j) is at index i * s_W + j.
    std::vector<Field> subfields;

    const Field& at(std::size_t i, std::size_t j) const { return subfields[i * factors.s_w + j]; }
};

SubfieldArray decompose_spatial(const Field& field, const StaggerFactors& factors);
Field reconstruct_spatial(const SubfieldArray& subs);

/// Element-level helpers shared by the Field and autodiff paths.
void gather_subgrid(std::span<const double> fine, std::size_t width, std::size_t s_h,
                    std::size_t s_w, std::size_t i, std::size_t j, std::size_t coarse_h,
                    std::size_t coarse_w, std::span<double> out);
void scatter_subgrid(std::span<const double> coarse, std::size_t width, std::size_t s_h,
                     std::size_t s_w, std::size_t i, std::size_t j, std::size_t coarse_h,
                     std::size_t coarse_w, std::span<double> fine);

struct FieldSequence {
    std::vector<Field> frames;
    double dt = 0.0;

    std::size_t size() const { return frames.size(); }
    const Field& operator[](std::size_t k) const { return frames[k]; }
    const Field& back() const { return frames.back(); }
    /// Throws LayoutError when grids differ or times are not t, t+dt, ...
    void validate() const;
};

inline constexpr double kTimeTolerance = 1e-12;
bool same_time(double a, double b);

/// Pair k carries the frame at t + k*dt, which is the input of the worker that
/// predicts t + (k + s_T)*dt.
std::vector<std::pair<std::size_t, Field>> decompose_temporal(const FieldSequence& seq,
                                                              std::size_t s_t);

/// Inverse of decompose_temporal applied to predictions: frame k of the result
/// is the prediction at offset k. Predictions may arrive in any order. Times
/// are rewritten to `t0 + (s_T + k) * dt` when `dt` is positive.
FieldSequence interleave_temporal(std::vector<std::pair<std::size_t, Field>> predictions,
                                  std::size_t s_t, double t0, double dt);

} // namespace nstagger
