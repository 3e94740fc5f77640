#include "nstagger/field.hpp"

#include "nstagger/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nstagger {

void GridSpec::validate() const {
    if (height < 2 || width < 2) {
        throw DimensionError("grid must be at least 2x2, got " + std::to_string(height) + "x" +
                             std::to_string(width));
    }
    if (!(dx > 0.0) || !std::isfinite(dx)) {
        throw DimensionError("grid spacing must be positive and finite");
    }
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

Field::Field(GridSpec grid, std::vector<double> values, double time)
    : grid_(grid), values_(std::move(values)), time_(time) {
    if (values_.size() != grid_.size()) {
        throw DimensionError("field holds " + std::to_string(values_.size()) +
                             " values for a " + std::to_string(grid_.height) + "x" +
                             std::to_string(grid_.width) + " grid");
    }
}

Field Field::zeros(GridSpec grid, double time) {
    return Field(grid, std::vector<double>(grid.size(), 0.0), time);
}

void check_divisible(const GridSpec& grid, const StaggerFactors& factors) {
    if (factors.s_h == 0 || factors.s_w == 0 || factors.s_t == 0) {
        throw DimensionError("stagger factors must be positive");
    }
    if (grid.height % factors.s_h != 0 || grid.width % factors.s_w != 0) {
        throw DimensionError("factors (" + std::to_string(factors.s_h) + "," +
                             std::to_string(factors.s_w) + ") do not divide grid " +
                             std::to_string(grid.height) + "x" + std::to_string(grid.width));
    }
}

GridSpec coarse_grid(const GridSpec& fine, const StaggerFactors& factors) {
    check_divisible(fine, factors);
    GridSpec g = fine;
    g.height = fine.height / factors.s_h;
    g.width = fine.width / factors.s_w;
    g.dx = fine.dx * static_cast<double>(factors.s_h);
    return g;
}

void gather_subgrid(std::span<const double> fine, std::size_t width, std::size_t s_h,
                    std::size_t s_w, std::size_t i, std::size_t j, std::size_t coarse_h,
                    std::size_t coarse_w, std::span<double> out) {
    for (std::size_t r = 0; r < coarse_h; ++r) {
        const double* src = fine.data() + (r * s_h + i) * width + j;
        double* dst = out.data() + r * coarse_w;
        for (std::size_t c = 0; c < coarse_w; ++c) dst[c] = src[c * s_w];
    }
}

void scatter_subgrid(std::span<const double> coarse, std::size_t width, std::size_t s_h,
                     std::size_t s_w, std::size_t i, std::size_t j, std::size_t coarse_h,
                     std::size_t coarse_w, std::span<double> fine) {
    for (std::size_t r = 0; r < coarse_h; ++r) {
        const double* src = coarse.data() + r * coarse_w;
        double* dst = fine.data() + (r * s_h + i) * width + j;
        for (std::size_t c = 0; c < coarse_w; ++c) dst[c * s_w] = src[c];
    }
}

SubfieldArray decompose_spatial(const Field& field, const StaggerFactors& factors) {
    const GridSpec cg = coarse_grid(field.grid(), factors);
    SubfieldArray out;
    out.factors = factors;
    out.origin_grid = field.grid();
    out.subfields.reserve(factors.spatial_count());
    for (std::size_t i = 0; i < factors.s_h; ++i) {
        for (std::size_t j = 0; j < factors.s_w; ++j) {
            std::vector<double> v(cg.size());
            gather_subgrid(field.values(), field.width(), factors.s_h, factors.s_w, i, j,
                           cg.height, cg.width, v);
            out.subfields.emplace_back(cg, std::move(v), field.time());
        }
    }
    return out;
}

Field reconstruct_spatial(const SubfieldArray& subs) {
    const auto& f = subs.factors;
    const GridSpec& fine = subs.origin_grid;
    const GridSpec cg = coarse_grid(fine, f);
    if (subs.subfields.size() != f.spatial_count()) {
        throw DimensionError("expected " + std::to_string(f.spatial_count()) +
                             " subfields, got " + std::to_string(subs.subfields.size()));
    }
    std::vector<double> v(fine.size());
    for (std::size_t i = 0; i < f.s_h; ++i) {
        for (std::size_t j = 0; j < f.s_w; ++j) {
            const Field& s = subs.at(i, j);
            if (s.height() != cg.height || s.width() != cg.width) {
                throw DimensionError("subfield (" + std::to_string(i) + "," + std::to_string(j) +
                                     ") has shape " + std::to_string(s.height()) + "x" +
                                     std::to_string(s.width()) + ", expected " +
                                     std::to_string(cg.height) + "x" + std::to_string(cg.width));
            }
            scatter_subgrid(s.values(), fine.width, f.s_h, f.s_w, i, j, cg.height, cg.width, v);
        }
    }
    return Field(fine, std::move(v), subs.subfields.front().time());
}

bool same_time(double a, double b) { return std::abs(a - b) <= kTimeTolerance; }

void FieldSequence::validate() const {
    for (std::size_t k = 1; k < frames.size(); ++k) {
        if (!(frames[k].grid() == frames[0].grid())) {
            throw LayoutError("frame " + std::to_string(k) + " is on a different grid");
        }
        if (!same_time(frames[k].time(), frames[0].time() + static_cast<double>(k) * dt)) {
            throw LayoutError("frame " + std::to_string(k) + " time " +
                              std::to_string(frames[k].time()) + " breaks the dt spacing");
        }
    }
}

std::vector<std::pair<std::size_t, Field>> decompose_temporal(const FieldSequence& seq,
                                                              std::size_t s_t) {
    if (s_t == 0 || seq.size() != s_t) {
        throw LayoutError("temporal decomposition needs exactly s_T=" + std::to_string(s_t) +
                          " frames, got " + std::to_string(seq.size()));
    }
    std::vector<std::pair<std::size_t, Field>> out;
    out.reserve(s_t);
    for (std::size_t k = 0; k < s_t; ++k) out.emplace_back(k, seq.frames[k]);
    return out;
}

FieldSequence interleave_temporal(std::vector<std::pair<std::size_t, Field>> predictions,
                                  std::size_t s_t, double t0, double dt) {
    if (predictions.size() != s_t) {
        throw LayoutError("expected " + std::to_string(s_t) + " predictions, got " +
                          std::to_string(predictions.size()));
    }
    std::sort(predictions.begin(), predictions.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    FieldSequence seq;
    seq.dt = dt;
    for (std::size_t k = 0; k < s_t; ++k) {
        if (predictions[k].first != k) {
            throw LayoutError("missing or duplicate temporal offset " + std::to_string(k));
        }
        Field f = std::move(predictions[k].second);
        if (dt > 0.0) f.set_time(t0 + static_cast<double>(s_t + k) * dt);
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

} // namespace nstagger
