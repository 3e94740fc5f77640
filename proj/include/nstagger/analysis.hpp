#pragma once

// Analytical instruments: transfer-matrix bandwidth growth, the linear-model
// rank check for decomposed least squares, multiply-accumulate accounting and
// the relative L2 error metric.

#include "nstagger/field.hpp"
#include "nstagger/model.hpp"
#include "nstagger/residuals.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nstagger {

inline constexpr double kStructuralZero = 1e-14;

/// Dense d x d matrix with its recorded bandwidth (max |i-j| over entries
/// whose magnitude exceeds kStructuralZero).
struct BandMatrix {
    std::size_t d = 0;
    std::vector<double> values; // row-major
    std::size_t bandwidth = 0;

    double operator()(std::size_t i, std::size_t j) const { return values[i * d + j]; }
    std::vector<double> apply(std::span<const double> x) const;
};

std::size_t matrix_bandwidth(std::span<const double> values, std::size_t d);

/// One-step transfer matrix of the diffusion scheme in lexicographic order.
/// Periodic grids act on all H*W points. Dirichlet grids act on the
/// (H-2)*(W-2) interior unknowns with homogeneous boundary data, since a
/// held boundary contributes only a constant.
BandMatrix build_transfer_matrix(const GridSpec& grid, const DiffusionResidualConfig& cfg);

/// 1-D analogue on d points with r = dt/dx^2 (periodic ring or Dirichlet
/// interior with zero ends).
BandMatrix build_transfer_matrix_1d(std::size_t d, double r, bool periodic, TimeScheme scheme);

struct BandwidthStudy {
    /// bandwidth[k-1] is the bandwidth of T^k, k = 1..k_max.
    std::vector<std::size_t> bandwidth;
    /// First k whose power has no structural zeros.
    std::optional<std::size_t> k_dense;
};

/// Bandwidth of T^k for k = 1..k_max. The sparsity pattern of each power is
/// propagated structurally from the pattern of T, so far-field entries that
/// are tiny but nonzero still count. Throws ConfigError beyond max_dim.
BandwidthStudy transfer_power_bandwidth(const BandMatrix& t, std::size_t k_max,
                                        std::size_t max_dim = 4096);

/// Numeric T^k.
BandMatrix matrix_power(const BandMatrix& t, std::size_t k);

struct AffineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};
AffineFit affine_fit(std::span<const double> x, std::span<const double> y);

/// Length of the pre-saturation prefix: the k with bandwidth(k) + bandwidth(1) <= d - 1,
/// i.e. while the band can still grow by one full step.
std::size_t presaturation_length(const BandwidthStudy& s, std::size_t d);

struct Prop1Block {
    std::size_t block = 0;
    std::size_t rank = 0;
    double gap = 0.0;
};

struct Prop1Report {
    std::size_t rank_full = 0;
    std::vector<Prop1Block> blocks;
    bool equal = false;
    double max_gap = 0.0;
};

/// Compares the minimum-norm least-squares fit of targets from the full data
/// (N x d) with per-block fits, block k holding the columns c with c mod K = k
/// (the strided layout of the spatial decomposition). Targets are N x d too;
/// block k is predicted from block k's data only.
Prop1Report prop1_verify(std::span<const double> samples, std::span<const double> targets,
                         std::size_t n, std::size_t d, std::size_t k_blocks);

struct LayerMacs {
    std::string name;
    std::uint64_t macs = 0;
};

struct GmacsReport {
    std::vector<LayerMacs> layers;
    std::uint64_t per_subtask = 0;
    std::uint64_t total_per_step = 0;
    std::uint64_t workers = 0;
    std::uint64_t per_card_per_step = 0;
    std::uint64_t horizon_steps = 0;
    std::uint64_t ensemble_steps = 0;
    std::uint64_t per_card_horizon = 0;
    std::uint64_t total_horizon = 0;
    /// Per-card horizon MACs of the undecomposed (1,1,1) model over this report's.
    double fold_reduction = 1.0;
};

/// MACs of the convolution layers on the coarse shape (H/s_H, W/s_W); one
/// ensemble step runs s_H*s_W*s_T subtasks, one per worker, and advances s_T
/// frames, so a horizon takes ceil(horizon/s_T) ensemble steps.
GmacsReport count_gmacs(const ModelSpec& spec, const GridSpec& grid, const StaggerFactors& factors,
                        std::size_t horizon_steps);

/// ||pred - truth||_2 / ||truth||_2; throws MetricError on a zero truth.
double relative_error(const Field& pred, const Field& truth);
/// relative_error of frame k of both sequences.
double error_k(const FieldSequence& rollout, const FieldSequence& oracle, std::size_t k);

} // namespace nstagger
