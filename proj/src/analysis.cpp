#include "nstagger/analysis.hpp"

#include "nstagger/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace nstagger {
namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

BandMatrix from_eigen(const Mat& m) {
    BandMatrix b;
    b.d = static_cast<std::size_t>(m.rows());
    b.values.assign(m.data(), m.data() + m.size());
    b.bandwidth = matrix_bandwidth(b.values, b.d);
    return b;
}

Mat to_eigen(const BandMatrix& b) {
    const auto d = static_cast<Eigen::Index>(b.d);
    return Eigen::Map<const Mat>(b.values.data(), d, d);
}

// One-step matrix from the discrete Laplacian L: explicit I + dt L, CN
// (I - dt/2 L)^-1 (I + dt/2 L).
Mat step_matrix(const Mat& lap, double dt, TimeScheme scheme) {
    const Mat id = Mat::Identity(lap.rows(), lap.cols());
    if (scheme == TimeScheme::explicit_euler) return id + dt * lap;
    const Mat a = id - 0.5 * dt * lap;
    const Mat b = id + 0.5 * dt * lap;
    return a.partialPivLu().solve(b);
}

struct Pinv {
    Mat pinv;
    std::size_t rank;
};

Pinv pseudo_inverse(const Mat& a) {
    if (a.size() == 0) return {Mat::Zero(a.cols(), a.rows()), 0};
    Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double smax = s.size() > 0 ? s(0) : 0.0;
    const double cut = 1e-10 * smax;
    std::size_t rank = 0;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (smax > 0.0 && s(i) > cut) {
            inv(i) = 1.0 / s(i);
            ++rank;
        }
    }
    return {svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose(), rank};
}

} // namespace

std::vector<double> BandMatrix::apply(std::span<const double> x) const {
    if (x.size() != d) throw ShapeError("BandMatrix::apply: vector length mismatch");
    std::vector<double> y(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += values[i * d + j] * x[j];
        y[i] = s;
    }
    return y;
}

std::size_t matrix_bandwidth(std::span<const double> values, std::size_t d) {
    std::size_t bw = 0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (std::abs(values[i * d + j]) > kStructuralZero) bw = std::max(bw, i > j ? i - j : j - i);
    return bw;
}

BandMatrix build_transfer_matrix(const GridSpec& grid, const DiffusionResidualConfig& cfg) {
    grid.validate();
    if (!(cfg.dt >= 0.0) || !(cfg.dx > 0.0)) throw ConfigError("transfer matrix needs dt >= 0, dx > 0");
    const bool periodic = cfg.boundary == DiffusionBoundary::periodic;
    const std::size_t h = periodic ? grid.height : grid.height - 2;
    const std::size_t w = periodic ? grid.width : grid.width - 2;
    if (h == 0 || w == 0) throw DimensionError("Dirichlet transfer matrix needs H, W >= 3");
    const auto d = static_cast<Eigen::Index>(h * w);
    Mat lap = Mat::Zero(d, d);
    const double inv = 1.0 / (cfg.dx * cfg.dx);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const auto i = static_cast<Eigen::Index>(r * w + c);
            lap(i, i) -= 4.0 * inv;
            const long nb[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
            for (const auto& o : nb) {
                long rr = static_cast<long>(r) + o[0], cc = static_cast<long>(c) + o[1];
                if (periodic) {
                    rr = (rr + static_cast<long>(h)) % static_cast<long>(h);
                    cc = (cc + static_cast<long>(w)) % static_cast<long>(w);
                } else if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) {
                    continue; // zero boundary value
                }
                lap(i, static_cast<Eigen::Index>(rr) * static_cast<Eigen::Index>(w) + cc) += inv;
            }
        }
    return from_eigen(step_matrix(lap, cfg.dt, cfg.scheme));
}

BandMatrix build_transfer_matrix_1d(std::size_t d, double r, bool periodic, TimeScheme scheme) {
    if (d < 2) throw DimensionError("1-D transfer matrix needs d >= 2");
    const auto n = static_cast<Eigen::Index>(d);
    Mat lap = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        lap(i, i) -= 2.0;
        if (periodic) {
            lap(i, (i + 1) % n) += 1.0;
            lap(i, (i + n - 1) % n) += 1.0;
        } else {
            if (i + 1 < n) lap(i, i + 1) += 1.0;
            if (i > 0) lap(i, i - 1) += 1.0;
        }
    }
    return from_eigen(step_matrix(lap, r, scheme));
}

BandwidthStudy transfer_power_bandwidth(const BandMatrix& t, std::size_t k_max, std::size_t max_dim) {
    if (t.d > max_dim) {
        throw ConfigError("transfer matrix dimension " + std::to_string(t.d) +
                          " exceeds the dense cap " + std::to_string(max_dim));
    }
    const std::size_t d = t.d;
    std::vector<char> base(d * d), cur(d * d), next(d * d);
    for (std::size_t i = 0; i < d * d; ++i) base[i] = std::abs(t.values[i]) > kStructuralZero;
    cur = base;
    BandwidthStudy s;
    for (std::size_t k = 1; k <= k_max; ++k) {
        if (k > 1) {
            std::fill(next.begin(), next.end(), 0);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t m = 0; m < d; ++m) {
                    if (!cur[i * d + m]) continue;
                    for (std::size_t j = 0; j < d; ++j) next[i * d + j] |= base[m * d + j];
                }
            cur.swap(next);
        }
        std::size_t bw = 0;
        bool dense = true;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                if (cur[i * d + j]) bw = std::max(bw, i > j ? i - j : j - i);
                else dense = false;
            }
        s.bandwidth.push_back(bw);
        if (dense && !s.k_dense) s.k_dense = k;
    }
    return s;
}

BandMatrix matrix_power(const BandMatrix& t, std::size_t k) {
    const Mat a = to_eigen(t);
    Mat p = Mat::Identity(a.rows(), a.cols());
    for (std::size_t i = 0; i < k; ++i) p = (p * a).eval();
    return from_eigen(p);
}

AffineFit affine_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("affine_fit needs >= 2 paired points");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    AffineFit f;
    f.slope = sxx > 0 ? sxy / sxx : 0.0;
    f.intercept = my - f.slope * mx;
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (f.slope * x[i] + f.intercept);
        sse += e * e;
    }
    f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
    return f;
}

std::size_t presaturation_length(const BandwidthStudy& s, std::size_t d) {
    if (s.bandwidth.empty()) return 0;
    const std::size_t b1 = s.bandwidth[0];
    std::size_t n = 0;
    while (n < s.bandwidth.size() && s.bandwidth[n] + b1 <= d - 1) ++n;
    return n;
}

Prop1Report prop1_verify(std::span<const double> samples, std::span<const double> targets,
                         std::size_t n, std::size_t d, std::size_t k_blocks) {
    if (k_blocks == 0 || d % k_blocks != 0) {
        throw DimensionError("prop1: d = " + std::to_string(d) + " is not divisible by K = " +
                             std::to_string(k_blocks));
    }
    if (samples.size() != n * d || targets.size() != n * d) {
        throw ShapeError("prop1: samples and targets must both be N x d");
    }
    const auto N = static_cast<Eigen::Index>(n), D = static_cast<Eigen::Index>(d);
    const Mat u = Eigen::Map<const Mat>(samples.data(), N, D);
    const Mat y = Eigen::Map<const Mat>(targets.data(), N, D);
    const Pinv full = pseudo_inverse(u);
    const Mat pred_full = u * (full.pinv * y);

    Prop1Report rep;
    rep.rank_full = full.rank;
    rep.equal = true;
    const auto kb = static_cast<Eigen::Index>(k_blocks), bd = D / kb;
    for (Eigen::Index k = 0; k < kb; ++k) {
        Mat uk(N, bd), yk(N, bd), pk(N, bd);
        for (Eigen::Index c = 0; c < bd; ++c) {
            uk.col(c) = u.col(c * kb + k);
            yk.col(c) = y.col(c * kb + k);
            pk.col(c) = pred_full.col(c * kb + k);
        }
        const Pinv blk = pseudo_inverse(uk);
        const Mat pred_block = uk * (blk.pinv * yk);
        Prop1Block b;
        b.block = static_cast<std::size_t>(k);
        b.rank = blk.rank;
        b.gap = (pk - pred_block).norm();
        rep.max_gap = std::max(rep.max_gap, b.gap);
        rep.equal = rep.equal && b.rank == rep.rank_full && b.gap < 1e-8;
        rep.blocks.push_back(b);
    }
    return rep;
}

GmacsReport count_gmacs(const ModelSpec& spec, const GridSpec& grid, const StaggerFactors& factors,
                        std::size_t horizon_steps) {
    spec.validate();
    check_divisible(grid, factors);
    auto per_subtask = [&](std::size_t h, std::size_t w, std::vector<LayerMacs>* layers) {
        std::uint64_t total = 0;
        for (const auto& l : conv_layers(spec)) {
            const std::uint64_t m = static_cast<std::uint64_t>(h) * w * l.in_channels * l.out_channels *
                                    l.kernel * l.kernel;
            if (layers) layers->push_back({l.name, m});
            total += m;
        }
        return total;
    };
    GmacsReport r;
    r.per_subtask = per_subtask(grid.height / factors.s_h, grid.width / factors.s_w, &r.layers);
    r.workers = factors.subtask_count();
    r.total_per_step = r.per_subtask * r.workers;
    r.per_card_per_step = r.total_per_step / r.workers;
    r.horizon_steps = horizon_steps;
    r.ensemble_steps = (horizon_steps + factors.s_t - 1) / factors.s_t;
    r.per_card_horizon = r.per_card_per_step * r.ensemble_steps;
    r.total_horizon = r.total_per_step * r.ensemble_steps;
    const std::uint64_t baseline = per_subtask(grid.height, grid.width, nullptr) * horizon_steps;
    r.fold_reduction = r.per_card_horizon > 0 ? static_cast<double>(baseline) /
                                                    static_cast<double>(r.per_card_horizon)
                                              : 1.0;
    return r;
}

double relative_error(const Field& pred, const Field& truth) {
    if (!(pred.grid() == truth.grid())) throw ShapeError("relative_error: grid mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.values().size(); ++i) {
        const double e = pred.values()[i] - truth.values()[i];
        num += e * e;
        den += truth.values()[i] * truth.values()[i];
    }
    if (den == 0.0) throw MetricError("relative error undefined for an all-zero ground truth");
    return std::sqrt(num) / std::sqrt(den);
}

double error_k(const FieldSequence& rollout, const FieldSequence& oracle, std::size_t k) {
    if (k >= rollout.size() || k >= oracle.size()) {
        throw MetricError("Error-" + std::to_string(k) + " needs frame " + std::to_string(k) +
                          " in both sequences");
    }
    return relative_error(rollout[k], oracle[k]);
}

} // namespace nstagger
