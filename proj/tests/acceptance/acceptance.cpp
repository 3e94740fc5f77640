// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include "nstagger/analysis.hpp"
#include "nstagger/errors.hpp"
#include "nstagger/experiment.hpp"
#include "nstagger/model.hpp"
#include "nstagger/reference_solvers.hpp"
#include "nstagger/residuals.hpp"
#include "nstagger/seeding.hpp"
#include "nstagger/snapshot_io.hpp"
#include "nstagger/staggered_loss.hpp"
#include "nstagger/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

using namespace nstagger;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

fs::path config_path(const std::string& name) {
    return fs::path(NSTAGGER_SOURCE_DIR) / "configs" / name;
}

std::vector<double> normals(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

Field random_field(const GridSpec& g, std::mt19937_64& rng, double t = 0.0) {
    return Field(g, normals(g.size(), rng), t);
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// ---------------------------------------------------------------- 1
Verdict round_trip() {
    std::mt19937_64 rng(1);
    const GridSpec g{16, 16, 1.0 / 16.0, Boundary::periodic};
    std::size_t cases = 0;
    for (std::size_t sh : {1, 2, 4}) {
        for (std::size_t sw : {1, 2, 4}) {
            const Field f = random_field(g, rng);
            const Field back = reconstruct_spatial(decompose_spatial(f, {sh, sw, 1}));
            if (!bit_equal(f.values(), back.values()) || !(back.grid() == g)) {
                return {false, "spatial (" + std::to_string(sh) + "," + std::to_string(sw) + ") not exact"};
            }
            ++cases;
        }
    }
    const double dt = 0.1;
    FieldSequence seq;
    seq.dt = dt;
    for (std::size_t k = 0; k < 4; ++k) seq.frames.push_back(random_field(g, rng, 0.5 + k * dt));
    for (std::size_t st : {1, 2, 4}) {
        for (std::size_t b = 0; b < 4 / st; ++b) {
            FieldSequence block;
            block.dt = dt;
            block.frames.assign(seq.frames.begin() + b * st, seq.frames.begin() + (b + 1) * st);
            auto pairs = decompose_temporal(block, st);
            std::reverse(pairs.begin(), pairs.end());
            const double t0 = block[0].time() - static_cast<double>(st) * dt;
            const FieldSequence back = interleave_temporal(pairs, st, t0, dt);
            if (back.size() != st) return {false, "temporal s_T=" + std::to_string(st) + " frame count"};
            for (std::size_t k = 0; k < st; ++k) {
                if (!bit_equal(back[k].values(), block[k].values()) || !same_time(back[k].time(), block[k].time())) {
                    return {false, "temporal s_T=" + std::to_string(st) + " frame " + std::to_string(k)};
                }
            }
        }
        ++cases;
    }
    return {true, std::to_string(cases) + " factor sets exact"};
}

// ---------------------------------------------------------------- 2
Verdict residual_vs_oracle() {
    const ExperimentConfig dcfg = load_config(config_path("diffusion.ini"));
    double diff_max = 0.0;
    {
        const OracleConfig oc = dcfg.oracle();
        const GridSpec g = dcfg.grid();
        const auto rc = oc.diffusion_residual(g);
        for (std::size_t n = 0; n < 3; ++n) {
            const auto traj = solve_diffusion(initial_condition(dcfg, "test", n), 10, oc);
            for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
                diff_max = std::max(diff_max, max_abs(diffusion_residual(traj[k], traj[k + 1], rc).values()));
            }
        }
    }
    double ns_max = 0.0;
    {
        ExperimentConfig ncfg = load_config(config_path("ns_periodic.ini"));
        for (const std::string forcing : {"none", "diagonal"}) {
            ncfg.forcing = forcing;
            ncfg.include_forcing = forcing != "none";
            const OracleConfig oc = ncfg.oracle();
            const auto rc = oc.ns_residual(ncfg.grid());
            const auto traj = solve_ns(initial_condition(ncfg, "test", 0), 10, oc);
            for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
                ns_max = std::max(ns_max, max_abs(ns_vorticity_residual(traj[k], traj[k + 1], rc).values()));
            }
        }
    }
    return {diff_max < 1e-8 && ns_max < 1e-6,
            "diffusion CN max|R| " + fmt(diff_max) + " (< 1e-8), NS 32x32 Re=1000 max|R| " + fmt(ns_max) +
                " (< 1e-6)"};
}

// ---------------------------------------------------------------- 3
Verdict gradient_fidelity() {
    std::mt19937_64 rng(3);
    auto leaf = [&](Shape s, double shift = 0.0) {
        auto v = normals(numel(s), rng);
        for (auto& x : v) x += shift;
        return Tensor::from(std::move(s), std::move(v), true);
    };
    using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
    double worst = 0.0;
    std::string worst_name;
    std::size_t count = 0;
    auto check = [&](const std::string& name, const Fn& op, const std::vector<Tensor>& leaves) {
        // Contract the output with fixed random weights to get a generic scalar.
        const Tensor probe = op(leaves);
        const Tensor w = Tensor::from(probe.shape(), normals(probe.size(), rng));
        const auto rep = gradient_check([&](const std::vector<Tensor>& l) { return reduce_sum(mul(op(l), w)); },
                                        leaves, 1e-5, 64);
        const double dev = rep.finite ? rep.max_deviation : INFINITY;
        if (dev >= worst) {
            worst = dev;
            worst_name = name;
        }
        ++count;
    };
    const Shape img{3, 6, 8};
    check("add", [](auto& l) { return add(l[0], l[1]); }, {leaf(img), leaf(img)});
    check("sub", [](auto& l) { return sub(l[0], l[1]); }, {leaf(img), leaf(img)});
    check("mul", [](auto& l) { return mul(l[0], l[1]); }, {leaf(img), leaf(img)});
    check("scale", [](auto& l) { return scale(l[0], -2.5); }, {leaf(img)});
    check("add_scalar", [](auto& l) { return add_scalar(l[0], 0.7); }, {leaf(img)});
    check("square", [](auto& l) { return square(l[0]); }, {leaf(img)});
    check("gelu", [](auto& l) { return gelu(l[0]); }, {leaf(img)});
    check("tanh", [](auto& l) { return nstagger::tanh(l[0]); }, {leaf(img)});
    check("reduce_sum", [](auto& l) { return reduce_sum(l[0]); }, {leaf(img)});
    check("reduce_mean", [](auto& l) { return reduce_mean(l[0]); }, {leaf(img)});
    check("reshape", [](auto& l) { return reshape(l[0], Shape{6, 24}); }, {leaf(img)});
    check("concat_channels", [](auto& l) { return concat_channels({l[0], l[1]}); }, {leaf(img), leaf({6, 8})});
    check("slice_channels", [](auto& l) { return slice_channels(l[0], 1, 3); }, {leaf(img)});
    check("slice2d", [](auto& l) { return slice2d(l[0], 1, 5, 2, 7); }, {leaf(img)});
    for (auto [mode, name] : {std::pair{PadMode::zero, "pad zero"}, std::pair{PadMode::reflect, "pad reflect"},
                              std::pair{PadMode::periodic, "pad periodic"}}) {
        check(name, [mode](auto& l) { return pad(l[0], 2, mode); }, {leaf(img)});
    }
    check("circular_shift rows", [](auto& l) { return circular_shift(l[0], 1, 2); }, {leaf(img)});
    check("circular_shift cols", [](auto& l) { return circular_shift(l[0], 2, -3); }, {leaf(img)});
    check("conv2d zero", [](auto& l) { return conv2d(l[0], l[1], PadMode::zero); }, {leaf(img), leaf({2, 3, 3, 3})});
    check("conv2d periodic", [](auto& l) { return conv2d(l[0], l[1], PadMode::periodic); },
          {leaf(img), leaf({2, 3, 3, 3})});
    check("add_channel_bias", [](auto& l) { return add_channel_bias(l[0], l[1]); }, {leaf(img), leaf({3})});
    check("subsample", [](auto& l) { return subsample(l[0], 2, 4, 1, 3); }, {leaf({8, 8})});
    check("stagger_merge", [](auto& l) { return stagger_merge({l[0], l[1], l[2], l[3]}, 2, 2); },
          {leaf({4, 4}), leaf({4, 4}), leaf({4, 4}), leaf({4, 4})});
    check("laplacian_periodic", [](auto& l) { return laplacian_periodic(l[0], 0.25); }, {leaf({6, 8})});
    check("msr_loss", [](auto& l) { return msr_loss({l[0], l[1]}); }, {leaf({4, 4}), leaf({3, 5})});

    // Full staggered loss on 8x8 diffusion with factors (2,2,2).
    const GridSpec g{8, 8, 1.0 / 8.0, Boundary::periodic};
    DiffusionResidualConfig dc;
    dc.dx = g.dx;
    dc.dt = 0.1 * g.dx * g.dx;
    const ResidualOperator op = ResidualOperator::diffusion(g, dc);
    const StaggerFactors f{2, 2, 2};
    ModelSpec spec;
    spec.hidden_channels = 4;
    spec.depth = 2;
    const auto ctx = make_subtask_contexts(g, f, AuxChannelSpec{}, std::nullopt);
    const ModelParams p = ModelParams::random(spec, 7, 0.5);
    std::vector<Tensor> leaves;
    std::vector<std::string> names;
    for (const auto& nt : p.tensors()) {
        leaves.push_back(nt.value.detach(true));
        names.push_back(nt.name);
    }
    const std::vector<Tensor> states{leaf({8, 8}), leaf({8, 8})};
    for (const auto& s : states) leaves.push_back(s);
    auto loss = [&](const std::vector<Tensor>& l) {
        std::vector<NamedTensor> nt;
        for (std::size_t q = 0; q < names.size(); ++q) nt.push_back({names[q], l[q]});
        const ModelParams mp(spec, std::move(nt));
        return staggered_loss({l[names.size()], l[names.size() + 1]}, mp, f, op, ctx);
    };
    const auto rep = gradient_check(loss, leaves, 1e-5, 16);
    const double sl = rep.finite ? rep.max_deviation : INFINITY;
    const bool ok = worst < 1e-4 && sl < 1e-4;
    return {ok, std::to_string(count) + " primitives, worst " + fmt(worst) + " (" + worst_name +
                    "); staggered_loss (2,2,2) " + fmt(sl) + " over " + std::to_string(rep.coordinates) +
                    " coordinates"};
}

// ---------------------------------------------------------------- 4
Verdict degenerate_equivalence() {
    std::mt19937_64 rng(4);
    const StaggerFactors f{1, 1, 1};
    std::size_t checked = 0;
    auto one = [&](const ResidualOperator& op, const ModelSpec& spec, const AuxChannelSpec& aux) {
        const GridSpec sg = op.state_grid();
        const auto ctx = make_subtask_contexts(sg, f, aux, std::nullopt);
        const ModelParams p = ModelParams::random(spec, 11, 0.3);
        const Tensor u = Tensor::from({sg.height, sg.width}, normals(sg.size(), rng));
        const Tensor staggered = staggered_loss(std::vector<Tensor>{u}, p, f, op, ctx);
        const Tensor y = forward(p, ctx[0].assemble(u));
        const Tensor direct = msr_loss({op(u, reshape(y, Shape{sg.height, sg.width}))});
        ++checked;
        return bit_equal(staggered.data(), direct.data());
    };
    ModelSpec spec;
    spec.hidden_channels = 8;
    spec.depth = 2;
    DiffusionResidualConfig dc;
    dc.dx = 1.0 / 16;
    dc.dt = 0.1 * dc.dx * dc.dx;
    const GridSpec g{16, 16, dc.dx, Boundary::periodic};
    bool ok = one(ResidualOperator::diffusion(g, dc), spec, {});
    NSResidualConfig nc;
    nc.dx = 1.0 / 16;
    nc.dt = 1e-2;
    nc.reynolds = 1000;
    ModelSpec ns_spec = spec;
    ns_spec.in_channels = 2;
    ns_spec.state_scale = 0.01;
    ok = one(ResidualOperator::navier_stokes(g, nc), ns_spec, {AuxMode::vorticity, 4, false}) && ok;
    return {ok, std::to_string(checked) + " operators (diffusion, periodic NS) bit-identical"};
}

// ---------------------------------------------------------------- 5
Verdict multires_consistency() {
    std::mt19937_64 rng(5);
    const GridSpec g{16, 16, 1.0 / 16.0, Boundary::periodic};
    const StaggerFactors f{2, 2, 2};
    ModelSpec spec;
    spec.in_channels = 3;
    spec.hidden_channels = 8;
    spec.depth = 2;
    const AuxChannelSpec aux{AuxMode::normalized_coords, 4, false};
    const auto ctx = make_subtask_contexts(g, f, aux, std::nullopt);
    const ModelParams p = ModelParams::random(spec, 13, 0.2);
    const std::size_t blocks = 8;
    std::vector<Tensor> init;
    for (std::size_t k = 0; k < f.s_t; ++k) init.push_back(Tensor::from({16, 16}, normals(g.size(), rng)));
    const auto full = rollout_states(p, init, blocks * f.s_t, f, ctx);
    const GridSpec cg = coarse_grid(g, f);
    std::size_t compared = 0;
    for (std::size_t i = 0; i < f.s_h; ++i) {
        for (std::size_t j = 0; j < f.s_w; ++j) {
            for (std::size_t k = 0; k < f.s_t; ++k) {
                const Tensor c0 = subsample(init[k], f.s_h, f.s_w, i, j);
                const auto seq = coarse_rollout(p, tensor_field(c0, cg, 0.0), ctx[i * f.s_w + j], blocks, 1.0);
                for (std::size_t b = 0; b < blocks; ++b) {
                    const Tensor want = subsample(full[b * f.s_t + k], f.s_h, f.s_w, i, j);
                    if (!bit_equal(seq[b + 1].values(), want.data())) {
                        return {false, "subgrid (" + std::to_string(i) + "," + std::to_string(j) + ") offset " +
                                           std::to_string(k) + " block " + std::to_string(b) + " differs"};
                    }
                    ++compared;
                }
            }
        }
    }
    return {true, std::to_string(compared) + " coarse frames bit-identical to ensemble components"};
}

// ---------------------------------------------------------------- 6
Verdict bandwidth_study() {
    const std::size_t side = 16;
    DiffusionResidualConfig dc;
    dc.dx = 1.0;
    dc.dt = 0.2;
    dc.scheme = TimeScheme::explicit_euler;
    dc.boundary = DiffusionBoundary::dirichlet;
    const BandMatrix t = build_transfer_matrix({side + 2, side + 2, 1.0, Boundary::dirichlet_lid}, dc);
    const auto study = transfer_power_bandwidth(t, 40);
    const bool monotone = std::is_sorted(study.bandwidth.begin(), study.bandwidth.end());
    const std::size_t pre = presaturation_length(study, t.d);
    std::vector<double> x, y;
    for (std::size_t k = 0; k < pre; ++k) {
        x.push_back(static_cast<double>(k + 1));
        y.push_back(static_cast<double>(study.bandwidth[k]));
    }
    const AffineFit fit = pre >= 2 ? affine_fit(x, y) : AffineFit{};
    bool closed = true;
    for (bool periodic : {true, false}) {
        const std::size_t d = 32;
        const auto s1 = transfer_power_bandwidth(build_transfer_matrix_1d(d, 0.2, periodic, TimeScheme::explicit_euler), 40);
        for (std::size_t k = 1; k <= 40; ++k) closed = closed && s1.bandwidth[k - 1] == std::min(k * s1.bandwidth[0], d - 1);
    }
    const bool ok = t.d == side * side && monotone && pre >= 2 && fit.r2 >= 0.99 && study.k_dense.has_value() && closed;
    return {ok, "d=" + std::to_string(t.d) + " monotone=" + (monotone ? "yes" : "no") + " prefix=" +
                    std::to_string(pre) + " slope=" + fmt(fit.slope) + " R2=" + fmt(fit.r2) + " k_dense=" +
                    (study.k_dense ? std::to_string(*study.k_dense) : std::string("none")) +
                    " 1-D closed form " + (closed ? "exact" : "violated")};
}

// ---------------------------------------------------------------- 7
Verdict proposition1() {
    const std::size_t n = 256, d = 32, kb = 4, r = 6;
    std::mt19937_64 rng(derive_seed(0, "prop1"));
    const BandMatrix t = build_transfer_matrix_1d(d, 0.2, true, TimeScheme::explicit_euler);
    auto targets = [&](const std::vector<double>& u) {
        std::vector<double> y(n * d);
        for (std::size_t s = 0; s < n; ++s) {
            const auto next = t.apply(std::span<const double>(u).subspan(s * d, d));
            std::copy(next.begin(), next.end(), y.begin() + static_cast<long>(s * d));
        }
        return y;
    };
    const auto z = normals(n * r, rng), m = normals(r * d, rng);
    std::vector<double> low(n * d, 0.0);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t q = 0; q < r; ++q) low[s * d + c] += z[s * r + q] * m[q * d + c];
    const auto generic = normals(n * d, rng);
    const auto a = prop1_verify(low, targets(low), n, d, kb);
    const auto b = prop1_verify(generic, targets(generic), n, d, kb);
    double min_gap = INFINITY;
    bool rank_drop = true;
    for (const auto& blk : b.blocks) {
        min_gap = std::min(min_gap, blk.gap);
        rank_drop = rank_drop && b.rank_full > blk.rank;
    }
    const bool ok = a.max_gap < 1e-8 && a.equal && min_gap > 1e-3 && rank_drop && !b.equal;
    return {ok, "constructed rank " + std::to_string(a.rank_full) + " max gap " + fmt(a.max_gap) +
                    "; generic rank " + std::to_string(b.rank_full) + " vs block " +
                    std::to_string(b.blocks.empty() ? 0 : b.blocks[0].rank) + ", min gap " + fmt(min_gap)};
}

// ---------------------------------------------------------------- 8, 9, 12
struct Trained {
    ModelParams params;
    double best_loss = 0.0;
    double seconds = 0.0;
};

std::map<std::string, Trained> g_trained;

Trained train_config(const ExperimentConfig& cfg, const std::string& key) {
    if (auto it = g_trained.find(key); it != g_trained.end()) return it->second;
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig tc = cfg.train_config();
    tc.seed = derive_seed(cfg.seed, "train");
    const ModelParams init = ModelParams::initialize(cfg.model_spec(), derive_seed(cfg.seed, "init"));
    const TrainResult res = train(tc, cfg.problem(), build_training_pool(cfg), init, nullptr);
    Trained t{res.best, res.best_loss,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    g_trained[key] = t;
    return t;
}

double mean_error(const ExperimentConfig& cfg, const ModelParams& p, std::size_t k) {
    double s = 0.0;
    for (std::size_t n = 0; n < cfg.test_conditions; ++n) {
        const auto truth = test_trajectory(cfg, n);
        const auto ro = model_rollout(cfg, p, truth, cfg.horizon, nullptr);
        s += error_k(ro, truth, cfg.factors.s_t - 1 + k);
    }
    return s / static_cast<double>(cfg.test_conditions);
}

ExperimentConfig with_factors(ExperimentConfig cfg, StaggerFactors f) {
    cfg.factors = f;
    cfg.validate();
    return cfg;
}

Verdict diffusion_training() {
    const ExperimentConfig base = load_config(config_path("diffusion.ini"));
    std::string detail;
    bool ok = base.iterations <= 2000;
    for (auto f : {StaggerFactors{1, 1, 1}, StaggerFactors{2, 2, 2}}) {
        const auto cfg = with_factors(base, f);
        const std::string key = "diffusion-" + std::to_string(f.s_t);
        const Trained t = train_config(cfg, key);
        const double e = mean_error(cfg, t.params, 20);
        ok = ok && e <= 0.01;
        detail += "(" + std::to_string(f.s_h) + "," + std::to_string(f.s_w) + "," + std::to_string(f.s_t) +
                  ") Error-20 " + fmt(e) + " [" + fmt(t.seconds) + " s]; ";
    }
    return {ok, detail + std::to_string(base.iterations) + " iterations"};
}

Verdict ns_training() {
    const ExperimentConfig base = load_config(config_path("ns_periodic.ini"));
    const auto c1 = with_factors(base, {1, 1, 1});
    const auto c2 = with_factors(base, {2, 2, 2});
    const Trained t1 = train_config(c1, "ns-1");
    const double e1 = mean_error(c1, t1.params, 50);
    const Trained t2 = train_config(c2, "ns-2");
    const double e2 = mean_error(c2, t2.params, 50);
    const bool ok = e1 <= 0.05 && e2 <= 3.0 * e1;
    return {ok, "(1,1,1) Error-50 " + fmt(e1) + " [" + fmt(t1.seconds) + " s]; (2,2,2) Error-50 " + fmt(e2) +
                    " [" + fmt(t2.seconds) + " s], ratio " + fmt(e2 / e1) + " (<= 3)"};
}

// ---------------------------------------------------------------- 10
Verdict gmacs_accounting() {
    ModelSpec spec;
    spec.hidden_channels = 16;
    spec.depth = 3;
    const GridSpec g{16, 16, 1.0 / 32, Boundary::periodic};
    const std::size_t horizon = 200;
    const auto r2 = count_gmacs(spec, g, {2, 2, 2}, horizon);
    bool ok = r2.workers == 8 && r2.per_card_per_step * 8 == r2.total_per_step;
    const auto base = count_gmacs(spec, g, {2, 2, 1}, horizon);
    std::string detail = "(2,2,2) per-card " + std::to_string(r2.per_card_per_step) + " x 8 = " +
                         std::to_string(r2.total_per_step) + "; per-card horizon";
    for (std::size_t st : {1, 2, 4, 8}) {
        const auto r = count_gmacs(spec, g, {2, 2, st}, horizon);
        ok = ok && r.per_card_horizon * st == base.per_card_horizon;
        detail += " s_T=" + std::to_string(st) + ":" + std::to_string(r.per_card_horizon);
    }
    return {ok, detail};
}

// ---------------------------------------------------------------- 11
Verdict parallelism() {
    std::mt19937_64 rng(11);
    const GridSpec g{64, 64, 1.0 / 64, Boundary::periodic};
    const StaggerFactors f{2, 2, 2};
    ModelSpec spec;
    spec.hidden_channels = 32;
    spec.depth = 4;
    const auto ctx = make_subtask_contexts(g, f, AuxChannelSpec{}, std::nullopt);
    const ModelParams p = ModelParams::random(spec, 17, 0.2);
    std::vector<Tensor> states;
    for (std::size_t k = 0; k < f.s_t; ++k) states.push_back(Tensor::from({64, 64}, normals(g.size(), rng)));

    auto timed = [&](WorkerPool* pool, std::vector<Tensor>& out) {
        double best = INFINITY;
        for (int rep = 0; rep < 3; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            out = predict_block(p, states, f, ctx, pool);
            best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        return best;
    };
    std::vector<Tensor> serial, parallel;
    WorkerPool one(1), four(4);
    const double t1 = timed(&one, serial);
    const double t4 = timed(&four, parallel);
    bool identical = serial.size() == parallel.size();
    for (std::size_t k = 0; identical && k < serial.size(); ++k) identical = bit_equal(serial[k].data(), parallel[k].data());
    const double ratio = t4 / t1;
    const unsigned hw = std::thread::hardware_concurrency();
    return {identical && ratio <= 0.6, "8 subtasks, 4 workers / 1 worker wall time " + fmt(ratio) +
                                           " (<= 0.6), outputs " + (identical ? "bit-identical" : "DIFFER") +
                                           ", hardware threads " + std::to_string(hw)};
}

// ---------------------------------------------------------------- 12
Verdict inverse_demo() {
    const auto cfg = with_factors(load_config(config_path("diffusion.ini")), {2, 2, 2});
    const Trained t = train_config(cfg, "diffusion-2");
    const auto res = recover_input(cfg, t.params);
    const double ratio = res.trace.back() / res.trace.front();
    return {cfg.control_steps <= 500 && ratio <= 1e-3,
            "objective " + fmt(res.trace.front()) + " -> " + fmt(res.trace.back()) + " (ratio " + fmt(ratio) +
                ", <= 1e-3) in " + std::to_string(cfg.control_steps) + " Adam steps"};
}

// ---------------------------------------------------------------- 13
std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict io_reproducibility() {
    std::mt19937_64 rng(13);
    const fs::path work = fs::temp_directory_path() / ("nstagger_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(work);
    fs::create_directories(work);
    const GridSpec g{16, 12, 1.0 / 12, Boundary::periodic};
    auto vals = normals(g.size(), rng);
    vals[0] = -0.0;
    vals[1] = 5e-324;
    vals[2] = 1.7976931348623157e308;
    const Field f(g, vals, 0.25);
    save_field(f, work / "f.nstg");
    const Field back = load_field(work / "f.nstg", g, 0.25);
    bool ok = bit_equal(back.values(), f.values());
    FieldSequence seq;
    seq.dt = 0.125;
    for (std::size_t k = 0; k < 3; ++k) seq.frames.push_back(random_field(g, rng, k * 0.125));
    const auto manifest = save_sequence(seq, work / "seq", "frame");
    const auto seq2 = load_sequence(manifest, g);
    for (std::size_t k = 0; k < seq.size(); ++k) {
        ok = ok && bit_equal(seq[k].values(), seq2[k].values()) && same_time(seq[k].time(), seq2[k].time());
    }
    const bool io_ok = ok;

    ExperimentConfig cfg = load_config(config_path("smoke.ini"));
    RunContext ctx{1, "generate"};
    cmd_generate(cfg, work / "gen_a", ctx);
    cmd_generate(cfg, work / "gen_b", ctx);
    ctx.command = "train";
    cmd_train(cfg, work / "train_a", ctx);
    cmd_train(cfg, work / "train_b", ctx);
    bool same = true;
    std::size_t files = 0;
    for (const auto& [a, b] : {std::pair{"gen_a", "gen_b"}, std::pair{"train_a", "train_b"}}) {
        for (const auto& e : fs::recursive_directory_iterator(work / a)) {
            if (!e.is_regular_file() || e.path().filename() == "timing.csv") continue;
            const auto rel = fs::relative(e.path(), work / a);
            same = same && fs::exists(work / b / rel) && read_file(e.path()) == read_file(work / b / rel);
            ++files;
        }
    }
    fs::remove_all(work);
    return {io_ok && same, std::string("snapshot and sequence round trip ") + (io_ok ? "bit-exact" : "MISMATCH") +
                               "; generate/train reruns: " + std::to_string(files) + " files " +
                               (same ? "byte-identical" : "DIFFER")};
}

struct Criterion {
    int id;
    const char* name;
    Verdict (*run)();
};

} // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "round-trip decomposition", round_trip},
        {2, "residual vs oracle", residual_vs_oracle},
        {3, "gradient fidelity", gradient_fidelity},
        {4, "degenerate equivalence", degenerate_equivalence},
        {5, "multi-resolution consistency", multires_consistency},
        {6, "bandwidth study", bandwidth_study},
        {7, "linear-model rank proposition", proposition1},
        {8, "desk-scale diffusion training", diffusion_training},
        {9, "desk-scale Navier-Stokes training", ns_training},
        {10, "GMACs accounting", gmacs_accounting},
        {11, "parallel ensemble step", parallelism},
        {12, "inverse-problem demo", inverse_demo},
        {13, "IO and reproducibility", io_reproducibility},
    };
    std::vector<int> wanted;
    for (int a = 1; a < argc; ++a) wanted.push_back(std::atoi(argv[a]));

    int failed = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
        Verdict v;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %2d %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), secs);
        std::fflush(stdout);
        failed += v.pass ? 0 : 1;
    }
    std::printf("%d criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
