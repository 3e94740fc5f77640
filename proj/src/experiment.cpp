#include "nstagger/experiment.hpp"

#include "nstagger/analysis.hpp"
#include "nstagger/errors.hpp"
#include "nstagger/seeding.hpp"
#include "nstagger/snapshot_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace nstagger {
namespace fs = std::filesystem;
namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

std::string num(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

void put_field(const Field& f, const fs::path& path) {
    fs::create_directories(path.parent_path());
    save_field(f, path);
}

class Csv {
public:
    explicit Csv(const std::string& header) { text_ = header + "\n"; }
    template <typename... T>
    void row(const T&... cells) {
        std::string line;
        ((line += (line.empty() ? "" : ",") + cell(cells)), ...);
        text_ += line + "\n";
    }
    void save(const fs::path& path) const { write_text(path, text_); }

private:
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(double v) { return num(v); }
    template <typename I>
        requires std::is_integral_v<I>
    static std::string cell(I v) { return std::to_string(v); }
    std::string text_;
};

std::string index_name(const std::string& stem, std::size_t n) {
    std::ostringstream s;
    s << stem << '_' << std::setw(4) << std::setfill('0') << n;
    return s.str();
}

// Runs `body` in a staging directory next to `out` and moves the result into
// place only when it succeeds, so failures leave no partial outputs.
void with_staging(const fs::path& out, const ExperimentConfig& cfg, const RunContext& ctx,
                  const std::function<void(const fs::path&)>& body) {
    const fs::path target = fs::absolute(out).lexically_normal();
    const fs::path staging = target.parent_path() / ("." + target.filename().string() + ".staging");
    fs::remove_all(staging);
    fs::create_directories(staging);
    try {
        body(staging);
        write_text(staging / "config.ini", to_ini(cfg));

        std::vector<std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(staging)) {
            if (!e.is_regular_file()) continue;
            const std::string rel = fs::relative(e.path(), staging).generic_string();
            if (rel == "timing.csv") continue; // wall-clock data, not reproducible
            files.push_back(rel);
        }
        std::sort(files.begin(), files.end());
        std::string digest = "command " + ctx.command + "\nversion " + kVersion + "\nseed " +
                             std::to_string(cfg.seed) + "\nworkers " + std::to_string(ctx.workers) + "\n";
        for (const auto& f : files) digest += "file " + f + " " + hex(file_digest(staging / f)) + "\n";
        write_text(staging / "digest.txt", digest);

        fs::remove_all(target);
        fs::rename(staging, target);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw;
    }
}

std::unique_ptr<WorkerPool> make_pool(const RunContext& ctx) {
    if (ctx.workers <= 1) return nullptr;
    return std::make_unique<WorkerPool>(ctx.workers);
}

ModelParams load_compatible(const ExperimentConfig& cfg, const fs::path& checkpoint) {
    ModelParams p = load_checkpoint(checkpoint);
    const ModelSpec want = cfg.model_spec();
    const ModelSpec& got = p.spec();
    if (parameter_layout(want) != parameter_layout(got) || want.predict_delta != got.predict_delta ||
        want.linear_skip != got.linear_skip || want.padding_mode != got.padding_mode ||
        want.state_scale != got.state_scale) {
        throw ConfigError("checkpoint " + checkpoint.string() + " does not match the configured model");
    }
    return p;
}

double max_pair_residual(const FieldSequence& seq, const ResidualOperator& op) {
    double m = 0.0;
    for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
        const Tensor r = op(op.to_state(seq[k]), op.to_state(seq[k + 1]));
        for (double v : r.data()) m = std::max(m, std::abs(v));
    }
    return m;
}

FieldSequence extend(FieldSequence seq, std::size_t steps, const OracleConfig& oc) {
    for (std::size_t s = 0; s < steps; ++s) seq.frames.push_back(oracle_step(seq.back(), oc));
    return seq;
}

} // namespace

Field initial_condition(const ExperimentConfig& cfg, const std::string& set, std::size_t n) {
    if (cfg.equation == Equation::ns_lid_driven) return Field::zeros(cfg.grid());
    RandomFieldSpec rs;
    rs.grid = cfg.grid();
    rs.amplitude = cfg.amplitude;
    rs.shift = cfg.shift;
    rs.exponent = cfg.exponent;
    rs.seed = derive_seed(derive_seed(cfg.seed, "data"), set + "-" + std::to_string(n));
    return sample_random_field(rs);
}

TrainingPool build_training_pool(const ExperimentConfig& cfg) {
    const OracleConfig oc = cfg.oracle();
    const std::size_t s_t = cfg.factors.s_t;
    if (cfg.pool_mode == PoolMode::initial) {
        TrainingPool pool(s_t, cfg.dt);
        for (std::size_t n = 0; n < cfg.train_conditions; ++n) {
            pool.add(prepare_bootstrap(initial_condition(cfg, "train", n), s_t, oc));
        }
        return pool;
    }
    std::vector<FieldSequence> trajs;
    for (std::size_t n = 0; n < cfg.train_conditions; ++n) {
        const auto boot = prepare_bootstrap(initial_condition(cfg, "train", n), 1, oc);
        trajs.push_back(extend(boot, cfg.trajectory_steps, oc));
    }
    return TrainingPool::from_trajectories(trajs, s_t, cfg.trajectory_stride);
}

FieldSequence test_trajectory(const ExperimentConfig& cfg, std::size_t n) {
    const OracleConfig oc = cfg.oracle();
    const auto boot = prepare_bootstrap(initial_condition(cfg, "test", n), cfg.factors.s_t, oc);
    return extend(boot, cfg.horizon, oc);
}

FieldSequence model_rollout(const ExperimentConfig& cfg, const ModelParams& params,
                            const FieldSequence& truth, std::size_t horizon, WorkerPool* workers) {
    FieldSequence init;
    init.dt = truth.dt;
    init.frames.assign(truth.frames.begin(), truth.frames.begin() + static_cast<long>(cfg.factors.s_t));
    return rollout(params, init, horizon, cfg.problem(), workers);
}

InputOptResult recover_input(const ExperimentConfig& cfg, const ModelParams& params) {
    const StaggerProblem prob = cfg.problem();
    const OracleConfig oc = cfg.oracle();
    const std::size_t s_t = cfg.factors.s_t;
    const GridSpec sg = prob.op.state_grid();

    auto block_tensor = [&](const FieldSequence& seq, std::size_t first) {
        std::vector<double> v;
        for (std::size_t k = 0; k < s_t; ++k) {
            const Tensor t = prob.op.to_state(seq[first + k]);
            v.insert(v.end(), t.data().begin(), t.data().end());
        }
        return Tensor::from({s_t, sg.height, sg.width}, std::move(v));
    };

    // Target: oracle frames of the block that follows `control_horizon` steps.
    const auto truth = extend(prepare_bootstrap(initial_condition(cfg, "control-target", 0), s_t, oc),
                              cfg.control_horizon, oc);
    const Tensor target = block_tensor(truth, cfg.control_horizon);
    const auto start = prepare_bootstrap(initial_condition(cfg, "control-start", 0), s_t, oc);
    const Tensor x0 = block_tensor(start, 0);

    const ModelParams frozen = params;
    auto objective = [&](const Tensor& x) {
        std::vector<Tensor> window;
        for (std::size_t k = 0; k < s_t; ++k) {
            window.push_back(reshape(slice_channels(x, k, k + 1), Shape{sg.height, sg.width}));
        }
        for (std::size_t b = 0; b < cfg.control_horizon / s_t; ++b) {
            window = predict_block(frozen, window, prob.factors, prob.contexts);
        }
        Tensor sq;
        for (std::size_t k = 0; k < s_t; ++k) {
            const Tensor d = sub(window[k], reshape(slice_channels(target, k, k + 1), Shape{sg.height, sg.width}));
            const Tensor m = reduce_mean(square(d));
            sq = k == 0 ? m : add(sq, m);
        }
        return scale(sq, 1.0 / static_cast<double>(s_t));
    };
    return optimize_input(objective, x0, cfg.control_steps, cfg.control_lr);
}

void cmd_generate(const ExperimentConfig& cfg, const fs::path& out, const RunContext& ctx) {
    cfg.validate();
    with_staging(out, cfg, ctx, [&](const fs::path& dir) {
        const OracleConfig oc = cfg.oracle();
        const ResidualOperator op = cfg.residual_operator();
        const std::size_t s_t = cfg.factors.s_t;
        Csv audit("set,index,pairs,max_abs_residual,pass");
        std::string manifest;
        for (std::size_t n = 0; n < cfg.train_conditions; ++n) {
            const Field ic = initial_condition(cfg, "train", n);
            const std::string name = index_name("ic", n);
            put_field(ic, dir / "train" / (name + ".nstg"));
            manifest += "initial train/" + name + ".nstg 1\n";
            const auto boot = prepare_bootstrap(ic, s_t, oc);
            const auto bdir = fs::path("train") / index_name("bootstrap", n);
            save_sequence(boot, dir / bdir, "frame");
            manifest += "bootstrap " + (bdir / "frame.manifest").generic_string() + " " +
                        std::to_string(boot.size()) + "\n";
            if (cfg.pool_mode == PoolMode::trajectory) {
                const auto tr = extend(prepare_bootstrap(ic, 1, oc), cfg.trajectory_steps, oc);
                const auto tdir = fs::path("train") / index_name("trajectory", n);
                save_sequence(tr, dir / tdir, "frame");
                manifest += "trajectory " + (tdir / "frame.manifest").generic_string() + " " +
                            std::to_string(tr.size()) + "\n";
                const double r = max_pair_residual(tr, op);
                audit.row("train", n, tr.size() - 1, r, r < 1e-6 ? "true" : "false");
            } else if (boot.size() > 1) {
                const double r = max_pair_residual(boot, op);
                audit.row("train", n, boot.size() - 1, r, r < 1e-6 ? "true" : "false");
            }
        }
        for (std::size_t n = 0; n < cfg.test_conditions; ++n) {
            const auto tr = test_trajectory(cfg, n);
            const auto tdir = fs::path("test") / index_name("trajectory", n);
            save_sequence(tr, dir / tdir, "frame");
            manifest += "test " + (tdir / "frame.manifest").generic_string() + " " + std::to_string(tr.size()) + "\n";
            const double r = max_pair_residual(tr, op);
            audit.row("test", n, tr.size() - 1, r, r < 1e-6 ? "true" : "false");
        }
        write_text(dir / "dataset.manifest", manifest);
        audit.save(dir / "audit.csv");
    });
}

void cmd_train(const ExperimentConfig& cfg, const fs::path& out, const RunContext& ctx) {
    cfg.validate();
    with_staging(out, cfg, ctx, [&](const fs::path& dir) {
        auto workers = make_pool(ctx);
        TrainConfig tc = cfg.train_config();
        tc.seed = derive_seed(cfg.seed, "train");
        const ModelParams init = ModelParams::initialize(cfg.model_spec(), derive_seed(cfg.seed, "init"));
        const TrainResult res = train(tc, cfg.problem(), build_training_pool(cfg), init, workers.get());
        save_checkpoint(res.best, dir / "checkpoint");
        Csv loss("iteration,loss,lr,pool_size");
        Csv timing("iteration,wall_ms");
        for (const auto& h : res.history) {
            loss.row(h.iteration, h.loss, h.lr, h.pool_size);
            timing.row(h.iteration, h.wall_ms);
        }
        loss.save(dir / "loss.csv");
        timing.save(dir / "timing.csv");
        Csv summary("best_loss,best_iteration,enrichments,iterations");
        summary.row(res.best_loss, res.best_iteration, res.enrichments, res.history.size());
        summary.save(dir / "summary.csv");
    });
}

void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& out,
                  const RunContext& ctx) {
    cfg.validate();
    const ModelParams params = load_compatible(cfg, checkpoint);
    with_staging(out, cfg, ctx, [&](const fs::path& dir) {
        auto workers = make_pool(ctx);
        const std::size_t base = cfg.factors.s_t - 1;
        std::string header = "condition";
        for (auto k : cfg.checkpoints) header += ",Error-" + std::to_string(k);
        Csv table(header);
        std::vector<std::vector<double>> curve(cfg.horizon + 1);
        for (std::size_t n = 0; n < cfg.test_conditions; ++n) {
            const auto truth = test_trajectory(cfg, n);
            const auto ro = model_rollout(cfg, params, truth, cfg.horizon, workers.get());
            for (std::size_t k = 1; k <= cfg.horizon; ++k) curve[k].push_back(error_k(ro, truth, base + k));
            std::string line = std::to_string(n);
            for (auto k : cfg.checkpoints) {
                line += "," + num(curve[k].back());
                const std::string stem = index_name("condition", n) + "_Error-" + std::to_string(k);
                put_field(ro[base + k], dir / "snapshots" / (stem + "_pred.nstg"));
                put_field(truth[base + k], dir / "snapshots" / (stem + "_truth.nstg"));
            }
            table.row(line);
        }
        if (cfg.test_conditions > 0) {
            std::string line = "mean";
            for (auto k : cfg.checkpoints) {
                double s = 0.0;
                for (double e : curve[k]) s += e;
                line += "," + num(s / static_cast<double>(curve[k].size()));
            }
            table.row(line);
        }
        table.save(dir / "errors.csv");
        Csv c("k,mean,max");
        for (std::size_t k = 1; k <= cfg.horizon && cfg.test_conditions > 0; ++k) {
            double s = 0.0, m = 0.0;
            for (double e : curve[k]) {
                s += e;
                m = std::max(m, e);
            }
            c.row(k, s / static_cast<double>(curve[k].size()), m);
        }
        c.save(dir / "error_curve.csv");
    });
}

void cmd_rollout(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& out,
                 const RunContext& ctx) {
    cfg.validate();
    const ModelParams params = load_compatible(cfg, checkpoint);
    with_staging(out, cfg, ctx, [&](const fs::path& dir) {
        auto workers = make_pool(ctx);
        const auto truth = test_trajectory(cfg, 0);
        const auto ro = model_rollout(cfg, params, truth, cfg.horizon, workers.get());
        save_sequence(ro, dir / "rollout", "frame");
        save_sequence(truth, dir / "oracle", "frame");
    });
}

void cmd_analyze(const ExperimentConfig& cfg, const std::string& which, const fs::path& out,
                 const RunContext& ctx) {
    cfg.validate();
    if (which != "bandwidth" && which != "prop1" && which != "gmacs") {
        throw ConfigError("unknown analysis '" + which + "' (expected bandwidth, prop1 or gmacs)");
    }
    with_staging(out, cfg, ctx, [&](const fs::path& dir) {
        if (which == "bandwidth") {
            const std::size_t side = cfg.bandwidth_side;
            DiffusionResidualConfig dc;
            dc.dx = 1.0;
            dc.dt = cfg.bandwidth_r;
            dc.scheme = TimeScheme::explicit_euler;
            dc.boundary = DiffusionBoundary::dirichlet;
            const GridSpec g{side + 2, side + 2, 1.0, Boundary::dirichlet_lid};
            const BandMatrix t = build_transfer_matrix(g, dc);
            const auto study = transfer_power_bandwidth(t, cfg.bandwidth_k_max);
            Csv bw("k,bandwidth");
            for (std::size_t k = 0; k < study.bandwidth.size(); ++k) bw.row(k + 1, study.bandwidth[k]);
            bw.save(dir / "bandwidth.csv");
            const std::size_t pre = presaturation_length(study, t.d);
            AffineFit fit;
            if (pre >= 2) {
                std::vector<double> x, y;
                for (std::size_t k = 0; k < pre; ++k) {
                    x.push_back(static_cast<double>(k + 1));
                    y.push_back(static_cast<double>(study.bandwidth[k]));
                }
                fit = affine_fit(x, y);
            }
            Csv sum("d,k_dense,presaturation_k,slope,intercept,r2");
            sum.row(t.d, study.k_dense ? std::to_string(*study.k_dense) : std::string("none"), pre,
                    fit.slope, fit.intercept, fit.r2);
            sum.save(dir / "bandwidth_summary.csv");

            const std::size_t d1 = 2 * side;
            const auto per = transfer_power_bandwidth(
                build_transfer_matrix_1d(d1, cfg.bandwidth_r, true, TimeScheme::explicit_euler), cfg.bandwidth_k_max);
            const auto dir1 = transfer_power_bandwidth(
                build_transfer_matrix_1d(d1, cfg.bandwidth_r, false, TimeScheme::explicit_euler), cfg.bandwidth_k_max);
            Csv one("k,periodic,periodic_closed_form,dirichlet,dirichlet_closed_form");
            for (std::size_t k = 1; k <= cfg.bandwidth_k_max; ++k) {
                one.row(k, per.bandwidth[k - 1], std::min(k * per.bandwidth[0], d1 - 1), dir1.bandwidth[k - 1],
                        std::min(k * dir1.bandwidth[0], d1 - 1));
            }
            one.save(dir / "bandwidth_1d.csv");
        } else if (which == "prop1") {
            const std::size_t n = cfg.prop1_samples, d = cfg.prop1_dim, kb = cfg.prop1_blocks;
            std::mt19937_64 rng(derive_seed(cfg.seed, "prop1"));
            std::normal_distribution<double> normal;
            const BandMatrix t = build_transfer_matrix_1d(d, cfg.bandwidth_r, true, TimeScheme::explicit_euler);
            auto targets = [&](const std::vector<double>& u) {
                std::vector<double> y(n * d);
                for (std::size_t s = 0; s < n; ++s) {
                    const auto next = t.apply(std::span<const double>(u).subspan(s * d, d));
                    std::copy(next.begin(), next.end(), y.begin() + static_cast<long>(s * d));
                }
                return y;
            };
            const std::size_t r = cfg.prop1_rank;
            std::vector<double> z(n * r), m(r * d), low(n * d, 0.0), generic(n * d);
            for (auto& v : z) v = normal(rng);
            for (auto& v : m) v = normal(rng);
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t c = 0; c < d; ++c)
                    for (std::size_t q = 0; q < r; ++q) low[s * d + c] += z[s * r + q] * m[q * d + c];
            for (auto& v : generic) v = normal(rng);
            Csv csv("case,block,rank_full,rank_block,gap,verdict");
            for (const auto& [name, u] : {std::pair<std::string, const std::vector<double>*>{"constructed", &low},
                                          {"generic", &generic}}) {
                const auto rep = prop1_verify(*u, targets(*u), n, d, kb);
                for (const auto& b : rep.blocks) {
                    csv.row(name, b.block, rep.rank_full, b.rank, b.gap, rep.equal ? "equal" : "different");
                }
            }
            csv.save(dir / "prop1.csv");
        } else {
            const ModelSpec spec = cfg.model_spec();
            const GridSpec g = cfg.residual_operator().state_grid();
            Csv layers("s_h,s_w,s_t,layer,macs");
            Csv sum("s_h,s_w,s_t,workers,per_subtask,total_per_step,per_card_per_step,horizon,"
                    "ensemble_steps,per_card_horizon,total_horizon,gmacs_per_card_horizon,fold_reduction");
            StaggerFactors doubled = cfg.factors;
            doubled.s_t *= 2;
            for (const auto& f : {StaggerFactors{1, 1, 1}, cfg.factors, doubled}) {
                const auto rep = count_gmacs(spec, g, f, cfg.gmacs_horizon);
                for (const auto& l : rep.layers) layers.row(f.s_h, f.s_w, f.s_t, l.name, l.macs);
                sum.row(f.s_h, f.s_w, f.s_t, rep.workers, rep.per_subtask, rep.total_per_step,
                        rep.per_card_per_step, rep.horizon_steps, rep.ensemble_steps, rep.per_card_horizon,
                        rep.total_horizon, static_cast<double>(rep.per_card_horizon) / 1e9, rep.fold_reduction);
            }
            layers.save(dir / "gmacs_layers.csv");
            sum.save(dir / "gmacs.csv");
        }
    });
}

void cmd_control(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& out,
                 const RunContext& ctx) {
    cfg.validate();
    const ModelParams params = load_compatible(cfg, checkpoint);
    with_staging(out, cfg, ctx, [&](const fs::path& dir) {
        const auto res = recover_input(cfg, params);
        Csv trace("step,objective");
        for (std::size_t s = 0; s < res.trace.size(); ++s) trace.row(s, res.trace[s]);
        trace.save(dir / "control_trace.csv");
        Csv sum("initial,final,ratio");
        sum.row(res.trace.front(), res.trace.back(), res.trace.back() / res.trace.front());
        sum.save(dir / "control_summary.csv");
        NdArray a{res.input.shape(), std::vector<double>(res.input.data().begin(), res.input.data().end())};
        fs::create_directories(dir);
        save_array(a, dir / "recovered_input.nstg");
    });
}

} // namespace nstagger
