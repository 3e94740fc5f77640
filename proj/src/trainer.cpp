#include "nstagger/trainer.hpp"

#include "nstagger/errors.hpp"
#include "nstagger/seeding.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <limits>

namespace nstagger {
namespace {

void adam_update(std::vector<double>& p, std::span<const double> g, std::vector<double>& m,
                 std::vector<double>& v, const AdamState& st, double lr) {
    const double t = static_cast<double>(st.step);
    const double c1 = 1.0 - std::pow(st.beta1, t);
    const double c2 = 1.0 - std::pow(st.beta2, t);
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
        v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
        const double mh = m[i] / c1;
        const double vh = v[i] / c2;
        p[i] -= lr * mh / (std::sqrt(vh) + st.eps);
    }
}

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

std::vector<Tensor> to_states(const FieldSequence& seq, const ResidualOperator& op) {
    std::vector<Tensor> s;
    s.reserve(seq.size());
    for (const auto& f : seq.frames) s.push_back(op.to_state(f));
    return s;
}

ModelParams detached(const ModelParams& p) {
    ModelParams out = p;
    for (auto& t : out.tensors_mut()) t.value = t.value.detach(false);
    return out;
}

} // namespace

void adam_step(ModelParams& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr) {
    auto& tensors = params.tensors_mut();
    if (grads.size() != tensors.size()) {
        throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(tensors.size()) + " parameters");
    }
    for (std::size_t n = 0; n < tensors.size(); ++n) {
        if (grads[n].size() != tensors[n].value.size()) {
            throw ShapeError("adam_step: gradient size mismatch for " + tensors[n].name);
        }
        if (!all_finite(grads[n])) {
            throw TrainingError("non-finite gradient for parameter " + tensors[n].name);
        }
    }
    if (state.m.empty()) {
        for (const auto& t : tensors) {
            state.m.emplace_back(t.value.size(), 0.0);
            state.v.emplace_back(t.value.size(), 0.0);
        }
    }
    if (state.m.size() != tensors.size()) throw ShapeError("adam_step: moment count mismatch");
    ++state.step;
    for (std::size_t n = 0; n < tensors.size(); ++n) {
        std::vector<double> p(tensors[n].value.data().begin(), tensors[n].value.data().end());
        adam_update(p, grads[n], state.m[n], state.v[n], state, lr);
        tensors[n].value = Tensor::from(tensors[n].value.shape(), std::move(p));
    }
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (double x : g) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& g : grads)
            for (double& x : g) x *= s;
    }
    return norm;
}

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (factors.s_h < 1 || factors.s_w < 1 || factors.s_t < 1) {
        throw ConfigError("stagger factors must be positive");
    }
}

double learning_rate(const TrainConfig& cfg, std::size_t iteration) {
    return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(iteration / cfg.decay_every));
}

void TrainingPool::add(FieldSequence seq) {
    if (seq.size() != s_t_) {
        throw LayoutError("pool entries need " + std::to_string(s_t_) + " frames, got " +
                          std::to_string(seq.size()));
    }
    if (s_t_ > 1 && std::abs(seq.dt - dt_) > kTimeTolerance) {
        throw LayoutError("pool entry dt does not match the pool");
    }
    seq.dt = dt_;
    seq.validate();
    if (!entries_.empty() && !(seq[0].grid() == entries_[0][0].grid())) {
        throw LayoutError("pool entries must share one grid");
    }
    entries_.push_back(std::move(seq));
}

TrainingPool TrainingPool::from_trajectories(const std::vector<FieldSequence>& trajs,
                                             std::size_t s_t, std::size_t stride) {
    if (trajs.empty()) throw ConfigError("no trajectories for the training pool");
    if (stride < 1) throw ConfigError("trajectory stride must be >= 1");
    TrainingPool pool(s_t, trajs[0].dt);
    for (const auto& tr : trajs) {
        for (std::size_t s = 0; s + s_t <= tr.size(); s += stride) {
            FieldSequence w;
            w.dt = tr.dt;
            w.frames.assign(tr.frames.begin() + static_cast<long>(s),
                            tr.frames.begin() + static_cast<long>(s + s_t));
            pool.add(std::move(w));
        }
    }
    return pool;
}

void enrich_pool(TrainingPool& pool, const ModelParams& params, const PoolConfig& policy,
                 const StaggerProblem& problem, std::mt19937_64& rng, WorkerPool* workers) {
    if (!policy.enrich || pool.size() == 0) return;
    if (policy.correct && !problem.oracle) throw ConfigError("pool correction needs an oracle");
    std::vector<std::size_t> picks;
    const std::size_t n = pool.size();
    if (policy.samples == 0 || policy.samples >= n) {
        for (std::size_t i = 0; i < n; ++i) picks.push_back(i);
    } else {
        std::uniform_int_distribution<std::size_t> d(0, n - 1);
        for (std::size_t s = 0; s < policy.samples; ++s) picks.push_back(d(rng));
    }
    const ModelParams frozen = detached(params);
    const double dt = pool.dt();
    for (std::size_t idx : picks) {
        if (pool.size() >= policy.max_size) break;
        const FieldSequence& src = pool[idx];
        const auto preds = predict_block(frozen, to_states(src, problem.op), problem.factors,
                                         problem.contexts, workers);
        FieldSequence next;
        next.dt = dt;
        const double t_last = src.back().time();
        bool finite = true;
        for (std::size_t k = 0; k < preds.size(); ++k) {
            finite = finite && all_finite(preds[k].data());
            if (policy.correct && k > 0) {
                next.frames.push_back(oracle_step(next.back(), *problem.oracle));
            } else {
                next.frames.push_back(problem.op.from_state(preds[k], t_last + (k + 1) * dt));
            }
        }
        if (finite) pool.add(std::move(next));
    }
}

TrainResult train(const TrainConfig& cfg, const StaggerProblem& problem, TrainingPool pool,
                  const ModelParams& init, WorkerPool* workers) {
    cfg.validate();
    if (pool.size() == 0) throw ConfigError("training pool is empty");
    if (pool.s_t() != cfg.factors.s_t) throw ConfigError("pool s_T differs from the factors");

    std::mt19937_64 batch_rng(derive_seed(cfg.seed, "batch"));
    std::mt19937_64 enrich_rng(derive_seed(cfg.seed, "enrich"));
    ModelParams params = detached(init);
    AdamState adam;
    TrainResult result{params, params, std::numeric_limits<double>::infinity(), 0, {}, 0};
    std::deque<double> window;
    double window_sum = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t np = params.tensors().size();

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const double lr = learning_rate(cfg, it);
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        std::vector<std::size_t> batch(cfg.batch_size);
        for (auto& b : batch) b = pick(batch_rng);

        std::vector<double> losses(batch.size());
        std::vector<std::vector<std::vector<double>>> sample_grads(batch.size());
        auto run_sample = [&](std::size_t b) {
            const ModelParams leaves = params.as_leaves();
            const Tensor loss = staggered_loss(to_states(pool[batch[b]], problem.op), leaves,
                                               problem.factors, problem.op, problem.contexts);
            backward(loss);
            losses[b] = loss.item();
            auto& g = sample_grads[b];
            g.reserve(np);
            for (const auto& t : leaves.tensors())
                g.emplace_back(t.value.grad().begin(), t.value.grad().end());
        };
        if (workers != nullptr) {
            workers->parallel_for(batch.size(), run_sample);
        } else {
            for (std::size_t b = 0; b < batch.size(); ++b) run_sample(b);
        }

        // Ordered reduction keeps the result independent of scheduling.
        double loss = 0.0;
        std::vector<std::vector<double>> grads = sample_grads[0];
        for (std::size_t b = 0; b < batch.size(); ++b) {
            loss += losses[b];
            if (b == 0) continue;
            for (std::size_t n = 0; n < np; ++n)
                for (std::size_t i = 0; i < grads[n].size(); ++i) grads[n][i] += sample_grads[b][n][i];
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        loss *= inv;
        for (auto& g : grads)
            for (double& x : g) x *= inv;

        if (!std::isfinite(loss) || loss > cfg.divergence_limit) {
            throw TrainingError("training diverged at iteration " + std::to_string(it) +
                                ": loss " + std::to_string(loss) + " exceeds limit " +
                                std::to_string(cfg.divergence_limit));
        }
        if (loss < result.best_loss) {
            result.best_loss = loss;
            result.best_iteration = it;
            result.best = params;
        }

        clip_global_norm(grads, cfg.clip_norm);
        adam_step(params, grads, adam, lr);

        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back({it, loss, lr, pool.size(), ms});

        if (cfg.pool.mode == PoolMode::initial && cfg.pool.enrich) {
            window.push_back(loss);
            window_sum += loss;
            if (window.size() > cfg.pool.window) {
                window_sum -= window.front();
                window.pop_front();
            }
            if (window.size() == cfg.pool.window &&
                window_sum / static_cast<double>(window.size()) < cfg.pool.threshold &&
                pool.size() < cfg.pool.max_size) {
                enrich_pool(pool, params, cfg.pool, problem, enrich_rng, workers);
                ++result.enrichments;
                window.clear();
                window_sum = 0.0;
            }
        }
    }
    result.last = params;
    return result;
}

std::vector<Tensor> rollout_states(const ModelParams& params, const std::vector<Tensor>& init,
                                   std::size_t n_steps, const StaggerFactors& factors,
                                   const std::vector<SubtaskContext>& contexts,
                                   WorkerPool* workers) {
    if (init.size() != factors.s_t) {
        throw LayoutError("rollout needs " + std::to_string(factors.s_t) + " initial frames, got " +
                          std::to_string(init.size()));
    }
    if (n_steps % factors.s_t != 0) {
        throw ContractError("rollout length " + std::to_string(n_steps) +
                            " is not a multiple of s_T = " + std::to_string(factors.s_t));
    }
    const ModelParams frozen = detached(params);
    std::vector<Tensor> window;
    for (const auto& t : init) window.push_back(t.detach(false));
    std::vector<Tensor> out;
    out.reserve(n_steps);
    for (std::size_t b = 0; b < n_steps / factors.s_t; ++b) {
        window = predict_block(frozen, window, factors, contexts, workers);
        out.insert(out.end(), window.begin(), window.end());
    }
    return out;
}

FieldSequence rollout(const ModelParams& params, const FieldSequence& init, std::size_t n_steps,
                      const StaggerProblem& problem, WorkerPool* workers) {
    init.validate();
    const auto states = rollout_states(params, to_states(init, problem.op), n_steps,
                                       problem.factors, problem.contexts, workers);
    FieldSequence seq = init;
    const double t_last = init.back().time();
    for (std::size_t n = 0; n < states.size(); ++n) {
        seq.frames.push_back(problem.op.from_state(states[n], t_last + (n + 1) * init.dt));
    }
    return seq;
}

FieldSequence coarse_rollout(const ModelParams& params, const Field& init, const SubtaskContext& ctx,
                             std::size_t n_blocks, double block_dt) {
    Tensor x = field_tensor(init);
    for (const auto& a : ctx.static_aux) {
        if (a.shape() != x.shape()) {
            throw ShapeError("coarse_rollout: initial state " + shape_str(x.shape()) +
                             " does not match subgrid shape " + shape_str(a.shape()));
        }
    }
    const ModelParams frozen = detached(params);
    FieldSequence seq;
    seq.dt = block_dt;
    seq.frames.push_back(init);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const Tensor y = forward(frozen, ctx.assemble(x));
        x = reshape(y, Shape{y.shape()[1], y.shape()[2]});
        seq.frames.push_back(tensor_field(x, init.grid(), init.time() + (b + 1) * block_dt));
    }
    return seq;
}

InputOptResult optimize_input(const std::function<Tensor(const Tensor&)>& objective,
                              const Tensor& x0, std::size_t steps, double lr) {
    std::vector<double> x(x0.data().begin(), x0.data().end());
    AdamState st;
    st.m.emplace_back(x.size(), 0.0);
    st.v.emplace_back(x.size(), 0.0);
    InputOptResult res;
    for (std::size_t s = 0; s <= steps; ++s) {
        const Tensor leaf = Tensor::from(x0.shape(), x, s < steps);
        const Tensor obj = objective(leaf);
        res.trace.push_back(obj.item());
        if (s == steps) break;
        backward(obj);
        if (!all_finite(leaf.grad())) {
            throw TrainingError("non-finite input gradient at step " + std::to_string(s));
        }
        ++st.step;
        adam_update(x, leaf.grad(), st.m[0], st.v[0], st, lr);
    }
    res.input = Tensor::from(x0.shape(), std::move(x));
    return res;
}

} // namespace nstagger
