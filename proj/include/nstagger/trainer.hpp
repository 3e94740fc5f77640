#pragma once

/**
 * @file trainer.hpp
 * @brief Data-free training of the staggered ensemble, auto-regressive
 * rollout, and gradient-based optimization of solver inputs.
 */

#include "nstagger/model.hpp"
#include "nstagger/reference_solvers.hpp"
#include "nstagger/residuals.hpp"
#include "nstagger/staggered_loss.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

namespace nstagger {

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam update of every parameter tensor; grads are ordered
/// like params.tensors(). Throws TrainingError naming the first parameter
/// with a non-finite gradient, before anything is modified.
void adam_step(ModelParams& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr);

/// Scales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm);

enum class PoolMode {
    /// Bootstraps from sampled initial conditions, enriched with predictions.
    initial,
    /// Fixed set of s_T-frame windows cut from oracle trajectories.
    trajectory,
};

struct PoolConfig {
    PoolMode mode = PoolMode::initial;
    bool enrich = true;
    /// Running-mean loss (over `window` iterations) that triggers an enrichment.
    double threshold = 1e-4;
    std::size_t window = 200;
    /// Entries advanced per enrichment; 0 means every entry.
    std::size_t samples = 0;
    std::size_t max_size = 1024;
    /// Replace predicted frames by oracle re-solves from the first predicted frame.
    bool correct = false;
};

struct TrainConfig {
    StaggerFactors factors;
    double lr0 = 3e-3;
    double lr_decay = 0.9;
    std::size_t decay_every = 5000;
    std::size_t batch_size = 4;
    std::size_t iterations = 1000;
    std::uint64_t seed = 0;
    double clip_norm = 1.0;
    double divergence_limit = 1e6;
    PoolConfig pool;

    void validate() const;
};

/// lr0 * lr_decay^floor(n / decay_every).
double learning_rate(const TrainConfig& cfg, std::size_t iteration);

/// Entries are full-grid sequences of exactly s_T frames with step dt.
class TrainingPool {
public:
    TrainingPool(std::size_t s_t, double dt) : s_t_(s_t), dt_(dt) {}

    void add(FieldSequence seq);
    std::size_t size() const { return entries_.size(); }
    std::size_t s_t() const { return s_t_; }
    double dt() const { return dt_; }
    const FieldSequence& operator[](std::size_t n) const { return entries_[n]; }
    const std::vector<FieldSequence>& entries() const { return entries_; }

    /// Every s_T-frame window of each trajectory, starting at multiples of `stride`.
    static TrainingPool from_trajectories(const std::vector<FieldSequence>& trajs, std::size_t s_t,
                                          std::size_t stride);

private:
    std::size_t s_t_;
    double dt_;
    std::vector<FieldSequence> entries_;
};

/// Shared pieces of a training or inference problem.
struct StaggerProblem {
    ResidualOperator op;
    StaggerFactors factors;
    std::vector<SubtaskContext> contexts;
    /// Needed only for pool correction.
    std::optional<OracleConfig> oracle;
};

/// Appends the model's next s_T-frame sequence for `policy.samples` entries
/// drawn with `rng` (all entries when 0), optionally corrected by the oracle.
void enrich_pool(TrainingPool& pool, const ModelParams& params, const PoolConfig& policy,
                 const StaggerProblem& problem, std::mt19937_64& rng, WorkerPool* workers = nullptr);

struct LossRecord {
    std::size_t iteration;
    double loss;
    double lr;
    std::size_t pool_size;
    double wall_ms;
};

struct TrainResult {
    ModelParams best;
    ModelParams last;
    double best_loss;
    std::size_t best_iteration;
    std::vector<LossRecord> history;
    std::size_t enrichments = 0;
};

/// Minibatch Adam on the staggered loss. Per-sample gradients are computed
/// on `workers` and summed in sample order, so results do not depend on the
/// worker count. Throws TrainingError when the loss exceeds the divergence limit.
TrainResult train(const TrainConfig& cfg, const StaggerProblem& problem, TrainingPool pool,
                  const ModelParams& init, WorkerPool* workers = nullptr);

/// Auto-regressive staggered inference: `init` holds s_T frames; the result
/// holds them followed by n_steps predicted frames. n_steps must be a multiple
/// of s_T so every block is complete.
FieldSequence rollout(const ModelParams& params, const FieldSequence& init, std::size_t n_steps,
                      const StaggerProblem& problem, WorkerPool* workers = nullptr);

/// State-tensor rollout: returns the n_steps predicted states only.
std::vector<Tensor> rollout_states(const ModelParams& params, const std::vector<Tensor>& init,
                                   std::size_t n_steps, const StaggerFactors& factors,
                                   const std::vector<SubtaskContext>& contexts,
                                   WorkerPool* workers = nullptr);

/// Standalone coarse solver on one subgrid: n_blocks applications of the model
/// to `init`, a coarse state of subgrid (ctx.i, ctx.j). Frames are spaced by
/// block_dt (s_T * dt for a staggered ensemble).
FieldSequence coarse_rollout(const ModelParams& params, const Field& init, const SubtaskContext& ctx,
                             std::size_t n_blocks, double block_dt);

struct InputOptResult {
    Tensor input;
    /// Objective at x0 and after every step.
    std::vector<double> trace;
};

/// Adam on the input of a differentiable objective; the model inside the
/// objective stays frozen.
InputOptResult optimize_input(const std::function<Tensor(const Tensor&)>& objective,
                              const Tensor& x0, std::size_t steps, double lr);

} // namespace nstagger
