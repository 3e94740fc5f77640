#pragma once

/**
 * @file experiment.hpp
 * @brief Experiment configuration (strict INI text) and the commands the CLI
 * runs: dataset generation, training, evaluation, rollout, analyses and the
 * input-recovery demo.
 *
 * Every command writes into a staging directory and renames it onto the
 * requested output directory only after success, so a failed run leaves no
 * partial outputs. Each output directory holds `config.ini` (the resolved
 * configuration) and `digest.txt` (seed, version, worker count and a digest
 * of every artifact).
 */

#include "nstagger/model.hpp"
#include "nstagger/reference_solvers.hpp"
#include "nstagger/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nstagger {

inline constexpr const char* kVersion = "0.1.0";

struct ExperimentConfig {
    // [experiment]
    std::string name = "experiment";
    Equation equation = Equation::diffusion;
    std::uint64_t seed = 0;

    // [grid]
    std::size_t height = 16;
    std::size_t width = 16;
    double dx = 1.0 / 32.0;

    // [residual]
    TimeScheme scheme = TimeScheme::crank_nicolson;
    double dt = 0.1 / (32.0 * 32.0);
    double reynolds = 1000.0;
    /// "none" or "diagonal": 0.1 sin(2 pi (x + y)) + cos(2 pi (x + y)).
    std::string forcing = "none";
    double lid_speed = 1.0;
    double lid_burn_in = 1.98;

    // [stagger]
    StaggerFactors factors;

    // [model]
    std::size_t hidden_channels = 16;
    std::size_t depth = 3;
    std::size_t kernel_size = 3;
    PadMode padding = PadMode::periodic;
    bool predict_delta = true;
    bool linear_skip = true;
    double state_scale = 1.0;

    // [aux]
    AuxMode aux_mode = AuxMode::none;
    std::size_t pe_frequencies = 4;
    bool include_forcing = false;

    // [data]
    std::size_t train_conditions = 16;
    std::size_t test_conditions = 3;
    double amplitude = 2e7;
    double shift = 64.0;
    double exponent = 4.0;
    /// Oracle steps per training trajectory (trajectory pool mode).
    std::size_t trajectory_steps = 24;
    std::size_t trajectory_stride = 1;

    // [train]
    double lr0 = 3e-3;
    double lr_decay = 0.9;
    std::size_t decay_every = 100;
    std::size_t batch_size = 4;
    std::size_t iterations = 2000;
    double clip_norm = 1.0;
    PoolMode pool_mode = PoolMode::trajectory;
    bool enrich = true;
    double enrich_threshold = 1e-4;
    std::size_t enrich_window = 200;
    std::size_t enrich_samples = 0;
    std::size_t pool_max = 1024;
    bool correct = false;

    // [eval]
    std::size_t horizon = 20;
    std::vector<std::size_t> checkpoints{1, 10, 20};

    // [control]
    std::size_t control_steps = 500;
    double control_lr = 1e-2;
    std::size_t control_horizon = 4;

    // [analysis]
    std::size_t bandwidth_side = 16;
    std::size_t bandwidth_k_max = 32;
    double bandwidth_r = 0.2;
    std::size_t prop1_samples = 256;
    std::size_t prop1_dim = 32;
    std::size_t prop1_blocks = 4;
    std::size_t prop1_rank = 6;
    std::size_t gmacs_horizon = 200;

    /// Throws ConfigError on inconsistent settings.
    void validate() const;

    GridSpec grid() const;
    OracleConfig oracle() const;
    ModelSpec model_spec() const;
    AuxChannelSpec aux() const;
    TrainConfig train_config() const;
    /// Forcing field on the full grid, empty when forcing = none.
    std::vector<double> forcing_field() const;
    ResidualOperator residual_operator() const;
    StaggerProblem problem() const;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Strict parser: unknown sections or keys, duplicates and malformed values
/// raise ConfigError with the line number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(to_ini(c)) == c and the text is stable.
std::string to_ini(const ExperimentConfig& cfg);

struct RunContext {
    std::size_t workers = 1;
    std::string command;
};

/// Initial condition n of the training ("train") or test ("test") set.
Field initial_condition(const ExperimentConfig& cfg, const std::string& set, std::size_t n);

/// Training pool for the configured mode, built from the oracle.
TrainingPool build_training_pool(const ExperimentConfig& cfg);

/// Oracle trajectory of a test condition: s_T - 1 + horizon steps, so frame
/// s_T - 1 + k is the truth for Error-k.
FieldSequence test_trajectory(const ExperimentConfig& cfg, std::size_t n);

/// Rollout of `horizon` steps from the first s_T oracle frames of a test trajectory.
FieldSequence model_rollout(const ExperimentConfig& cfg, const ModelParams& params,
                            const FieldSequence& truth, std::size_t horizon, WorkerPool* workers);

/// Initial-condition recovery through the frozen model. Returns the objective
/// trace and the recovered input block [s_T, h, w].
InputOptResult recover_input(const ExperimentConfig& cfg, const ModelParams& params);

void cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& out, const RunContext& ctx);
void cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out, const RunContext& ctx);
void cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                  const std::filesystem::path& out, const RunContext& ctx);
void cmd_rollout(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                 const std::filesystem::path& out, const RunContext& ctx);
/// `which` is bandwidth, prop1 or gmacs.
void cmd_analyze(const ExperimentConfig& cfg, const std::string& which,
                 const std::filesystem::path& out, const RunContext& ctx);
void cmd_control(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                 const std::filesystem::path& out, const RunContext& ctx);

} // namespace nstagger
