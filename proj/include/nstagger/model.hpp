#pragma once

/**
 * @file model.hpp
 * @brief Shared-parameter coarse solver used for every stagger subtask.
 *
 * The network is a stack of "same" convolutions with GELU activations plus a
 * linear convolution branch straight from the input to the output:
 *
 *   x   = [state / state_scale, aux...]
 *   h_0 = x,  h_l = gelu(conv_l(h_{l-1}) + b_l)      for l = 1..depth
 *   y   = conv_out(h_depth) + b_out + conv_skip(x)
 *   out = state + state_scale * y                    (predict_delta)
 *
 * conv_out, b_out and conv_skip start at zero, so a fresh model with
 * predict_delta returns its input state exactly.
 */

#include "nstagger/field.hpp"
#include "nstagger/tensor.hpp"
#include "nstagger/worker_pool.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nstagger {

enum class AuxMode { none, normalized_coords, sinusoidal_pe, vorticity };

struct AuxChannelSpec {
    AuxMode mode = AuxMode::none;
    std::size_t pe_frequencies = 4;
    /// Appends the (subsampled) forcing field as a parameter channel.
    bool include_forcing = false;

    std::size_t channel_count() const;
};

struct ModelSpec {
    std::size_t in_channels = 1;
    std::size_t hidden_channels = 32;
    std::size_t depth = 4;
    std::size_t kernel_size = 3;
    PadMode padding_mode = PadMode::periodic;
    bool predict_delta = true;
    bool linear_skip = true;
    double state_scale = 1.0;

    void validate() const;
};

struct ConvLayerShape {
    std::string name;
    std::size_t in_channels;
    std::size_t out_channels;
    std::size_t kernel;
};

/// Convolution layers of the network in evaluation order.
std::vector<ConvLayerShape> conv_layers(const ModelSpec& spec);

struct NamedTensor {
    std::string name;
    Tensor value;
};

class ModelParams {
public:
    ModelParams() = default;
    ModelParams(ModelSpec spec, std::vector<NamedTensor> tensors);

    /// Kaiming-uniform hidden layers, zero output and skip layers.
    static ModelParams initialize(const ModelSpec& spec, std::uint64_t seed);
    /// Every tensor (including the output layers) drawn at random; for gradient checks.
    static ModelParams random(const ModelSpec& spec, std::uint64_t seed, double amplitude = 0.5);

    const ModelSpec& spec() const { return spec_; }
    const std::vector<NamedTensor>& tensors() const { return tensors_; }
    std::vector<NamedTensor>& tensors_mut() { return tensors_; }
    const Tensor& get(const std::string& name) const;
    void set(const std::string& name, Tensor value);

    /// Copy whose tensors are fresh leaves requiring gradients.
    ModelParams as_leaves() const;
    std::size_t parameter_count() const;

private:
    ModelSpec spec_;
    std::vector<NamedTensor> tensors_;
};

/// Expected tensor names and shapes for a spec.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelSpec& spec);

/// Checkpoint: one NSTG snapshot per tensor plus `<dir>/params.manifest` with
/// "<name> <file> <dims...>" lines and a "spec" header line.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& dir);
ModelParams load_checkpoint(const std::filesystem::path& dir);

/// Parameters reproducing one explicit Euler diffusion step through the skip
/// branch; used as the "perfect model" sanity harness.
ModelParams explicit_diffusion_params(const ModelSpec& spec, double dt, double dx);

/// Static positional channels for subgrid (i, j) of a fine `grid` under `factors`.
std::vector<Tensor> positional_channels(const GridSpec& grid, std::size_t i, std::size_t j,
                                        const StaggerFactors& factors, const AuxChannelSpec& spec);

/// omega = d(vy)/dx - d(vx)/dy; central differences, periodic wrap or one-sided at walls.
Tensor discrete_curl(const Tensor& vx, const Tensor& vy, double dx, Boundary boundary);
Field discrete_curl(const Field& vx, const Field& vy);

/// Vorticity channel of a stream-function state on its own (coarse) grid.
Tensor stream_vorticity_channel(const Tensor& psi, double dx, Boundary boundary);

Tensor forward(const ModelParams& params, const Tensor& input);

/// Static inputs of one subgrid and the recipe to assemble a full model input.
struct SubtaskContext {
    std::size_t i = 0;
    std::size_t j = 0;
    std::vector<Tensor> static_aux;
    AuxMode mode = AuxMode::none;
    double coarse_dx = 1.0;
    Boundary boundary = Boundary::periodic;

    Tensor assemble(const Tensor& state) const;
};

/// Context for every subgrid (index i * s_w + j). `forcing` is the full-grid
/// forcing in state layout when the aux spec asks for it.
std::vector<SubtaskContext> make_subtask_contexts(const GridSpec& state_grid,
                                                  const StaggerFactors& factors,
                                                  const AuxChannelSpec& aux,
                                                  const std::optional<Tensor>& forcing);

struct SubtaskInput {
    std::size_t i = 0;
    std::size_t j = 0;
    std::size_t k = 0;
    Tensor input;
};

/// Runs every subtask through the shared parameters, concurrently on `pool`.
/// Results are ordered like `inputs` and reshaped to [h,w].
std::vector<Tensor> ensemble_forward(const ModelParams& params,
                                     const std::vector<SubtaskInput>& inputs,
                                     const StaggerFactors& factors, WorkerPool& pool);

} // namespace nstagger
