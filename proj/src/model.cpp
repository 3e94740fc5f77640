#include "nstagger/model.hpp"

#include "nstagger/errors.hpp"
#include "nstagger/snapshot_io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace nstagger {

std::size_t AuxChannelSpec::channel_count() const {
    std::size_t n = include_forcing ? 1 : 0;
    switch (mode) {
    case AuxMode::none: break;
    case AuxMode::normalized_coords: n += 2; break;
    case AuxMode::sinusoidal_pe: n += 4 * pe_frequencies; break;
    case AuxMode::vorticity: n += 1; break;
    }
    return n;
}

void ModelSpec::validate() const {
    if (kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (in_channels < 1 || hidden_channels < 1) throw ConfigError("channel counts must be >= 1");
    if (padding_mode == PadMode::reflect) throw ConfigError("padding must be periodic or zero");
    if (!(state_scale > 0.0)) throw ConfigError("state_scale must be positive");
}

std::vector<ConvLayerShape> conv_layers(const ModelSpec& spec) {
    std::vector<ConvLayerShape> out;
    std::size_t c = spec.in_channels;
    for (std::size_t l = 0; l < spec.depth; ++l) {
        out.push_back({"conv" + std::to_string(l), c, spec.hidden_channels, spec.kernel_size});
        c = spec.hidden_channels;
    }
    out.push_back({"out", c, 1, spec.kernel_size});
    if (spec.linear_skip) out.push_back({"skip", spec.in_channels, 1, spec.kernel_size});
    return out;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelSpec& spec) {
    std::vector<std::pair<std::string, Shape>> out;
    const std::size_t k = spec.kernel_size;
    for (const auto& l : conv_layers(spec)) {
        out.emplace_back(l.name + ".weight", Shape{l.out_channels, l.in_channels, k, k});
        if (l.name != "skip") out.emplace_back(l.name + ".bias", Shape{l.out_channels});
    }
    return out;
}

ModelParams::ModelParams(ModelSpec spec, std::vector<NamedTensor> tensors)
    : spec_(spec), tensors_(std::move(tensors)) {
    spec_.validate();
    const auto layout = parameter_layout(spec_);
    if (layout.size() != tensors_.size()) {
        throw ShapeError("parameter count " + std::to_string(tensors_.size()) +
                         " does not match spec (" + std::to_string(layout.size()) + ")");
    }
    for (std::size_t k = 0; k < layout.size(); ++k) {
        if (layout[k].first != tensors_[k].name || layout[k].second != tensors_[k].value.shape()) {
            throw ShapeError("parameter " + tensors_[k].name + " " +
                             shape_str(tensors_[k].value.shape()) + " does not match expected " +
                             layout[k].first + " " + shape_str(layout[k].second));
        }
    }
}

ModelParams ModelParams::initialize(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::vector<NamedTensor> t;
    for (const auto& [name, shape] : parameter_layout(spec)) {
        std::vector<double> v(numel(shape), 0.0);
        const bool hidden = name.rfind("conv", 0) == 0;
        if (hidden && shape.size() == 4) {
            const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
            const double bound = std::sqrt(6.0 / fan_in);
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& x : v) x = dist(rng);
        }
        t.push_back({name, Tensor::from(shape, std::move(v))});
    }
    return ModelParams(spec, std::move(t));
}

ModelParams ModelParams::random(const ModelSpec& spec, std::uint64_t seed, double amplitude) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-amplitude, amplitude);
    std::vector<NamedTensor> t;
    for (const auto& [name, shape] : parameter_layout(spec)) {
        std::vector<double> v(numel(shape));
        for (auto& x : v) x = dist(rng);
        t.push_back({name, Tensor::from(shape, std::move(v))});
    }
    return ModelParams(spec, std::move(t));
}

const Tensor& ModelParams::get(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return t.value;
    throw ContractError("no parameter named " + name);
}

void ModelParams::set(const std::string& name, Tensor value) {
    for (auto& t : tensors_) {
        if (t.name != name) continue;
        if (t.value.shape() != value.shape()) {
            throw ShapeError("parameter " + name + " expects " + shape_str(t.value.shape()) +
                             ", got " + shape_str(value.shape()));
        }
        t.value = std::move(value);
        return;
    }
    throw ContractError("no parameter named " + name);
}

ModelParams ModelParams::as_leaves() const {
    ModelParams p = *this;
    for (auto& t : p.tensors_) t.value = t.value.detach(true);
    return p;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.value.size();
    return n;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream m(dir / "params.manifest", std::ios::trunc);
    if (!m) throw ConfigError("cannot write checkpoint manifest in " + dir.string());
    const auto& s = params.spec();
    m << "spec " << s.in_channels << ' ' << s.hidden_channels << ' ' << s.depth << ' '
      << s.kernel_size << ' ' << (s.padding_mode == PadMode::periodic ? "periodic" : "zero") << ' '
      << s.predict_delta << ' ' << s.linear_skip << ' ' << std::setprecision(17) << s.state_scale
      << '\n';
    for (const auto& t : params.tensors()) {
        const std::string file = t.name + ".nstg";
        NdArray a;
        for (auto d : t.value.shape()) a.dims.push_back(d);
        a.data.assign(t.value.data().begin(), t.value.data().end());
        save_array(a, dir / file);
        m << t.name << ' ' << file;
        for (auto d : t.value.shape()) m << ' ' << d;
        m << '\n';
    }
}

ModelParams load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream m(dir / "params.manifest");
    if (!m) throw FormatError("missing checkpoint manifest in " + dir.string(), 0);
    std::string line, word;
    ModelSpec s;
    if (!std::getline(m, line)) throw FormatError("empty checkpoint manifest", 0);
    {
        std::istringstream ls(line);
        std::string pad;
        if (!(ls >> word >> s.in_channels >> s.hidden_channels >> s.depth >> s.kernel_size >> pad >>
              s.predict_delta >> s.linear_skip >> s.state_scale) ||
            word != "spec") {
            throw FormatError("malformed checkpoint spec line", 0);
        }
        s.padding_mode = pad == "periodic" ? PadMode::periodic : PadMode::zero;
    }
    std::vector<NamedTensor> tensors;
    while (std::getline(m, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name, file;
        ls >> name >> file;
        Shape shape;
        std::size_t d;
        while (ls >> d) shape.push_back(d);
        NdArray a = load_array(dir / file);
        Shape stored(a.dims.begin(), a.dims.end());
        if (stored != shape) throw FormatError("tensor " + name + " shape disagrees with manifest", 8);
        tensors.push_back({name, Tensor::from(shape, std::move(a.data))});
    }
    return ModelParams(s, std::move(tensors));
}

ModelParams explicit_diffusion_params(const ModelSpec& spec, double dt, double dx) {
    if (!spec.linear_skip || !spec.predict_delta || spec.kernel_size < 3) {
        throw ConfigError("explicit diffusion params need predict_delta, linear_skip, k >= 3");
    }
    ModelParams p = ModelParams::initialize(spec, 0);
    const std::size_t k = spec.kernel_size, c = k / 2;
    std::vector<double> w(spec.in_channels * k * k, 0.0);
    const double r = dt / (dx * dx);
    auto at = [&](std::size_t y, std::size_t x) -> double& { return w[y * k + x]; };
    at(c, c) = -4.0 * r;
    at(c - 1, c) = r;
    at(c + 1, c) = r;
    at(c, c - 1) = r;
    at(c, c + 1) = r;
    p.set("skip.weight", Tensor::from(Shape{1, spec.in_channels, k, k}, std::move(w)));
    return p;
}

std::vector<Tensor> positional_channels(const GridSpec& grid, std::size_t i, std::size_t j,
                                        const StaggerFactors& factors, const AuxChannelSpec& spec) {
    check_divisible(grid, factors);
    const std::size_t h = grid.height / factors.s_h, w = grid.width / factors.s_w;
    std::vector<double> ys(h * w), xs(h * w);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            ys[r * w + c] = static_cast<double>(r * factors.s_h + i) / static_cast<double>(grid.height);
            xs[r * w + c] = static_cast<double>(c * factors.s_w + j) / static_cast<double>(grid.width);
        }
    std::vector<Tensor> out;
    if (spec.mode == AuxMode::normalized_coords) {
        out.push_back(Tensor::from(Shape{h, w}, ys));
        out.push_back(Tensor::from(Shape{h, w}, xs));
    } else if (spec.mode == AuxMode::sinusoidal_pe) {
        for (std::size_t f = 0; f < spec.pe_frequencies; ++f) {
            const double omega = 2.0 * std::numbers::pi * static_cast<double>(1ULL << f);
            for (const auto* coord : {&ys, &xs}) {
                std::vector<double> sv(h * w), cv(h * w);
                for (std::size_t q = 0; q < h * w; ++q) {
                    sv[q] = std::sin(omega * (*coord)[q]);
                    cv[q] = std::cos(omega * (*coord)[q]);
                }
                out.push_back(Tensor::from(Shape{h, w}, std::move(sv)));
                out.push_back(Tensor::from(Shape{h, w}, std::move(cv)));
            }
        }
    }
    return out;
}

namespace {

enum class Edge { none, low, high };

Tensor edge_mask(std::size_t h, std::size_t w, std::size_t axis, Edge e) {
    std::vector<double> m(h * w, 0.0);
    const std::size_t n = axis == 0 ? h : w;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t idx = axis == 0 ? r : c;
            const bool low = idx == 0, high = idx == n - 1;
            const bool on = (e == Edge::low && low) || (e == Edge::high && high) ||
                            (e == Edge::none && !low && !high);
            m[r * w + c] = on ? 1.0 : 0.0;
        }
    return Tensor::from(Shape{h, w}, std::move(m));
}

// Central difference along `axis`; one-sided at the ends for walled grids.
Tensor derivative(const Tensor& u, std::size_t axis, double dx, Boundary boundary) {
    const Tensor fwd = circular_shift(u, axis, -1); // u[i+1]
    const Tensor bwd = circular_shift(u, axis, 1);  // u[i-1]
    const Tensor central = scale(sub(fwd, bwd), 0.5 / dx);
    if (boundary == Boundary::periodic) return central;
    const std::size_t h = u.shape()[0], w = u.shape()[1];
    Tensor out = mul(edge_mask(h, w, axis, Edge::none), central);
    out = add(out, mul(edge_mask(h, w, axis, Edge::low), scale(sub(fwd, u), 1.0 / dx)));
    return add(out, mul(edge_mask(h, w, axis, Edge::high), scale(sub(u, bwd), 1.0 / dx)));
}

} // namespace

Tensor discrete_curl(const Tensor& vx, const Tensor& vy, double dx, Boundary boundary) {
    if (vx.rank() != 2 || vx.shape() != vy.shape()) {
        throw ShapeError("discrete_curl: shape mismatch " + shape_str(vx.shape()) + " vs " +
                         shape_str(vy.shape()));
    }
    return sub(derivative(vy, 1, dx, boundary), derivative(vx, 0, dx, boundary));
}

Field discrete_curl(const Field& vx, const Field& vy) {
    if (!(vx.grid() == vy.grid())) throw ShapeError("discrete_curl: grid mismatch");
    auto as_tensor = [](const Field& f) {
        return Tensor::from(Shape{f.height(), f.width()},
                            std::vector<double>(f.values().begin(), f.values().end()));
    };
    const Tensor w = discrete_curl(as_tensor(vx), as_tensor(vy), vx.grid().dx, vx.grid().boundary);
    return Field(vx.grid(), std::vector<double>(w.data().begin(), w.data().end()), vx.time());
}

Tensor stream_vorticity_channel(const Tensor& psi, double dx, Boundary boundary) {
    // u = dpsi/dy, v = -dpsi/dx
    const Tensor vx = derivative(psi, 0, dx, boundary);
    const Tensor vy = scale(derivative(psi, 1, dx, boundary), -1.0);
    return discrete_curl(vx, vy, dx, boundary);
}

Tensor forward(const ModelParams& params, const Tensor& input) {
    const ModelSpec& spec = params.spec();
    if (input.rank() != 3 || input.shape()[0] != spec.in_channels) {
        throw ShapeError("model expects [" + std::to_string(spec.in_channels) +
                         ",h,w] input, got " + shape_str(input.shape()));
    }
    const std::size_t h = input.shape()[1], w = input.shape()[2];
    const Tensor state = slice_channels(input, 0, 1);
    Tensor x = input;
    if (spec.state_scale != 1.0) {
        const Tensor scaled = scale(state, 1.0 / spec.state_scale);
        x = spec.in_channels > 1
                ? concat_channels({scaled, slice_channels(input, 1, spec.in_channels)})
                : scaled;
    }
    Tensor hid = x;
    for (std::size_t l = 0; l < spec.depth; ++l) {
        const std::string n = "conv" + std::to_string(l);
        hid = gelu(add_channel_bias(conv2d(hid, params.get(n + ".weight"), spec.padding_mode),
                                    params.get(n + ".bias")));
    }
    Tensor y = add_channel_bias(conv2d(hid, params.get("out.weight"), spec.padding_mode),
                                params.get("out.bias"));
    if (spec.linear_skip) y = add(y, conv2d(x, params.get("skip.weight"), spec.padding_mode));
    if (spec.state_scale != 1.0) y = scale(y, spec.state_scale);
    if (spec.predict_delta) y = add(state, y);
    return reshape(y, Shape{1, h, w});
}

Tensor SubtaskContext::assemble(const Tensor& state) const {
    std::vector<Tensor> parts{state};
    if (mode == AuxMode::vorticity) parts.push_back(stream_vorticity_channel(state, coarse_dx, boundary));
    parts.insert(parts.end(), static_aux.begin(), static_aux.end());
    return concat_channels(parts);
}

std::vector<SubtaskContext> make_subtask_contexts(const GridSpec& state_grid,
                                                  const StaggerFactors& factors,
                                                  const AuxChannelSpec& aux,
                                                  const std::optional<Tensor>& forcing) {
    check_divisible(state_grid, factors);
    if (aux.include_forcing && !forcing) throw ConfigError("aux asks for forcing but none is set");
    std::vector<SubtaskContext> out;
    for (std::size_t i = 0; i < factors.s_h; ++i)
        for (std::size_t j = 0; j < factors.s_w; ++j) {
            SubtaskContext ctx;
            ctx.i = i;
            ctx.j = j;
            ctx.mode = aux.mode;
            ctx.coarse_dx = state_grid.dx * static_cast<double>(factors.s_h);
            ctx.boundary = state_grid.boundary;
            ctx.static_aux = positional_channels(state_grid, i, j, factors, aux);
            if (aux.include_forcing) {
                ctx.static_aux.push_back(subsample(*forcing, factors.s_h, factors.s_w, i, j));
            }
            out.push_back(std::move(ctx));
        }
    return out;
}

std::vector<Tensor> ensemble_forward(const ModelParams& params,
                                     const std::vector<SubtaskInput>& inputs,
                                     const StaggerFactors& factors, WorkerPool& pool) {
    std::set<std::size_t> seen;
    for (const auto& in : inputs) {
        if (in.i >= factors.s_h || in.j >= factors.s_w || in.k >= factors.s_t) {
            throw LayoutError("subtask index out of range");
        }
        const std::size_t key = (in.k * factors.s_h + in.i) * factors.s_w + in.j;
        if (!seen.insert(key).second) throw LayoutError("duplicate subtask input");
    }
    if (seen.size() != factors.subtask_count()) {
        throw LayoutError("ensemble needs " + std::to_string(factors.subtask_count()) +
                          " subtask inputs, got " + std::to_string(seen.size()));
    }
    std::vector<Tensor> out(inputs.size());
    pool.parallel_for(inputs.size(), [&](std::size_t n) {
        const Tensor y = forward(params, inputs[n].input);
        out[n] = reshape(y, Shape{y.shape()[1], y.shape()[2]});
    });
    return out;
}

} // namespace nstagger
