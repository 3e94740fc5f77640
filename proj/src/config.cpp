#include "nstagger/errors.hpp"
#include "nstagger/experiment.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace nstagger {
namespace {

std::string fmt_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
    return v;
}

std::uint64_t parse_uint(const std::string& s) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw ConfigError("not a non-negative integer: '" + s + "'");
    }
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("expected true or false, got '" + s + "'");
}

template <typename E>
struct EnumNames {
    std::vector<std::pair<E, std::string>> names;

    std::string to(E e) const {
        for (const auto& [v, n] : names)
            if (v == e) return n;
        throw ConfigError("unnamed enum value");
    }
    E from(const std::string& s) const {
        std::string all;
        for (const auto& [v, n] : names) {
            if (n == s) return v;
            all += (all.empty() ? "" : ", ") + n;
        }
        throw ConfigError("unknown value '" + s + "' (expected one of: " + all + ")");
    }
};

const EnumNames<Equation> kEquations{
    {{Equation::diffusion, "diffusion"}, {Equation::ns_periodic, "ns_periodic"},
     {Equation::ns_lid_driven, "ns_lid_driven"}}};
const EnumNames<TimeScheme> kSchemes{
    {{TimeScheme::crank_nicolson, "crank_nicolson"}, {TimeScheme::explicit_euler, "explicit"}}};
const EnumNames<PadMode> kPads{
    {{PadMode::periodic, "periodic"}, {PadMode::zero, "zero"}, {PadMode::reflect, "reflect"}}};
const EnumNames<AuxMode> kAux{{{AuxMode::none, "none"},
                               {AuxMode::normalized_coords, "normalized_coords"},
                               {AuxMode::sinusoidal_pe, "sinusoidal_pe"},
                               {AuxMode::vorticity, "vorticity"}}};
const EnumNames<PoolMode> kPools{{{PoolMode::initial, "initial"}, {PoolMode::trajectory, "trajectory"}}};

struct Key {
    std::string section;
    std::string name;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Key num(std::string sec, std::string name, T ExperimentConfig::*m) {
    return {std::move(sec), std::move(name),
            [m](const ExperimentConfig& c) {
                if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*m);
                else return std::to_string(c.*m);
            },
            [m](ExperimentConfig& c, const std::string& v) {
                if constexpr (std::is_floating_point_v<T>) c.*m = parse_double(v);
                else c.*m = static_cast<T>(parse_uint(v));
            }};
}

Key flag(std::string sec, std::string name, bool ExperimentConfig::*m) {
    return {std::move(sec), std::move(name),
            [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); },
            [m](ExperimentConfig& c, const std::string& v) { c.*m = parse_bool(v); }};
}

template <typename E>
Key choice(std::string sec, std::string name, E ExperimentConfig::*m, const EnumNames<E>& names) {
    return {std::move(sec), std::move(name), [m, &names](const ExperimentConfig& c) { return names.to(c.*m); },
            [m, &names](ExperimentConfig& c, const std::string& v) { c.*m = names.from(v); }};
}

Key factor(const char* name, std::size_t StaggerFactors::*m) {
    return {"stagger", name, [m](const ExperimentConfig& c) { return std::to_string(c.factors.*m); },
            [m](ExperimentConfig& c, const std::string& v) { c.factors.*m = parse_uint(v); }};
}

const std::vector<Key>& keys() {
    static const std::vector<Key> k = {
        {"experiment", "name", [](const ExperimentConfig& c) { return c.name; },
         [](ExperimentConfig& c, const std::string& v) {
             if (v.empty() || v.find_first_of(" \t") != std::string::npos) {
                 throw ConfigError("name must be a single non-empty word");
             }
             c.name = v;
         }},
        choice("experiment", "equation", &ExperimentConfig::equation, kEquations),
        num("experiment", "seed", &ExperimentConfig::seed),
        num("grid", "height", &ExperimentConfig::height),
        num("grid", "width", &ExperimentConfig::width),
        num("grid", "dx", &ExperimentConfig::dx),
        choice("residual", "scheme", &ExperimentConfig::scheme, kSchemes),
        num("residual", "dt", &ExperimentConfig::dt),
        num("residual", "reynolds", &ExperimentConfig::reynolds),
        {"residual", "forcing", [](const ExperimentConfig& c) { return c.forcing; },
         [](ExperimentConfig& c, const std::string& v) {
             if (v != "none" && v != "diagonal") throw ConfigError("forcing must be none or diagonal");
             c.forcing = v;
         }},
        num("residual", "lid_speed", &ExperimentConfig::lid_speed),
        num("residual", "lid_burn_in", &ExperimentConfig::lid_burn_in),
        factor("s_h", &StaggerFactors::s_h),
        factor("s_w", &StaggerFactors::s_w),
        factor("s_t", &StaggerFactors::s_t),
        num("model", "hidden_channels", &ExperimentConfig::hidden_channels),
        num("model", "depth", &ExperimentConfig::depth),
        num("model", "kernel_size", &ExperimentConfig::kernel_size),
        choice("model", "padding", &ExperimentConfig::padding, kPads),
        flag("model", "predict_delta", &ExperimentConfig::predict_delta),
        flag("model", "linear_skip", &ExperimentConfig::linear_skip),
        num("model", "state_scale", &ExperimentConfig::state_scale),
        choice("aux", "mode", &ExperimentConfig::aux_mode, kAux),
        num("aux", "pe_frequencies", &ExperimentConfig::pe_frequencies),
        flag("aux", "include_forcing", &ExperimentConfig::include_forcing),
        num("data", "train_conditions", &ExperimentConfig::train_conditions),
        num("data", "test_conditions", &ExperimentConfig::test_conditions),
        num("data", "amplitude", &ExperimentConfig::amplitude),
        num("data", "shift", &ExperimentConfig::shift),
        num("data", "exponent", &ExperimentConfig::exponent),
        num("data", "trajectory_steps", &ExperimentConfig::trajectory_steps),
        num("data", "trajectory_stride", &ExperimentConfig::trajectory_stride),
        num("train", "lr0", &ExperimentConfig::lr0),
        num("train", "lr_decay", &ExperimentConfig::lr_decay),
        num("train", "decay_every", &ExperimentConfig::decay_every),
        num("train", "batch_size", &ExperimentConfig::batch_size),
        num("train", "iterations", &ExperimentConfig::iterations),
        num("train", "clip_norm", &ExperimentConfig::clip_norm),
        choice("train", "pool_mode", &ExperimentConfig::pool_mode, kPools),
        flag("train", "enrich", &ExperimentConfig::enrich),
        num("train", "enrich_threshold", &ExperimentConfig::enrich_threshold),
        num("train", "enrich_window", &ExperimentConfig::enrich_window),
        num("train", "enrich_samples", &ExperimentConfig::enrich_samples),
        num("train", "pool_max", &ExperimentConfig::pool_max),
        flag("train", "correct", &ExperimentConfig::correct),
        num("eval", "horizon", &ExperimentConfig::horizon),
        {"eval", "checkpoints",
         [](const ExperimentConfig& c) {
             std::string s;
             for (auto k : c.checkpoints) s += (s.empty() ? "" : ",") + std::to_string(k);
             return s;
         },
         [](ExperimentConfig& c, const std::string& v) {
             c.checkpoints.clear();
             std::stringstream ss(v);
             std::string item;
             while (std::getline(ss, item, ',')) c.checkpoints.push_back(parse_uint(item));
         }},
        num("control", "steps", &ExperimentConfig::control_steps),
        num("control", "lr", &ExperimentConfig::control_lr),
        num("control", "horizon", &ExperimentConfig::control_horizon),
        num("analysis", "bandwidth_side", &ExperimentConfig::bandwidth_side),
        num("analysis", "bandwidth_k_max", &ExperimentConfig::bandwidth_k_max),
        num("analysis", "bandwidth_r", &ExperimentConfig::bandwidth_r),
        num("analysis", "prop1_samples", &ExperimentConfig::prop1_samples),
        num("analysis", "prop1_dim", &ExperimentConfig::prop1_dim),
        num("analysis", "prop1_blocks", &ExperimentConfig::prop1_blocks),
        num("analysis", "prop1_rank", &ExperimentConfig::prop1_rank),
        num("analysis", "gmacs_horizon", &ExperimentConfig::gmacs_horizon),
    };
    return k;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

ExperimentConfig parse_config(const std::string& text) {
    std::map<std::string, const Key*> index;
    std::set<std::string> sections;
    for (const auto& k : keys()) {
        index[k.section + "." + k.name] = &k;
        sections.insert(k.section);
    }
    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string where = "config line " + std::to_string(line_no) + ": ";
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!sections.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "key outside of any section");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        const auto hash = value.find(" #");
        if (hash != std::string::npos) value = trim(value.substr(0, hash));
        const std::string full = section + "." + key;
        const auto it = index.find(full);
        if (it == index.end()) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
        if (!seen.insert(full).second) throw ConfigError(where + "duplicate key '" + full + "'");
        try {
            it->second->set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + full + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_ini(const ExperimentConfig& cfg) {
    std::string out, section;
    for (const auto& k : keys()) {
        if (k.section != section) {
            if (!section.empty()) out += '\n';
            section = k.section;
            out += "[" + section + "]\n";
        }
        out += k.name + " = " + k.get(cfg) + "\n";
    }
    return out;
}

void ExperimentConfig::validate() const {
    grid().validate();
    check_divisible(residual_operator().state_grid(), factors);
    if (factors.s_t < 1) throw ConfigError("s_t must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (equation != Equation::diffusion && !(reynolds > 0.0)) throw ConfigError("reynolds must be positive");
    if (equation == Equation::diffusion && forcing != "none") {
        throw ConfigError("forcing applies to Navier-Stokes only");
    }
    if (include_forcing && forcing == "none") throw ConfigError("aux include_forcing needs a forcing");
    if (aux_mode == AuxMode::vorticity && equation == Equation::diffusion) {
        throw ConfigError("vorticity aux channel needs a stream-function state");
    }
    if (equation == Equation::ns_lid_driven && padding == PadMode::periodic) {
        throw ConfigError("lid-driven flow needs zero or reflect padding");
    }
    if (equation != Equation::ns_lid_driven &&
        (!is_power_of_two(height) || !is_power_of_two(width))) {
        throw ConfigError("random initial conditions need power-of-two grid sides");
    }
    if (train_conditions < 1) throw ConfigError("train_conditions must be >= 1");
    if (horizon % factors.s_t != 0) throw ConfigError("eval horizon must be a multiple of s_t");
    for (auto k : checkpoints) {
        if (k < 1 || k > horizon) throw ConfigError("eval checkpoints must lie in 1..horizon");
    }
    if (control_horizon % factors.s_t != 0 || control_horizon == 0) {
        throw ConfigError("control horizon must be a positive multiple of s_t");
    }
    if (pool_mode == PoolMode::trajectory && trajectory_steps + 1 < factors.s_t) {
        throw ConfigError("trajectory_steps too short for s_t");
    }
    model_spec().validate();
    train_config().validate();
}

GridSpec ExperimentConfig::grid() const {
    return {height, width, dx,
            equation == Equation::ns_lid_driven ? Boundary::dirichlet_lid : Boundary::periodic};
}

OracleConfig ExperimentConfig::oracle() const {
    OracleConfig o;
    o.equation = equation;
    o.dt = dt;
    o.dx = dx;
    o.scheme = scheme;
    if (equation != Equation::diffusion) o.reynolds = reynolds;
    const auto f = forcing_field();
    if (!f.empty()) o.forcing = f;
    o.lid_speed = lid_speed;
    o.lid_burn_in = lid_burn_in;
    return o;
}

ModelSpec ExperimentConfig::model_spec() const {
    ModelSpec s;
    s.in_channels = 1 + aux().channel_count();
    s.hidden_channels = hidden_channels;
    s.depth = depth;
    s.kernel_size = kernel_size;
    s.padding_mode = padding;
    s.predict_delta = predict_delta;
    s.linear_skip = linear_skip;
    s.state_scale = state_scale;
    return s;
}

AuxChannelSpec ExperimentConfig::aux() const {
    AuxChannelSpec a;
    a.mode = aux_mode;
    a.pe_frequencies = pe_frequencies;
    a.include_forcing = include_forcing;
    return a;
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig t;
    t.factors = factors;
    t.lr0 = lr0;
    t.lr_decay = lr_decay;
    t.decay_every = decay_every;
    t.batch_size = batch_size;
    t.iterations = iterations;
    t.clip_norm = clip_norm;
    t.pool.mode = pool_mode;
    t.pool.enrich = enrich;
    t.pool.threshold = enrich_threshold;
    t.pool.window = enrich_window;
    t.pool.samples = enrich_samples;
    t.pool.max_size = pool_max;
    t.pool.correct = correct;
    return t;
}

std::vector<double> ExperimentConfig::forcing_field() const {
    if (forcing == "none") return {};
    std::vector<double> f(height * width);
    for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c) {
            const double a = 2.0 * std::numbers::pi * (static_cast<double>(c) + static_cast<double>(r)) * dx;
            f[r * width + c] = 0.1 * std::sin(a) + std::cos(a);
        }
    return f;
}

ResidualOperator ExperimentConfig::residual_operator() const {
    const OracleConfig o = oracle();
    if (equation == Equation::diffusion) return ResidualOperator::diffusion(grid(), o.diffusion_residual(grid()));
    return ResidualOperator::navier_stokes(grid(), o.ns_residual(grid()));
}

StaggerProblem ExperimentConfig::problem() const {
    ResidualOperator op = residual_operator();
    std::optional<Tensor> forcing_state;
    if (include_forcing) {
        const Field full(grid(), forcing_field());
        forcing_state = op.to_state(full);
    }
    auto contexts = make_subtask_contexts(op.state_grid(), factors, aux(), forcing_state);
    return {std::move(op), factors, std::move(contexts), oracle()};
}

} // namespace nstagger
