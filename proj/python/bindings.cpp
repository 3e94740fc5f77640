// Python bindings: numpy in and out, library errors raised as nstagger.Error.

#include "nstagger/analysis.hpp"
#include "nstagger/errors.hpp"
#include "nstagger/experiment.hpp"
#include "nstagger/reference_solvers.hpp"
#include "nstagger/residuals.hpp"
#include "nstagger/snapshot_io.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace nstagger;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Boundary parse_boundary(const std::string& b) {
    if (b == "periodic") return Boundary::periodic;
    if (b == "dirichlet") return Boundary::dirichlet_lid;
    throw ConfigError("boundary must be 'periodic' or 'dirichlet', got '" + b + "'");
}

TimeScheme parse_scheme(const std::string& s) {
    if (s == "crank_nicolson") return TimeScheme::crank_nicolson;
    if (s == "explicit") return TimeScheme::explicit_euler;
    throw ConfigError("scheme must be 'crank_nicolson' or 'explicit', got '" + s + "'");
}

Field to_field(const Array& a, double dx, Boundary boundary = Boundary::periodic, double time = 0.0) {
    if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
    const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
    return Field({h, w, dx, boundary}, std::vector<double>(a.data(), a.data() + a.size()), time);
}

Array to_array(const Field& f) {
    Array out({f.height(), f.width()});
    std::copy(f.values().begin(), f.values().end(), out.mutable_data());
    return out;
}

Array to_array(const FieldSequence& s) {
    const std::size_t h = s.size() ? s[0].height() : 0, w = s.size() ? s[0].width() : 0;
    Array out({s.size(), h, w});
    double* p = out.mutable_data();
    for (const auto& f : s.frames) p = std::copy(f.values().begin(), f.values().end(), p);
    return out;
}

OracleConfig diffusion_oracle(double dx, double dt, const std::string& scheme) {
    OracleConfig oc;
    oc.dx = dx;
    oc.dt = dt;
    oc.scheme = parse_scheme(scheme);
    return oc;
}

OracleConfig ns_oracle(double dx, double dt, double reynolds, std::optional<Array> forcing) {
    OracleConfig oc;
    oc.equation = Equation::ns_periodic;
    oc.dx = dx;
    oc.dt = dt;
    oc.reynolds = reynolds;
    if (forcing) oc.forcing = std::vector<double>(forcing->data(), forcing->data() + forcing->size());
    return oc;
}

} // namespace

PYBIND11_MODULE(_nstagger, m) {
    m.doc() = "Staggered neural PDE solvers: decomposition, oracles, training and analyses";
    m.attr("__version__") = kVersion;

    static const py::handle error = py::exception<Error>(m, "Error", PyExc_RuntimeError).release();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetString(error.ptr(), (e.category() + ": " + e.what()).c_str());
        }
    });

    m.def(
        "decompose",
        [](const Array& a, std::size_t s_h, std::size_t s_w) {
            const auto subs = decompose_spatial(to_field(a, 1.0), {s_h, s_w, 1});
            std::vector<Array> out;
            for (const auto& f : subs.subfields) out.push_back(to_array(f));
            return out;
        },
        py::arg("field"), py::arg("s_h"), py::arg("s_w"),
        "Subgrids of a 2-D field in (i, j) order; subgrid (i, j) is field[i::s_h, j::s_w].");
    m.def(
        "reconstruct",
        [](const std::vector<Array>& parts, std::size_t s_h, std::size_t s_w) {
            if (parts.empty()) throw DimensionError("no subgrids given");
            SubfieldArray subs;
            subs.factors = {s_h, s_w, 1};
            for (const auto& p : parts) subs.subfields.push_back(to_field(p, 1.0));
            subs.origin_grid = {subs.subfields[0].height() * s_h, subs.subfields[0].width() * s_w, 1.0,
                                Boundary::periodic};
            return to_array(reconstruct_spatial(subs));
        },
        py::arg("parts"), py::arg("s_h"), py::arg("s_w"));

    m.def(
        "random_field",
        [](std::size_t h, std::size_t w, double dx, double amplitude, double shift, double exponent,
           std::uint64_t seed) {
            RandomFieldSpec s;
            s.grid = {h, w, dx, Boundary::periodic};
            s.amplitude = amplitude;
            s.shift = shift;
            s.exponent = exponent;
            s.seed = seed;
            return to_array(sample_random_field(s));
        },
        py::arg("height"), py::arg("width"), py::arg("dx"), py::arg("amplitude") = 512.0, py::arg("shift") = 64.0,
        py::arg("exponent") = 4.0, py::arg("seed") = 0);

    m.def(
        "solve_diffusion",
        [](const Array& u0, std::size_t steps, double dx, double dt, const std::string& scheme,
           const std::string& boundary) {
            return to_array(solve_diffusion(to_field(u0, dx, parse_boundary(boundary)), steps,
                                            diffusion_oracle(dx, dt, scheme)));
        },
        py::arg("u0"), py::arg("steps"), py::arg("dx"), py::arg("dt"), py::arg("scheme") = "crank_nicolson",
        py::arg("boundary") = "periodic", "Trajectory [steps + 1, H, W].");
    m.def(
        "solve_ns",
        [](const Array& omega0, std::size_t steps, double dx, double dt, double reynolds,
           std::optional<Array> forcing) {
            return to_array(solve_ns(to_field(omega0, dx), steps, ns_oracle(dx, dt, reynolds, forcing)));
        },
        py::arg("omega0"), py::arg("steps"), py::arg("dx"), py::arg("dt"), py::arg("reynolds"),
        py::arg("forcing") = py::none(), "Periodic stream-function trajectory [steps + 1, H, W].");

    m.def(
        "diffusion_residual",
        [](const Array& u, const Array& v, double dx, double dt, const std::string& scheme,
           const std::string& boundary) {
            const Boundary b = parse_boundary(boundary);
            DiffusionResidualConfig cfg{dx, dt, parse_scheme(scheme),
                                        b == Boundary::periodic ? DiffusionBoundary::periodic
                                                                : DiffusionBoundary::dirichlet,
                                        std::nullopt};
            return to_array(diffusion_residual(to_field(u, dx, b), to_field(v, dx, b), cfg));
        },
        py::arg("u_t"), py::arg("u_next"), py::arg("dx"), py::arg("dt"), py::arg("scheme") = "crank_nicolson",
        py::arg("boundary") = "periodic");
    m.def(
        "ns_residual",
        [](const Array& psi, const Array& psi_next, double dx, double dt, double reynolds,
           std::optional<Array> forcing) {
            const auto cfg = ns_oracle(dx, dt, reynolds, forcing).ns_residual(to_field(psi, dx).grid());
            return to_array(ns_vorticity_residual(to_field(psi, dx), to_field(psi_next, dx), cfg));
        },
        py::arg("psi_t"), py::arg("psi_next"), py::arg("dx"), py::arg("dt"), py::arg("reynolds"),
        py::arg("forcing") = py::none());
    m.def(
        "vorticity",
        [](const Array& psi, double dx) { return to_array(vorticity_from_stream(to_field(psi, dx))); },
        py::arg("psi"), py::arg("dx"));

    m.def(
        "relative_error",
        [](const Array& pred, const Array& truth) { return relative_error(to_field(pred, 1.0), to_field(truth, 1.0)); },
        py::arg("pred"), py::arg("truth"));

    m.def(
        "save_field", [](const Array& a, const std::filesystem::path& p) { save_field(to_field(a, 1.0), p); },
        py::arg("field"), py::arg("path"));
    m.def(
        "load_field", [](const std::filesystem::path& p) { return to_array(load_field(p)); }, py::arg("path"));

    m.def(
        "bandwidth_1d",
        [](std::size_t d, double r, bool periodic, std::size_t k_max) {
            return transfer_power_bandwidth(build_transfer_matrix_1d(d, r, periodic, TimeScheme::explicit_euler),
                                            k_max)
                .bandwidth;
        },
        py::arg("d"), py::arg("r"), py::arg("periodic"), py::arg("k_max"),
        "Bandwidths of T^k, k = 1..k_max, for the explicit 1-D diffusion transfer matrix.");

    py::class_<GmacsReport>(m, "GmacsReport")
        .def_readonly("per_subtask", &GmacsReport::per_subtask)
        .def_readonly("total_per_step", &GmacsReport::total_per_step)
        .def_readonly("workers", &GmacsReport::workers)
        .def_readonly("per_card_per_step", &GmacsReport::per_card_per_step)
        .def_readonly("ensemble_steps", &GmacsReport::ensemble_steps)
        .def_readonly("per_card_horizon", &GmacsReport::per_card_horizon)
        .def_readonly("total_horizon", &GmacsReport::total_horizon)
        .def_readonly("fold_reduction", &GmacsReport::fold_reduction);

    py::class_<ExperimentConfig>(m, "Config")
        .def(py::init<>())
        .def_static("parse", &parse_config, py::arg("text"))
        .def_static("load", &load_config, py::arg("path"))
        .def("to_ini", [](const ExperimentConfig& c) { return to_ini(c); })
        .def("validate", &ExperimentConfig::validate)
        .def_readwrite("name", &ExperimentConfig::name)
        .def_readwrite("seed", &ExperimentConfig::seed)
        .def_readwrite("height", &ExperimentConfig::height)
        .def_readwrite("width", &ExperimentConfig::width)
        .def_readwrite("dx", &ExperimentConfig::dx)
        .def_readwrite("dt", &ExperimentConfig::dt)
        .def_readwrite("iterations", &ExperimentConfig::iterations)
        .def_readwrite("horizon", &ExperimentConfig::horizon)
        .def_property(
            "factors", [](const ExperimentConfig& c) { return std::make_tuple(c.factors.s_h, c.factors.s_w, c.factors.s_t); },
            [](ExperimentConfig& c, std::tuple<std::size_t, std::size_t, std::size_t> f) {
                c.factors = {std::get<0>(f), std::get<1>(f), std::get<2>(f)};
            })
        .def("gmacs",
             [](const ExperimentConfig& c, std::size_t horizon) {
                 return count_gmacs(c.model_spec(), c.residual_operator().state_grid(), c.factors, horizon);
             },
             py::arg("horizon"));

    auto ctx = [](std::size_t workers, const char* cmd) { return RunContext{workers, cmd}; };
    m.def(
        "generate", [ctx](const ExperimentConfig& c, const std::filesystem::path& out, std::size_t workers) {
            py::gil_scoped_release nogil;
            cmd_generate(c, out, ctx(workers, "generate"));
        },
        py::arg("config"), py::arg("out"), py::arg("workers") = 1);
    m.def(
        "train", [ctx](const ExperimentConfig& c, const std::filesystem::path& out, std::size_t workers) {
            py::gil_scoped_release nogil;
            cmd_train(c, out, ctx(workers, "train"));
        },
        py::arg("config"), py::arg("out"), py::arg("workers") = 1);
    m.def(
        "evaluate",
        [ctx](const ExperimentConfig& c, const std::filesystem::path& ckpt, const std::filesystem::path& out,
              std::size_t workers) {
            py::gil_scoped_release nogil;
            cmd_evaluate(c, ckpt, out, ctx(workers, "evaluate"));
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("out"), py::arg("workers") = 1);
    m.def(
        "rollout",
        [ctx](const ExperimentConfig& c, const std::filesystem::path& ckpt, const std::filesystem::path& out,
              std::size_t workers) {
            py::gil_scoped_release nogil;
            cmd_rollout(c, ckpt, out, ctx(workers, "rollout"));
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("out"), py::arg("workers") = 1);
    m.def(
        "control",
        [ctx](const ExperimentConfig& c, const std::filesystem::path& ckpt, const std::filesystem::path& out,
              std::size_t workers) {
            py::gil_scoped_release nogil;
            cmd_control(c, ckpt, out, ctx(workers, "control"));
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("out"), py::arg("workers") = 1);
    m.def(
        "analyze",
        [ctx](const ExperimentConfig& c, const std::string& which, const std::filesystem::path& out) {
            py::gil_scoped_release nogil;
            cmd_analyze(c, which, out, ctx(1, "analyze"));
        },
        py::arg("config"), py::arg("which"), py::arg("out"));
}
