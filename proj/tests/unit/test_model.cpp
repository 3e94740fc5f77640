#include "doctest.h"

#include "nstagger/errors.hpp"
#include "nstagger/model.hpp"
#include "nstagger/residuals.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>

using namespace nstagger;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    std::vector<double> v(numel(s));
    for (auto& x : v) x = n(rng);
    return Tensor::from(std::move(s), std::move(v));
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

ModelSpec small_spec(std::size_t in = 1) {
    ModelSpec s;
    s.in_channels = in;
    s.hidden_channels = 6;
    s.depth = 2;
    return s;
}

} // namespace

TEST_CASE("spec validation and layout") {
    ModelSpec s = small_spec();
    s.kernel_size = 4;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.kernel_size = 3;
    s.depth = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    const auto layers = conv_layers(small_spec(3));
    REQUIRE(layers.size() == 4); // two hidden, output, skip
    CHECK(layers[0].in_channels == 3);
    CHECK(layers[2].out_channels == 1);
    const ModelParams p = ModelParams::initialize(small_spec(), 1);
    std::size_t count = 0;
    for (const auto& [name, shape] : parameter_layout(small_spec())) count += numel(shape);
    CHECK(p.parameter_count() == count);
}

TEST_CASE("fresh model is the identity") {
    const ModelParams p = ModelParams::initialize(small_spec(3), 2);
    const Tensor x = random_tensor({3, 8, 8}, 3);
    const Tensor y = forward(p, x);
    REQUIRE(y.shape() == Shape{1, 8, 8});
    CHECK(std::memcmp(y.data().data(), x.data().data(), 64 * sizeof(double)) == 0);
}

TEST_CASE("forward is deterministic and shift-equivariant under periodic padding") {
    const ModelParams p = ModelParams::random(small_spec(), 4, 0.4);
    const Tensor x = random_tensor({1, 8, 8}, 5);
    CHECK(bit_equal(forward(p, x), forward(p, x)));
    for (auto [axis, off] : {std::pair{std::size_t{1}, 3L}, std::pair{std::size_t{2}, -2L}}) {
        const Tensor a = forward(p, circular_shift(x, axis, off));
        const Tensor b = circular_shift(forward(p, x), axis, off);
        CHECK(bit_equal(a, b));
    }
}

TEST_CASE("ensemble_forward equals serial forwards") {
    const ModelParams p = ModelParams::random(small_spec(), 6, 0.3);
    const StaggerFactors f{2, 2, 1};
    std::vector<SubtaskInput> in;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) in.push_back({i, j, 0, random_tensor({1, 4, 4}, 10 + i * 2 + j)});
    WorkerPool pool(3);
    const auto out = ensemble_forward(p, in, f, pool);
    REQUIRE(out.size() == 4);
    for (std::size_t q = 0; q < 4; ++q) CHECK(bit_equal(out[q], reshape(forward(p, in[q].input), {4, 4})));

    WorkerPool one(1);
    const auto single = ensemble_forward(p, {in[0]}, {1, 1, 1}, one);
    CHECK(bit_equal(single[0], out[0]));
    in.push_back(in[0]);
    CHECK_THROWS_AS(ensemble_forward(p, in, f, pool), LayoutError);
}

TEST_CASE("positional channels") {
    const GridSpec g{4, 4, 0.25, Boundary::periodic};
    const AuxChannelSpec coords{AuxMode::normalized_coords, 4, false};
    const auto ch = positional_channels(g, 0, 0, {1, 1, 1}, coords);
    REQUIRE(ch.size() == 2);
    const double grid[4] = {0.0, 0.25, 0.5, 0.75};
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(ch[0].data()[r * 4 + c] == grid[r]);
            CHECK(ch[1].data()[r * 4 + c] == grid[c]);
        }
    const auto a = positional_channels(g, 0, 0, {2, 2, 1}, coords);
    const auto b = positional_channels(g, 1, 0, {2, 2, 1}, coords);
    for (std::size_t q = 0; q < 4; ++q) {
        CHECK(b[0].data()[q] - a[0].data()[q] == doctest::Approx(0.25));
        CHECK(b[1].data()[q] == a[1].data()[q]);
    }
    const AuxChannelSpec pe{AuxMode::sinusoidal_pe, 2, false};
    CHECK(pe.channel_count() == 8);
    const auto s = positional_channels(g, 0, 0, {1, 1, 1}, pe);
    REQUIRE(s.size() == 8);
    for (std::size_t q = 0; q < 16; ++q) {
        CHECK(s[0].data()[q] == doctest::Approx(std::sin(2.0 * std::numbers::pi * grid[q / 4])));
        CHECK(s[2].data()[q] == doctest::Approx(std::sin(2.0 * std::numbers::pi * grid[q % 4])));
    }
}

TEST_CASE("discrete curl") {
    const std::size_t n = 8;
    const double dx = 0.1;
    const GridSpec walled{n, n, dx, Boundary::dirichlet_lid};
    std::vector<double> vx(n * n), vy(n * n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            vx[r * n + c] = -static_cast<double>(r) * dx;
            vy[r * n + c] = static_cast<double>(c) * dx;
        }
    const Field w = discrete_curl(Field(walled, vx), Field(walled, vy));
    for (std::size_t r = 1; r + 1 < n; ++r)
        for (std::size_t c = 1; c + 1 < n; ++c) CHECK(w(r, c) == doctest::Approx(2.0));

    const GridSpec per{n, n, dx, Boundary::periodic};
    const Field c0 = discrete_curl(Field(per, std::vector<double>(n * n, 1.0)), Field(per, std::vector<double>(n * n, -2.0)));
    for (double v : c0.values()) CHECK(v == doctest::Approx(0.0));
    const Tensor rx = random_tensor({n, n}, 7), ry = random_tensor({n, n}, 8);
    const Tensor wr = discrete_curl(rx, ry, dx, Boundary::periodic);
    double s = 0.0;
    for (double v : wr.data()) s += v * dx * dx;
    CHECK(std::abs(s) < 1e-13);
}

TEST_CASE("subtask contexts assemble state and aux channels") {
    const GridSpec g{8, 8, 0.125, Boundary::periodic};
    const AuxChannelSpec aux{AuxMode::normalized_coords, 4, true};
    const Tensor forcing = random_tensor({8, 8}, 9);
    const auto ctx = make_subtask_contexts(g, {2, 2, 2}, aux, forcing);
    REQUIRE(ctx.size() == 4);
    const Tensor state = random_tensor({4, 4}, 10);
    const Tensor in = ctx[3].assemble(state);
    CHECK(in.shape() == Shape{4, 4, 4});
    CHECK(in.data()[3 * 16] == forcing.data()[1 * 8 + 1]);
}

TEST_CASE("checkpoint round trip") {
    const ModelParams p = ModelParams::random(small_spec(2), 11, 0.3);
    const auto dir = std::filesystem::temp_directory_path() / "nstagger_unit" / "ckpt";
    std::filesystem::remove_all(dir);
    save_checkpoint(p, dir);
    const ModelParams q = load_checkpoint(dir);
    CHECK(q.spec().in_channels == 2);
    REQUIRE(q.tensors().size() == p.tensors().size());
    for (std::size_t k = 0; k < p.tensors().size(); ++k) {
        CHECK(q.tensors()[k].name == p.tensors()[k].name);
        CHECK(bit_equal(q.tensors()[k].value, p.tensors()[k].value));
    }
    CHECK_THROWS(p.get("no.such.tensor"));
}

TEST_CASE("explicit diffusion mock reproduces one explicit step") {
    const GridSpec g{8, 8, 0.125, Boundary::periodic};
    const double dt = 0.2 * g.dx * g.dx;
    const ModelParams p = explicit_diffusion_params(small_spec(), dt, g.dx);
    const Tensor u = random_tensor({8, 8}, 12);
    const Tensor y = reshape(forward(p, reshape(u, {1, 8, 8})), {8, 8});
    const Tensor want = add(u, scale(laplacian_periodic(u, g.dx), dt));
    for (std::size_t q = 0; q < 64; ++q) CHECK(y.data()[q] == doctest::Approx(want.data()[q]).epsilon(1e-13));
}
