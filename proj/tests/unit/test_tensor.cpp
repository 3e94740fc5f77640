#include "doctest.h"

#include "nstagger/errors.hpp"
#include "nstagger/tensor.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace nstagger;

namespace {

std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_tensor(Shape s, std::uint64_t seed, bool grad = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    std::vector<double> v(numel(s));
    for (auto& x : v) x = n(rng);
    return Tensor::from(std::move(s), std::move(v), grad);
}

} // namespace

TEST_CASE("circular_shift example") {
    const Tensor x = Tensor::from({1, 4}, {1, 2, 3, 4});
    CHECK(to_vec(circular_shift(x, 1, 1)) == std::vector<double>{4, 1, 2, 3});
    CHECK(to_vec(circular_shift(x, 1, -1)) == std::vector<double>{2, 3, 4, 1});
    CHECK(to_vec(circular_shift(x, 1, 4)) == to_vec(x));
}

TEST_CASE("conv2d of a constant with a unit-sum kernel is the constant") {
    const Tensor x = Tensor::full({1, 5, 7}, 2.5);
    std::vector<double> k(9);
    double s = 0.0;
    for (std::size_t q = 0; q < 9; ++q) s += (k[q] = 1.0 + static_cast<double>(q));
    for (auto& v : k) v /= s;
    const Tensor y = conv2d(x, Tensor::from({1, 1, 3, 3}, k), PadMode::periodic);
    for (double v : y.data()) CHECK(v == doctest::Approx(2.5).epsilon(1e-14));
    const Tensor z = conv2d(Tensor::zeros({1, 3, 3}), random_tensor({1, 1, 3, 3}, 1), PadMode::zero);
    for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d matches a direct correlation") {
    const Tensor x = random_tensor({2, 4, 5}, 2);
    const Tensor k = random_tensor({3, 2, 3, 3}, 3);
    const Tensor y = conv2d(x, k, PadMode::periodic);
    REQUIRE(y.shape() == Shape{3, 4, 5});
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 5; ++c) {
                double want = 0.0;
                for (std::size_t i = 0; i < 2; ++i)
                    for (std::size_t a = 0; a < 3; ++a)
                        for (std::size_t b = 0; b < 3; ++b) {
                            const std::size_t rr = (r + 4 + a - 1) % 4, cc = (c + 5 + b - 1) % 5;
                            want += k.data()[((o * 2 + i) * 3 + a) * 3 + b] * x.data()[(i * 4 + rr) * 5 + cc];
                        }
                CHECK(y.data()[(o * 4 + r) * 5 + c] == doctest::Approx(want).epsilon(1e-13));
            }
}

TEST_CASE("pad modes") {
    const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor z = pad(x, 1, PadMode::zero);
    CHECK(z.shape() == Shape{4, 5});
    CHECK(z.data()[0] == 0.0);
    CHECK(z.data()[6] == 1.0);
    const Tensor p = pad(x, 1, PadMode::periodic);
    CHECK(p.data()[0] == 6.0);
    const Tensor r = pad(x, 1, PadMode::reflect);
    CHECK(r.data()[0] == 5.0); // reflect excludes the edge: (-1,-1) -> (1,1)
    CHECK_THROWS_AS(pad(x, 2, PadMode::reflect), ShapeError);
}

TEST_CASE("backward hand examples") {
    const Tensor x = Tensor::from({3}, {1, -2, 3}, true);
    backward(reduce_sum(square(x)));
    CHECK(to_vec(Tensor::from({3}, {x.grad().begin(), x.grad().end()})) == std::vector<double>{2, -4, 6});

    const Tensor y = Tensor::from({5}, {1, 2, 3, 4, 5}, true);
    backward(reduce_mean(y));
    for (double g : y.grad()) CHECK(g == doctest::Approx(0.2));

    // Reused node: d/dx sum(x * x + x) = 2x + 1.
    const Tensor w = Tensor::from({2}, {0.5, -1.5}, true);
    backward(reduce_sum(add(mul(w, w), w)));
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(-2.0));

    CHECK_THROWS_AS(backward(x), ContractError);
    CHECK_THROWS_AS(add(x, y), ShapeError);
}

TEST_CASE("inference builds no graph") {
    const Tensor a = Tensor::from({2}, {1, 2});
    const Tensor b = square(a);
    CHECK_FALSE(b.requires_grad());
    const Tensor c = square(a.detach(true));
    CHECK(c.requires_grad());
}

TEST_CASE("gradient_check examples") {
    const Tensor x = random_tensor({4}, 4, true);
    CHECK(gradient_check([](const Tensor& t) { return reduce_sum(square(t)); }, x) < 1e-7);
    CHECK(gradient_check([](const Tensor& t) { return reduce_mean(gelu(t)); }, x) < 1e-4);

    const Tensor in = random_tensor({1, 8, 8}, 5);
    const Tensor k = random_tensor({2, 1, 3, 3}, 6);
    const auto rep = gradient_check(
        [](const std::vector<Tensor>& l) { return reduce_mean(gelu(conv2d(l[0], l[1], PadMode::zero))); },
        {in.detach(true), k.detach(true)});
    CHECK(rep.finite);
    CHECK(rep.max_deviation < 1e-4);
    CHECK(rep.coordinates == 64 + 18);

    // A frozen leaf is skipped.
    const auto frozen = gradient_check(
        [](const std::vector<Tensor>& l) { return reduce_sum(mul(l[0], l[1])); },
        {random_tensor({3}, 7, true), random_tensor({3}, 8, false)});
    CHECK(frozen.coordinates == 3);
}

TEST_CASE("gelu and tanh values") {
    const Tensor x = Tensor::from({3}, {-1.0, 0.0, 2.0});
    const Tensor g = gelu(x);
    for (std::size_t i = 0; i < 3; ++i) {
        const double v = x.data()[i];
        const double inner = std::sqrt(2.0 / std::numbers::pi) * (v + 0.044715 * v * v * v);
        CHECK(g.data()[i] == doctest::Approx(0.5 * v * (1.0 + std::tanh(inner))).epsilon(1e-14));
        // Within 2e-4 of the exact erf form.
        CHECK(std::abs(g.data()[i] - 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)))) < 2e-4);
    }
    CHECK(nstagger::tanh(x).data()[2] == doctest::Approx(std::tanh(2.0)));
}

TEST_CASE("subsample and stagger_merge are inverse") {
    const Tensor x = random_tensor({4, 6}, 9);
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) parts.push_back(subsample(x, 2, 3, i, j));
    CHECK(parts[4].data()[0] == x.data()[1 * 6 + 1]);
    CHECK(to_vec(stagger_merge(parts, 2, 3)) == to_vec(x));
    parts.pop_back();
    CHECK_THROWS_AS(stagger_merge(parts, 2, 3), LayoutError);
}

TEST_CASE("channel helpers") {
    const Tensor a = random_tensor({2, 3, 3}, 10);
    const Tensor b = random_tensor({3, 3}, 11);
    const Tensor c = concat_channels({a, b});
    CHECK(c.shape() == Shape{3, 3, 3});
    CHECK(to_vec(slice_channels(c, 2, 3)) == to_vec(b));
    const Tensor bias = Tensor::from({2}, {1.0, -1.0});
    const Tensor ab = add_channel_bias(a, bias);
    CHECK(ab.data()[0] == doctest::Approx(a.data()[0] + 1.0));
    CHECK(ab.data()[9] == doctest::Approx(a.data()[9] - 1.0));
    CHECK(slice2d(a, 1, 3, 0, 2).shape() == Shape{2, 2, 2});
    CHECK_THROWS_AS(reshape(a, {4, 4}), ShapeError);
}
