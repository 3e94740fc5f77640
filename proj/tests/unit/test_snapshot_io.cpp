#include "doctest.h"

#include "nstagger/errors.hpp"
#include "nstagger/snapshot_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace nstagger;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "nstagger_unit" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("2x2 snapshot round trip and byte layout") {
    const Field f({2, 2, 0.5, Boundary::periodic}, {1.5, -2.0, 0.0, 3.25});
    const auto bytes = encode_snapshot({{2, 2}, {f.values().begin(), f.values().end()}});
    // magic + version + ndim + 2 dims + dtype + 4 doubles
    CHECK(bytes.size() == 4 + 4 + 4 + 16 + 1 + 32);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NSTG");
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 2);

    const fs::path dir = scratch("small");
    save_field(f, dir / "f.nstg");
    const Field g = load_field(dir / "f.nstg", f.grid(), 0.0);
    CHECK(bit_equal(g.values(), f.values()));
    CHECK(load_field(dir / "f.nstg").grid().dx == doctest::Approx(0.5));
}

TEST_CASE("snapshot format errors") {
    auto bytes = encode_snapshot({{3}, {1.0, 2.0, 3.0}});
    auto bad = bytes;
    bad[0] = 'X';
    try {
        decode_snapshot(bad);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 0);
        CHECK(e.category() == "format");
    }
    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(decode_snapshot(truncated), FormatError);
    auto version = bytes;
    version[4] = 7;
    CHECK_THROWS_AS(decode_snapshot(version), FormatError);
    CHECK_THROWS_AS(load_field(scratch("missing") / "none.nstg"), FormatError);
    CHECK_THROWS_AS(encode_snapshot({{2, 2}, {1.0}}), DimensionError);
}

TEST_CASE("64x64 random field digest survives the round trip") {
    std::mt19937_64 rng(64);
    std::normal_distribution<double> n;
    std::vector<double> v(64 * 64);
    for (auto& x : v) x = n(rng);
    const Field f({64, 64, 1.0 / 64, Boundary::periodic}, v);
    const fs::path dir = scratch("big");
    save_field(f, dir / "a.nstg");
    const Field g = load_field(dir / "a.nstg");
    save_field(g, dir / "b.nstg");
    CHECK(file_digest(dir / "a.nstg") == file_digest(dir / "b.nstg"));
    CHECK(bit_equal(f.values(), g.values()));
    CHECK_THROWS_AS(load_field(dir / "a.nstg", GridSpec{32, 32, 1.0}), DimensionError);
}

TEST_CASE("digest is FNV-1a") {
    // Published FNV-1a 64 test vectors.
    CHECK(bytes_digest({}) == 0xcbf29ce484222325ULL);
    CHECK(bytes_digest({'a'}) == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("sequence manifest round trip") {
    const GridSpec g{4, 4, 0.25, Boundary::periodic};
    FieldSequence s;
    s.dt = 0.1;
    for (std::size_t k = 0; k < 3; ++k) {
        std::vector<double> v(16, static_cast<double>(k) + 0.5);
        s.frames.emplace_back(g, v, 0.3 + 0.1 * static_cast<double>(k));
    }
    const fs::path dir = scratch("seq");
    const fs::path manifest = save_sequence(s, dir / "out", "frame");
    CHECK(manifest.filename() == "frame.manifest");
    const FieldSequence back = load_sequence(manifest, g);
    REQUIRE(back.size() == 3);
    CHECK(back.dt == doctest::Approx(0.1));
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(bit_equal(back[k].values(), s[k].values()));
        CHECK(same_time(back[k].time(), s[k].time()));
    }
    std::ofstream(dir / "bad.manifest") << "only_a_path\n";
    CHECK_THROWS_AS(load_sequence(dir / "bad.manifest"), FormatError);
}
