#include "nstagger/snapshot_io.hpp"

#include "nstagger/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace nstagger {
namespace {

constexpr char kMagic[4] = {'N', 'S', 'T', 'G'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 0;
constexpr std::uint32_t kMaxDims = 16;

static_assert(std::endian::native == std::endian::little,
              "snapshot writer assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        if (bytes_.size() - pos_ < sizeof(T)) {
            throw FormatError(std::string("truncated snapshot while reading ") + what, pos_);
        }
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::uint64_t pos() const { return pos_; }
    std::uint64_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::uint64_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

} // namespace

std::vector<std::uint8_t> encode_snapshot(const NdArray& array) {
    std::uint64_t count = 1;
    for (auto d : array.dims) count *= d;
    if (count != array.data.size()) {
        throw DimensionError("snapshot dims do not match payload length");
    }
    std::vector<std::uint8_t> out;
    out.reserve(4 + 8 + 8 * array.dims.size() + 1 + 8 * array.data.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(array.dims.size()));
    for (auto d : array.dims) put<std::uint64_t>(out, d);
    put<std::uint8_t>(out, kDtypeF64);
    const auto* p = reinterpret_cast<const std::uint8_t*>(array.data.data());
    out.insert(out.end(), p, p + array.data.size() * sizeof(double));
    return out;
}

NdArray decode_snapshot(const std::vector<std::uint8_t>& bytes) {
    Reader rd(bytes);
    for (int k = 0; k < 4; ++k) {
        const auto pos = rd.pos();
        if (rd.get<char>("magic") != kMagic[k]) throw FormatError("bad magic", pos);
    }
    auto pos = rd.pos();
    const auto version = rd.get<std::uint32_t>("version");
    if (version != kVersion) {
        throw FormatError("unsupported version " + std::to_string(version), pos);
    }
    pos = rd.pos();
    const auto ndim = rd.get<std::uint32_t>("ndim");
    if (ndim > kMaxDims) throw FormatError("too many dimensions", pos);
    NdArray a;
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
        pos = rd.pos();
        const auto d = rd.get<std::uint64_t>("dim");
        if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / sizeof(double) / d) {
            throw FormatError("dimension overflow", pos);
        }
        count *= d;
        a.dims.push_back(d);
    }
    pos = rd.pos();
    if (rd.get<std::uint8_t>("dtype") != kDtypeF64) throw FormatError("unsupported dtype", pos);
    if (rd.remaining() != count * sizeof(double)) {
        throw FormatError("payload holds " + std::to_string(rd.remaining()) + " bytes, expected " +
                              std::to_string(count * sizeof(double)),
                          rd.pos());
    }
    a.data.resize(count);
    std::memcpy(a.data.data(), bytes.data() + rd.pos(), count * sizeof(double));
    return a;
}

void save_array(const NdArray& array, const std::filesystem::path& path) {
    write_file(path, encode_snapshot(array));
}

NdArray load_array(const std::filesystem::path& path) { return decode_snapshot(read_file(path)); }

void save_field(const Field& field, const std::filesystem::path& path) {
    NdArray a{{field.height(), field.width()},
              std::vector<double>(field.values().begin(), field.values().end())};
    save_array(a, path);
}

Field load_field(const std::filesystem::path& path, std::optional<GridSpec> grid, double time) {
    NdArray a = load_array(path);
    if (a.dims.size() != 2) {
        throw FormatError("field snapshot must be 2-D, got " + std::to_string(a.dims.size()) +
                              " dims",
                          8);
    }
    GridSpec g;
    if (grid) {
        g = *grid;
        if (g.height != a.dims[0] || g.width != a.dims[1]) {
            throw DimensionError("snapshot shape does not match the expected grid");
        }
    } else {
        g.height = a.dims[0];
        g.width = a.dims[1];
        g.dx = 1.0 / static_cast<double>(g.width);
    }
    return Field(g, std::move(a.data), time);
}

std::filesystem::path save_sequence(const FieldSequence& seq, const std::filesystem::path& dir,
                                    const std::string& stem) {
    std::filesystem::create_directories(dir);
    const auto manifest = dir / (stem + ".manifest");
    std::ofstream out(manifest, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + manifest.string());
    for (std::size_t k = 0; k < seq.size(); ++k) {
        std::ostringstream name;
        name << stem << '_' << std::setw(4) << std::setfill('0') << k << ".nstg";
        save_field(seq.frames[k], dir / name.str());
        out << name.str() << ' ' << std::setprecision(17) << seq.frames[k].time() << '\n';
    }
    return manifest;
}

FieldSequence load_sequence(const std::filesystem::path& manifest, std::optional<GridSpec> grid) {
    std::ifstream in(manifest);
    if (!in) throw FormatError("cannot open manifest " + manifest.string(), 0);
    FieldSequence seq;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string rel;
        double t = 0.0;
        if (!(ls >> rel >> t)) throw FormatError("malformed manifest line: " + line, 0);
        seq.frames.push_back(load_field(manifest.parent_path() / rel, grid, t));
    }
    if (seq.size() > 1) seq.dt = seq.frames[1].time() - seq.frames[0].time();
    return seq;
}

std::uint64_t bytes_digest(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t file_digest(const std::filesystem::path& path) {
    return bytes_digest(read_file(path));
}

} // namespace nstagger
