#include "nstagger/fft.hpp"

#include "nstagger/errors.hpp"

#include <unsupported/Eigen/FFT>

namespace nstagger::fft {

void transform(std::span<cplx> data, bool inverse) {
    const std::size_t n = data.size();
    if (n < 2) return; // length-1 DFT is the identity
    Eigen::FFT<double> engine;
    engine.SetFlag(Eigen::FFT<double>::Unscaled);
    std::vector<cplx> out(n);
    if (inverse) {
        engine.inv(out.data(), data.data(), static_cast<Eigen::Index>(n));
    } else {
        engine.fwd(out.data(), data.data(), static_cast<Eigen::Index>(n));
    }
    std::copy(out.begin(), out.end(), data.begin());
}

void transform2d(std::vector<cplx>& data, std::size_t h, std::size_t w, bool inverse) {
    if (data.size() != h * w) throw DimensionError("transform2d: size mismatch");
    for (std::size_t r = 0; r < h; ++r) transform(std::span(data).subspan(r * w, w), inverse);
    std::vector<cplx> col(h);
    for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t r = 0; r < h; ++r) col[r] = data[r * w + c];
        transform(col, inverse);
        for (std::size_t r = 0; r < h; ++r) data[r * w + c] = col[r];
    }
}

} // namespace nstagger::fft
