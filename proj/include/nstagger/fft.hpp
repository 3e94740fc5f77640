#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace nstagger::fft {

using cplx = std::complex<double>;

/// In-place DFT (Eigen's FFT module), unnormalized in both directions:
/// forward X_k = sum_n x_n e^{-2 pi i k n / N}, inverse uses e^{+...}.
void transform(std::span<cplx> data, bool inverse);

/// Row-major 2-D transform of an h x w array, same conventions.
void transform2d(std::vector<cplx>& data, std::size_t h, std::size_t w, bool inverse);

} // namespace nstagger::fft
