#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace pianolab::dsp {

using cplx = std::complex<double>;

/// Forward DFT of arbitrary length. Radix-2 when n is a power of two,
/// Bluestein's chirp-z otherwise, so padded frame sizes like 3*4096 work.
std::vector<cplx> fft(std::vector<cplx> x);

/// Inverse DFT (includes the 1/n factor).
std::vector<cplx> ifft(std::vector<cplx> x);

/// Magnitudes of the first n/2+1 bins of the DFT of a real frame.
std::vector<double> real_fft_magnitude(const std::vector<double>& frame);

}  // namespace pianolab::dsp
