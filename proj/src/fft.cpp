#include "pianolab/fft.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>

namespace pianolab::dsp {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 Cooley-Tukey. n must be a power of two.
void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        cplx u = a[i + j];
        cplx t = a[i + j + len / 2] * w;
        a[i + j] = u + t;
        a[i + j + len / 2] = u - t;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

// Bluestein's algorithm: DFT of arbitrary length via a convolution of
// power-of-two size. Chirp exponents are reduced mod 2n in integers to
// keep the angles accurate for large n.
std::vector<cplx> fft_bluestein(const std::vector<cplx>& x, bool inverse) {
  const std::size_t n = x.size();
  const std::size_t m = next_pow2(2 * n - 1);
  const double sign = inverse ? 1.0 : -1.0;

  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % (2 * n);
    const double ang = sign * kPi * static_cast<double>(k2) / static_cast<double>(n);
    chirp[k] = cplx(std::cos(ang), std::sin(ang));
  }

  std::vector<cplx> a(m, cplx(0.0, 0.0));
  std::vector<cplx> b(m, cplx(0.0, 0.0));
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);

  fft_pow2(a, false);
  fft_pow2(b, false);
  for (std::size_t k = 0; k < m; ++k) a[k] *= b[k];
  fft_pow2(a, true);

  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * chirp[k];
  if (inverse) {
    const double s = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= s;
  }
  return out;
}

}  // namespace

std::vector<cplx> fft(std::vector<cplx> x) {
  if (x.size() <= 1) return x;
  if (is_pow2(x.size())) {
    fft_pow2(x, false);
    return x;
  }
  return fft_bluestein(x, false);
}

std::vector<cplx> ifft(std::vector<cplx> x) {
  if (x.size() <= 1) return x;
  if (is_pow2(x.size())) {
    fft_pow2(x, true);
    return x;
  }
  return fft_bluestein(x, true);
}

std::vector<double> real_fft_magnitude(const std::vector<double>& frame) {
  std::vector<cplx> buf(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = cplx(frame[i], 0.0);
  buf = fft(std::move(buf));
  std::vector<double> mag(frame.size() / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(buf[k]);
  return mag;
}

}  // namespace pianolab::dsp
