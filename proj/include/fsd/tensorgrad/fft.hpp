#pragma once

#include <complex>
#include <cstddef>
#include <vector>

// Real 2D transforms on row-major [h, w] arrays.
//
// Half-spectrum convention: the forward transform keeps columns
// ky = 0 .. w/2 of the unnormalized DFT, giving an [h, w/2 + 1] complex array.
// Columns ky = 0 and ky = w/2 are self-conjugate in kx; the inverse first
// projects them onto Hermitian symmetry, so it is well defined (and real-linear)
// for any half-spectrum input.
namespace fsd::tg::fft {

using cplx = std::complex<double>;

constexpr std::size_t half_width(std::size_t w) { return w / 2 + 1; }

/// Multiplicity of half-spectrum column `ky` in the full spectrum (1 or 2).
constexpr double column_weight(std::size_t ky, std::size_t w) {
  return (ky == 0 || 2 * ky == w) ? 1.0 : 2.0;
}

/// Unnormalized forward DFT of a real [h, w] array into [h, w/2+1].
void rfft2(const double* in, std::size_t h, std::size_t w, cplx* out);

/// Hermitian-projected, unnormalized inverse DFT of a [h, w/2+1] half spectrum.
/// Equals Re sum_k column_weight(k) * in_k * exp(+i k.x).
void irfft2_raw(const cplx* in, std::size_t h, std::size_t w, double* out);

/// irfft2_raw divided by h*w, the exact inverse of rfft2.
void irfft2(const cplx* in, std::size_t h, std::size_t w, double* out);

/// Signed frequency index of half-spectrum row `kx` for extent h.
constexpr long signed_frequency(std::size_t k, std::size_t n) {
  return 2 * k < n ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

}  // namespace fsd::tg::fft
