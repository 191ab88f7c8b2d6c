#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace cbf::fft {

using cplx = std::complex<double>;

// Mixed-radix DFT for any length. Prime factors above 5 fall back to a
// direct O(p^2) butterfly, so prime lengths are quadratic.
std::vector<cplx> forward(std::span<const cplx> input);
// Normalized inverse: inverse(forward(x)) == x up to rounding.
std::vector<cplx> inverse(std::span<const cplx> input);

// Half spectrum of a real series: n/2 + 1 bins.
std::vector<cplx> rfft(std::span<const double> input);
// Real series of length n from its half spectrum.
std::vector<double> irfft(std::span<const cplx> half_spectrum, std::size_t n);

// r[tau] = sum_t a[(t + tau) mod n] * b[t]
std::vector<double> circular_cross_correlation(std::span<const double> a,
                                               std::span<const double> b);

}  // namespace cbf::fft
