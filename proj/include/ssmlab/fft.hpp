#pragma once

#include <Eigen/Dense>

#include <complex>
#include <vector>

#include "ssmlab/tensor.hpp"

namespace ssmlab {

/// Half spectrum of a real signal. The signal is zero-padded to the next
/// power of two before the transform; padded_length keeps the frequency axis
/// (cycles/sample, f_m = m / padded_length) correct.
struct Spectrum {
  Eigen::VectorXcd bins;     // floor(padded_length/2) + 1 entries
  Index padded_length = 0;   // power of two
  Index signal_length = 0;   // original L

  double frequency(Index m) const { return static_cast<double>(m) / static_cast<double>(padded_length); }
};

Index next_pow2(Index n);

/// In-place iterative radix-2 transform; size must be a power of two.
/// inverse=true applies the 1/n-scaled inverse.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

/// DFT bins 0..P/2 of the zero-padded signal: bin m = sum_t x[t] exp(-2*pi*i*m*t/P).
Spectrum fft_real(const Eigen::Ref<const Eigen::VectorXd>& signal);

/// Inverse of fft_real: reconstructs the first `length` samples.
Eigen::VectorXd ifft_real(const Spectrum& spectrum, Index length);

}  // namespace ssmlab
