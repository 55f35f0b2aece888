#include "ssmlab/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmlab {

Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw std::invalid_argument("fft_inplace: size " + std::to_string(n) + " is not a power of two");
  }
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv_n;
  }
}

Spectrum fft_real(const Eigen::Ref<const Eigen::VectorXd>& signal) {
  const Index length = signal.size();
  if (length < 1) throw std::invalid_argument("empty-signal");
  const Index padded = next_pow2(length);

  std::vector<std::complex<double>> buf(static_cast<std::size_t>(padded), {0.0, 0.0});
  for (Index t = 0; t < length; ++t) buf[static_cast<std::size_t>(t)] = {signal[t], 0.0};
  fft_inplace(buf, /*inverse=*/false);

  Spectrum spec;
  spec.padded_length = padded;
  spec.signal_length = length;
  spec.bins.resize(padded / 2 + 1);
  for (Index m = 0; m <= padded / 2; ++m) spec.bins[m] = buf[static_cast<std::size_t>(m)];
  return spec;
}

Eigen::VectorXd ifft_real(const Spectrum& spectrum, Index length) {
  if (length < 1) throw std::invalid_argument("ifft_real: length must be positive");
  const Index padded = spectrum.padded_length;
  if (padded < 1 || (padded & (padded - 1)) != 0) {
    throw std::invalid_argument("ifft_real: padded_length " + std::to_string(padded) +
                                " is not a power of two");
  }
  if (spectrum.bins.size() != padded / 2 + 1) {
    throw std::invalid_argument("ifft_real: expected " + std::to_string(padded / 2 + 1) +
                                " bins for padded length " + std::to_string(padded) + ", got " +
                                std::to_string(spectrum.bins.size()));
  }
  if (length > padded) {
    throw std::invalid_argument("ifft_real: requested length " + std::to_string(length) +
                                " exceeds padded length " + std::to_string(padded));
  }

  // Rebuild the full conjugate-symmetric spectrum and invert.
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(padded));
  for (Index m = 0; m <= padded / 2; ++m) buf[static_cast<std::size_t>(m)] = spectrum.bins[m];
  for (Index m = padded / 2 + 1; m < padded; ++m) {
    buf[static_cast<std::size_t>(m)] = std::conj(spectrum.bins[padded - m]);
  }
  fft_inplace(buf, /*inverse=*/true);

  Eigen::VectorXd out(length);
  for (Index t = 0; t < length; ++t) out[t] = buf[static_cast<std::size_t>(t)].real();
  return out;
}

}  // namespace ssmlab
