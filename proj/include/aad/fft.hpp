#ifndef AAD_FFT_HPP
#define AAD_FFT_HPP

#include <complex>
#include <vector>

namespace aad {

// Thin wrappers over FFTW (double precision). Plans are cached per size and
// creation is serialized; execution on caller-owned buffers is thread-safe.
std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& x,
                                      bool inverse);

// real-to-complex, returns n/2 + 1 bins
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

}  // namespace aad

#endif  // AAD_FFT_HPP
