#include "aad/fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <mutex>

namespace aad {
namespace {

std::mutex g_plan_mutex;

struct PlanCache {
  std::map<int64_t, fftw_plan> fwd, inv, r2c;
  ~PlanCache() {
    for (auto& [n, p] : fwd) fftw_destroy_plan(p);
    for (auto& [n, p] : inv) fftw_destroy_plan(p);
    for (auto& [n, p] : r2c) fftw_destroy_plan(p);
  }
};
PlanCache g_plans;

fftw_plan plan_c2c(int64_t n, bool inverse) {
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto& cache = inverse ? g_plans.inv : g_plans.fwd;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  fftw_complex* buf = fftw_alloc_complex(static_cast<size_t>(n));
  fftw_plan p = fftw_plan_dft_1d(int(n), buf, buf, inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                 FFTW_ESTIMATE);
  fftw_free(buf);
  cache[n] = p;
  return p;
}

fftw_plan plan_r2c(int64_t n) {
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto it = g_plans.r2c.find(n);
  if (it != g_plans.r2c.end()) return it->second;
  double* in = fftw_alloc_real(static_cast<size_t>(n));
  fftw_complex* out = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
  fftw_plan p = fftw_plan_dft_r2c_1d(int(n), in, out, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  g_plans.r2c[n] = p;
  return p;
}

}  // namespace

std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& x,
                                      bool inverse) {
  const int64_t n = int64_t(x.size());
  fftw_plan p = plan_c2c(n, inverse);
  fftw_complex* buf = fftw_alloc_complex(static_cast<size_t>(n));
  std::memcpy(buf, x.data(), size_t(n) * sizeof(fftw_complex));
  fftw_execute_dft(p, buf, buf);
  std::vector<std::complex<double>> out(static_cast<size_t>(n));
  std::memcpy(out.data(), buf, size_t(n) * sizeof(fftw_complex));
  fftw_free(buf);
  if (inverse)
    for (auto& v : out) v /= double(n);
  return out;
}

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
  const int64_t n = int64_t(x.size());
  fftw_plan p = plan_r2c(n);
  double* in = fftw_alloc_real(static_cast<size_t>(n));
  fftw_complex* outb = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
  std::memcpy(in, x.data(), size_t(n) * sizeof(double));
  fftw_execute_dft_r2c(p, in, outb);
  std::vector<std::complex<double>> out(static_cast<size_t>(n / 2 + 1));
  std::memcpy(out.data(), outb, size_t(n / 2 + 1) * sizeof(fftw_complex));
  fftw_free(in);
  fftw_free(outb);
  return out;
}

}  // namespace aad
