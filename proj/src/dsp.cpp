#include "aad/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <functional>
#include <numeric>

#include <Eigen/Dense>

#include "aad/common.hpp"
#include "aad/fft.hpp"

namespace aad {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

std::vector<double> poly_from_roots(const std::vector<std::complex<double>>& roots) {
  std::vector<std::complex<double>> c{1.0};
  for (const auto& r : roots) {
    std::vector<std::complex<double>> next(c.size() + 1, 0.0);
    for (size_t i = 0; i < c.size(); ++i) {
      next[i] += c[i];
      next[i + 1] -= c[i] * r;
    }
    c = std::move(next);
  }
  std::vector<double> out(c.size());
  for (size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

std::vector<double> column(const Tensor<double>& m, int64_t c) {
  std::vector<double> v(static_cast<size_t>(m.dim(0)));
  for (int64_t i = 0; i < m.dim(0); ++i) v[size_t(i)] = m.at(i, c);
  return v;
}

RawSignal per_channel(const RawSignal& sig,
                      const std::function<std::vector<double>(const std::vector<double>&)>& f) {
  std::vector<std::vector<double>> cols;
  for (int64_t c = 0; c < sig.channels(); ++c) cols.push_back(f(column(sig.samples, c)));
  Tensor<double> out({int64_t(cols[0].size()), sig.channels()});
  for (int64_t c = 0; c < sig.channels(); ++c)
    for (int64_t i = 0; i < out.dim(0); ++i) out.at(i, c) = cols[size_t(c)][size_t(i)];
  RawSignal r;
  r.samples = std::move(out);
  r.sample_rate = sig.sample_rate;
  return r;
}

int64_t reflect_index(int64_t i, int64_t n) {
  // mirror without repeating the edge sample
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

double kaiser_i0(double x) {
  // series expansion of the modified Bessel function I0
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 64; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

}  // namespace

RawSignal make_signal(Tensor<double> samples, int64_t sample_rate) {
  require(samples.rank() == 2 && samples.dim(0) >= 1 && samples.dim(1) >= 1,
          "signal: samples must be [n x channels] with n >= 1");
  require(sample_rate > 0, "signal: sample rate must be positive");
  require(all_finite(samples), "signal: samples must be finite");
  RawSignal s;
  s.samples = std::move(samples);
  s.sample_rate = sample_rate;
  return s;
}

RawSignal mono_signal(std::vector<double> samples, int64_t sample_rate) {
  const int64_t n = int64_t(samples.size());
  return make_signal(Tensor<double>({n, 1}, std::move(samples)), sample_rate);
}

FilterCoeffs butterworth(int order, double cutoff_hz, double sample_rate, bool highpass) {
  require(order >= 1, "butterworth: order must be >= 1");
  require(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0,
          "butterworth: cutoff must lie in (0, Nyquist)");
  const double k = 2.0 * sample_rate;
  const double warped = k * std::tan(kPi * cutoff_hz / sample_rate);

  std::vector<std::complex<double>> zpoles, zzeros;
  std::complex<double> gain_num = 1.0, gain_den = 1.0;
  for (int i = 0; i < order; ++i) {
    const double theta = kPi * (2.0 * i + order + 1.0) / (2.0 * order);
    std::complex<double> proto(std::cos(theta), std::sin(theta));
    std::complex<double> s = highpass ? warped / proto : warped * proto;
    zpoles.push_back((k + s) / (k - s));
    zzeros.push_back(highpass ? 1.0 : -1.0);
  }
  const std::complex<double> at = highpass ? -1.0 : 1.0;  // normalization point
  for (int i = 0; i < order; ++i) {
    gain_num *= (at - zpoles[size_t(i)]);
    gain_den *= (at - zzeros[size_t(i)]);
  }
  const double g = (gain_num / gain_den).real();

  FilterCoeffs f;
  f.b = poly_from_roots(zzeros);
  for (auto& v : f.b) v *= g;
  f.a = poly_from_roots(zpoles);
  return f;
}

std::vector<double> lfilter_zi(const FilterCoeffs& f) {
  const int n = int(std::max(f.a.size(), f.b.size()));
  std::vector<double> a(f.a), b(f.b);
  a.resize(size_t(n), 0.0);
  b.resize(size_t(n), 0.0);
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n - 1, n - 1);
  // I - companion(a)^T
  for (int i = 0; i < n - 1; ++i) m(i, 0) += a[size_t(i + 1)];
  for (int i = 0; i < n - 2; ++i) m(i, i + 1) -= 1.0;
  Eigen::VectorXd rhs(n - 1);
  for (int i = 0; i < n - 1; ++i) rhs(i) = b[size_t(i + 1)] - a[size_t(i + 1)] * b[0];
  Eigen::VectorXd zi = m.partialPivLu().solve(rhs);
  std::vector<double> out(static_cast<size_t>(n - 1));
  for (int i = 0; i < n - 1; ++i) out[size_t(i)] = zi(i);
  return out;
}

std::vector<double> lfilter(const FilterCoeffs& f, const std::vector<double>& x,
                            const std::vector<double>& zi_scaled) {
  const size_t n = std::max(f.a.size(), f.b.size());
  std::vector<double> a(f.a), b(f.b), z(zi_scaled);
  a.resize(n, 0.0);
  b.resize(n, 0.0);
  z.resize(n - 1, 0.0);
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double yi = b[0] * xi + z[0];
    for (size_t j = 0; j + 1 < n - 1; ++j) z[j] = b[j + 1] * xi + z[j + 1] - a[j + 1] * yi;
    z[n - 2] = b[n - 1] * xi - a[n - 1] * yi;
    y[i] = yi;
  }
  return y;
}

std::vector<double> filtfilt(const FilterCoeffs& f, const std::vector<double>& x) {
  const int64_t padlen = 3 * int64_t(std::max(f.a.size(), f.b.size()));
  const int64_t n = int64_t(x.size());
  require(n > padlen, "filtfilt: signal shorter than padding");
  std::vector<double> ext;
  ext.reserve(static_cast<size_t>(n + 2 * padlen));
  for (int64_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[size_t(i)]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (int64_t i = 1; i <= padlen; ++i)
    ext.push_back(2.0 * x[size_t(n - 1)] - x[size_t(n - 1 - i)]);

  const std::vector<double> zi = lfilter_zi(f);
  auto scaled = [&](double x0) {
    std::vector<double> z(zi);
    for (auto& v : z) v *= x0;
    return z;
  };
  std::vector<double> y = lfilter(f, ext, scaled(ext.front()));
  std::reverse(y.begin(), y.end());
  y = lfilter(f, y, scaled(y.front()));
  std::reverse(y.begin(), y.end());
  return std::vector<double>(y.begin() + padlen, y.begin() + padlen + n);
}

RawSignal lowpass_filter(const RawSignal& sig, double cutoff_hz) {
  require(cutoff_hz < sig.sample_rate / 2.0, "lowpass_filter: cutoff must be below Nyquist");
  require(cutoff_hz > 0.0, "lowpass_filter: cutoff must be positive");
  const FilterCoeffs f = butterworth(4, cutoff_hz, double(sig.sample_rate), false);
  return per_channel(sig, [&](const std::vector<double>& x) { return filtfilt(f, x); });
}

RawSignal highpass_filter(const RawSignal& sig, double cutoff_hz) {
  require(cutoff_hz > 0.0 && cutoff_hz < sig.sample_rate / 2.0,
          "highpass_filter: cutoff must lie in (0, Nyquist)");
  const FilterCoeffs f = butterworth(4, cutoff_hz, double(sig.sample_rate), true);
  return per_channel(sig, [&](const std::vector<double>& x) { return filtfilt(f, x); });
}

RawSignal resample(const RawSignal& sig, int64_t target_rate) {
  require(target_rate > 0, "resample: target rate must be positive");
  if (target_rate == sig.sample_rate) return sig;

  RawSignal src = sig;
  if (target_rate < sig.sample_rate) {
    // anti-alias at 90% of the target Nyquist
    src = lowpass_filter(sig, 0.45 * double(target_rate));
  }
  const int64_t g = std::gcd(target_rate, sig.sample_rate);
  const int64_t up = target_rate / g, down = sig.sample_rate / g;
  const int64_t lmax = std::max(up, down);
  const int64_t half = 10 * lmax;  // 10 sinc lobes each side
  const int64_t ntaps = 2 * half + 1;
  const double fc = 0.5 / double(lmax);
  const double beta = 8.555;
  std::vector<double> h(static_cast<size_t>(ntaps));
  const double i0b = kaiser_i0(beta);
  for (int64_t i = 0; i < ntaps; ++i) {
    const double t = double(i - half);
    const double s = t == 0.0 ? 2.0 * fc : std::sin(2.0 * kPi * fc * t) / (kPi * t);
    const double w = kaiser_i0(beta * std::sqrt(std::max(
                         0.0, 1.0 - (t / double(half)) * (t / double(half))))) / i0b;
    h[size_t(i)] = s * w;
  }
  // exact unit DC gain per polyphase branch
  for (int64_t p = 0; p < up; ++p) {
    double s = 0.0;
    for (int64_t i = p; i < ntaps; i += up) s += h[size_t(i)];
    for (int64_t i = p; i < ntaps; i += up) h[size_t(i)] /= s;
  }

  const int64_t n_in = src.length();
  const int64_t n_out = int64_t(std::llround(double(n_in) * double(target_rate) /
                                             double(sig.sample_rate)));
  Tensor<double> out({n_out, src.channels()});
  for (int64_t c = 0; c < src.channels(); ++c) {
    const std::vector<double> x = column(src.samples, c);
    for (int64_t j = 0; j < n_out; ++j) {
      const int64_t u = j * down;
      int64_t nmin = (u - half) / up;
      while (nmin * up < u - half) ++nmin;
      int64_t nmax = (u + half) / up;
      while (nmax * up > u + half) --nmax;
      double acc = 0.0;
      for (int64_t n = nmin; n <= nmax; ++n) {
        const int64_t tap = half + u - n * up;
        const int64_t src_i = std::clamp<int64_t>(n, 0, n_in - 1);
        acc += x[size_t(src_i)] * h[size_t(tap)];
      }
      out.at(j, c) = acc;
    }
  }
  RawSignal r;
  r.samples = std::move(out);
  r.sample_rate = target_rate;
  return r;
}

std::vector<Tensor<double>> segment_trials(const RawSignal& sig, int trial_len_s,
                                           double hop_s) {
  require(trial_len_s >= 2 && trial_len_s <= 5, "segment_trials: trial length must be 2-5 s");
  require(hop_s > 0.0, "segment_trials: hop must be positive");
  const int64_t len = int64_t(trial_len_s) * sig.sample_rate;
  const int64_t hop = int64_t(std::llround(hop_s * double(sig.sample_rate)));
  require(hop >= 1, "segment_trials: hop shorter than one sample");
  std::vector<Tensor<double>> out;
  for (int64_t start = 0; start + len <= sig.length(); start += hop) {
    Tensor<double> seg({len, sig.channels()});
    std::memcpy(seg.ptr(), sig.samples.ptr() + start * sig.channels(),
                size_t(len * sig.channels()) * sizeof(double));
    out.push_back(std::move(seg));
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> normalize_impl(const Tensor<T>& eeg) {
  require(eeg.rank() == 2 && eeg.dim(0) >= 2, "normalize_trial: need [T x E] with T >= 2");
  const int64_t t = eeg.dim(0), e = eeg.dim(1);
  Tensor<T> out(eeg.shape);
  for (int64_t c = 0; c < e; ++c) {
    double mean = 0.0;
    for (int64_t i = 0; i < t; ++i) mean += double(eeg.at(i, c));
    mean /= double(t);
    double var = 0.0;
    for (int64_t i = 0; i < t; ++i) {
      const double d = double(eeg.at(i, c)) - mean;
      var += d * d;
    }
    var /= double(t);
    const double sd = std::sqrt(var);
    if (sd < 1e-8) {
      for (int64_t i = 0; i < t; ++i) out.at(i, c) = T(0);
    } else {
      for (int64_t i = 0; i < t; ++i) out.at(i, c) = T((double(eeg.at(i, c)) - mean) / sd);
    }
  }
  return out;
}

}  // namespace

Tensor<double> normalize_trial(const Tensor<double>& eeg) { return normalize_impl(eeg); }
Tensor<float> normalize_trial(const Tensor<float>& eeg) { return normalize_impl(eeg); }

Spectrogram stft_spectrogram(const RawSignal& audio, int trial_len_s) {
  constexpr int64_t kRate = 16000, kWin = 512, kHop = 320, kBins = kWin / 2 + 1;
  require(audio.sample_rate == kRate, "stft: audio must be at 16 kHz");
  require(audio.channels() == 1, "stft: mono audio required");
  const int64_t n = audio.length();
  require(n == int64_t(trial_len_s) * kRate, "stft: trial length does not match audio");

  std::vector<double> window(kWin);
  for (int64_t i = 0; i < kWin; ++i)
    window[size_t(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(kWin));

  const int64_t frames = n / kHop + 1;
  Spectrogram spec;
  spec.magnitudes = Tensor<double>({frames, kBins});
  spec.frame_hop_s = double(kHop) / double(kRate);
  spec.window_s = double(kWin) / double(kRate);

  const double* x = audio.samples.ptr();
  std::vector<double> frame(kWin);
  for (int64_t t = 0; t < frames; ++t) {
    const int64_t start = t * kHop - kWin / 2;  // reflection-centered
    for (int64_t i = 0; i < kWin; ++i)
      frame[size_t(i)] = x[reflect_index(start + i, n)] * window[size_t(i)];
    auto bins = rfft(frame);
    for (int64_t k = 0; k < kBins; ++k) spec.magnitudes.at(t, k) = std::abs(bins[size_t(k)]);
  }
  return spec;
}

RawSignal hilbert_envelope(const RawSignal& audio) {
  require(audio.channels() == 1, "hilbert_envelope: mono audio required");
  const int64_t n = audio.length();
  std::vector<std::complex<double>> x(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) x[size_t(i)] = audio.samples[i];
  auto spec = fft(x, false);
  for (int64_t k = 0; k < n; ++k) {
    if (k == 0 || (n % 2 == 0 && k == n / 2)) continue;
    if (k < (n + 1) / 2)
      spec[size_t(k)] *= 2.0;
    else
      spec[size_t(k)] = 0.0;
  }
  auto analytic = fft(spec, true);
  std::vector<double> env(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) env[size_t(i)] = std::abs(analytic[size_t(i)]);

  RawSignal e = mono_signal(std::move(env), audio.sample_rate);
  if (audio.sample_rate > 64) {
    if (32.0 < double(audio.sample_rate) / 2.0) e = lowpass_filter(e, 32.0);
    e = resample(e, 64);
  }
  for (auto& v : e.samples.data) v = std::max(0.0, v);
  return e;
}

}  // namespace aad
