#include <cmath>
#include <numeric>
#include <vector>

#include "aad/dsp.hpp"
#include "doctest.h"

using namespace aad;

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

std::vector<double> sine(double freq, double amp, int64_t fs, double seconds) {
  const int64_t n = int64_t(seconds * double(fs));
  std::vector<double> x(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) x[size_t(i)] = amp * std::sin(2.0 * kPi * freq * double(i) / double(fs));
  return x;
}

double interior_rms(const Tensor<double>& m, int64_t margin) {
  double acc = 0;
  int64_t cnt = 0;
  for (int64_t i = margin; i < m.dim(0) - margin; ++i) {
    acc += m.at(i, 0) * m.at(i, 0);
    ++cnt;
  }
  return std::sqrt(acc / double(cnt));
}

double interior_peak(const Tensor<double>& m, int64_t margin) {
  double peak = 0;
  for (int64_t i = margin; i < m.dim(0) - margin; ++i) peak = std::max(peak, std::abs(m.at(i, 0)));
  return peak;
}

}  // namespace

TEST_CASE("lowpass: unit DC gain") {
  auto sig = mono_signal(std::vector<double>(2500, 1.0), 2500);
  auto out = lowpass_filter(sig, 32.0);
  for (int64_t i = 0; i < out.length(); ++i)
    CHECK(out.samples[i] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("lowpass: stopband and passband at fs=2500, fc=32") {
  // 500 Hz sine is crushed below 1e-3
  auto hi = make_signal(Tensor<double>({2500 * 2, 1}, sine(500, 1.0, 2500, 2.0)), 2500);
  auto hi_out = lowpass_filter(hi, 32.0);
  CHECK(interior_peak(hi_out.samples, 500) < 1e-3);

  // 1 Hz sine passes with >= 0.99 of its amplitude
  auto lo = make_signal(Tensor<double>({2500 * 4, 1}, sine(1, 1.0, 2500, 4.0)), 2500);
  auto lo_out = lowpass_filter(lo, 32.0);
  const double ratio = interior_rms(lo_out.samples, 1250) / interior_rms(lo.samples, 1250);
  CHECK(ratio >= 0.99);
  CHECK(ratio <= 1.01);

  CHECK_THROWS_AS(lowpass_filter(hi, 1250.0), std::invalid_argument);
  CHECK_THROWS_AS(lowpass_filter(hi, 2000.0), std::invalid_argument);
}

TEST_CASE("highpass: removes DC, passes in-band, zero stays zero") {
  auto c5 = mono_signal(std::vector<double>(640, 5.0), 64);
  auto out = highpass_filter(c5, 1.0);
  for (int64_t i = 0; i < out.length(); ++i) CHECK(std::abs(out.samples[i]) < 5e-3);

  auto zero = mono_signal(std::vector<double>(640, 0.0), 64);
  auto zout = highpass_filter(zero, 1.0);
  for (int64_t i = 0; i < zout.length(); ++i) CHECK(zout.samples[i] == 0.0);

  auto s16 = make_signal(Tensor<double>({64 * 10, 1}, sine(16, 1.0, 64, 10.0)), 64);
  auto s16_out = highpass_filter(s16, 1.0);
  const double ratio = interior_rms(s16_out.samples, 64) / interior_rms(s16.samples, 64);
  CHECK(ratio >= 0.99);
  CHECK(ratio <= 1.01);

  CHECK_THROWS_AS(highpass_filter(c5, 32.0), std::invalid_argument);
  CHECK_THROWS_AS(highpass_filter(c5, 0.0), std::invalid_argument);
}

TEST_CASE("filters are idempotent on their passband to 1%") {
  auto lo = make_signal(Tensor<double>({2500 * 4, 1}, sine(2, 1.0, 2500, 4.0)), 2500);
  auto once = lowpass_filter(lo, 32.0);
  auto twice = lowpass_filter(once, 32.0);
  const double r = interior_rms(twice.samples, 1250) / interior_rms(once.samples, 1250);
  CHECK(std::abs(r - 1.0) < 0.01);

  auto hi = make_signal(Tensor<double>({64 * 10, 1}, sine(16, 1.0, 64, 10.0)), 64);
  auto honce = highpass_filter(hi, 1.0);
  auto htwice = highpass_filter(honce, 1.0);
  const double hr = interior_rms(htwice.samples, 64) / interior_rms(honce.samples, 64);
  CHECK(std::abs(hr - 1.0) < 0.01);
}

TEST_CASE("resample: length law, constants, tones") {
  // 2500 samples at 2500 Hz -> 64 samples at 64 Hz
  auto sig = mono_signal(std::vector<double>(2500, 0.0), 2500);
  for (int64_t i = 0; i < 2500; ++i) sig.samples[i] = std::sin(0.01 * double(i));
  auto out = resample(sig, 64);
  CHECK(out.length() == 64);
  CHECK(out.sample_rate == 64);

  // constant signal stays put, including the edges
  auto c = mono_signal(std::vector<double>(5000, 3.25), 2500);
  auto cout_ = resample(c, 64);
  CHECK(cout_.length() == 128);
  for (int64_t i = 0; i < cout_.length(); ++i)
    CHECK(cout_.samples[i] == doctest::Approx(3.25).epsilon(1e-6));

  // 8 Hz sine at 2500 Hz for 10 s resampled to 64 Hz matches the analytic sine
  auto tone = make_signal(Tensor<double>({25000, 1}, sine(8, 1.0, 2500, 10.0)), 2500);
  auto tout = resample(tone, 64);
  CHECK(tout.length() == 640);
  double max_err = 0;
  for (int64_t i = 32; i < tout.length() - 32; ++i) {
    const double ref = std::sin(2.0 * kPi * 8.0 * double(i) / 64.0);
    max_err = std::max(max_err, std::abs(tout.samples[i] - ref));
  }
  CHECK(max_err < 1e-2);

  CHECK_THROWS_AS(resample(sig, 0), std::invalid_argument);
  CHECK_THROWS_AS(resample(sig, -5), std::invalid_argument);
}

TEST_CASE("segment_trials counts and exact reconstruction") {
  auto sig = mono_signal(std::vector<double>(64 * 300, 0.0), 64);
  for (int64_t i = 0; i < sig.length(); ++i) sig.samples[i] = double(i);
  auto segs = segment_trials(sig, 3, 1.0);
  CHECK(segs.size() == 298);  // floor((300-3)/1)+1
  // each segment is exactly the original slice at its hop offset
  for (size_t k = 0; k < segs.size(); ++k) {
    CHECK(segs[k].dim(0) == 192);
    for (int64_t i = 0; i < 192; ++i)
      CHECK(segs[k].at(i, 0) == double(int64_t(k) * 64 + i));
  }

  auto exact = mono_signal(std::vector<double>(64 * 3, 1.0), 64);
  CHECK(segment_trials(exact, 3, 1.0).size() == 1);

  auto shorter = mono_signal(std::vector<double>(64 * 2, 1.0), 64);
  CHECK(segment_trials(shorter, 3, 1.0).empty());
}

TEST_CASE("normalize_trial") {
  // [1,2,3] -> [-1.2247, 0, 1.2247] with population std
  Tensor<double> col({3, 1}, {1.0, 2.0, 3.0});
  auto out = normalize_trial(col);
  CHECK(out.at(0, 0) == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(out.at(1, 0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  CHECK(out.at(2, 0) == doctest::Approx(1.2247).epsilon(1e-4));

  // constant column becomes all-zero
  Tensor<double> cc = Tensor<double>::full({16, 2}, 4.2);
  auto zc = normalize_trial(cc);
  for (auto v : zc.data) CHECK(v == 0.0);

  // already-normalized column is unchanged; second application is a no-op
  Tensor<double> norm({4, 1}, {-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865});
  auto n1 = normalize_trial(norm);
  for (int64_t i = 0; i < 4; ++i) CHECK(n1[i] == doctest::Approx(norm[i]).epsilon(1e-6));
  auto n2 = normalize_trial(n1);
  for (int64_t i = 0; i < 4; ++i) CHECK(n2[i] == doctest::Approx(n1[i]).epsilon(1e-6));

  CHECK_THROWS_AS(normalize_trial(Tensor<double>({1, 2})), std::invalid_argument);
}

TEST_CASE("stft dimensions match the duration table") {
  for (int d : {2, 3, 4, 5}) {
    auto audio = mono_signal(std::vector<double>(size_t(d) * 16000, 0.0), 16000);
    for (int64_t i = 0; i < audio.length(); ++i)
      audio.samples[i] = std::sin(0.001 * double(i));
    auto spec = stft_spectrogram(audio, d);
    CHECK(spec.magnitudes.dim(0) == 50 * d + 1);
    CHECK(spec.magnitudes.dim(1) == 257);
  }
  auto wrong = mono_signal(std::vector<double>(16000, 0.0), 16000);
  CHECK_THROWS_AS(stft_spectrogram(wrong, 3), std::invalid_argument);
}

TEST_CASE("stft of silence is zero; pure tone peaks in the right bin") {
  auto zero = mono_signal(std::vector<double>(48000, 0.0), 16000);
  auto zs = stft_spectrogram(zero, 3);
  for (auto v : zs.magnitudes.data) CHECK(v == 0.0);

  // 1000 Hz -> bin 1000/(16000/512) = 32
  auto tone = make_signal(Tensor<double>({48000, 1}, sine(1000, 1.0, 16000, 3.0)), 16000);
  auto ts = stft_spectrogram(tone, 3);
  for (int64_t t = 5; t < ts.magnitudes.dim(0) - 5; ++t) {
    int64_t best = 0;
    for (int64_t k = 1; k < 257; ++k)
      if (ts.magnitudes.at(t, k) > ts.magnitudes.at(t, best)) best = k;
    CHECK(best == 32);
  }
}

TEST_CASE("hilbert envelope") {
  // pure sine of amplitude A -> constant envelope A within 2%
  auto tone = make_signal(Tensor<double>({2000 * 2, 1}, sine(50, 2.0, 2000, 2.0)), 2000);
  auto env = hilbert_envelope(tone);
  CHECK(env.sample_rate == 64);
  for (int64_t i = 16; i < env.length() - 16; ++i)
    CHECK(env.samples[i] == doctest::Approx(2.0).epsilon(0.02));

  // zero in, zero out
  auto zero = mono_signal(std::vector<double>(2000, 0.0), 2000);
  auto zenv = hilbert_envelope(zero);
  for (int64_t i = 0; i < zenv.length(); ++i)
    CHECK(std::abs(zenv.samples[i]) < 1e-12);

  // 4 Hz AM, depth 0.5: envelope tracks the modulator with correlation > 0.99
  const int64_t fs = 1000;
  const double secs = 5.0;
  std::vector<double> x(static_cast<size_t>(fs * secs));
  for (size_t i = 0; i < x.size(); ++i) {
    const double t = double(i) / double(fs);
    x[i] = (1.0 + 0.5 * std::sin(2.0 * kPi * 4.0 * t)) * std::sin(2.0 * kPi * 100.0 * t);
  }
  auto am = mono_signal(std::move(x), fs);
  auto aenv = hilbert_envelope(am);
  const int64_t margin = 32;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  int64_t cnt = 0;
  for (int64_t i = margin; i < aenv.length() - margin; ++i) {
    const double t = double(i) / 64.0;
    const double m = 1.0 + 0.5 * std::sin(2.0 * kPi * 4.0 * t);
    const double e = aenv.samples[i];
    sx += m; sy += e; sxx += m * m; syy += e * e; sxy += m * e;
    ++cnt;
  }
  const double corr = (double(cnt) * sxy - sx * sy) /
                      std::sqrt((double(cnt) * sxx - sx * sx) * (double(cnt) * syy - sy * sy));
  CHECK(corr > 0.99);
}
