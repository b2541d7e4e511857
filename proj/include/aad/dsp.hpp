#ifndef AAD_DSP_HPP
#define AAD_DSP_HPP

#include <vector>

#include "aad/tensor.hpp"

namespace aad {

// Multichannel time series. samples is [n_samples x n_channels].
struct RawSignal {
  Tensor<double> samples;
  int64_t sample_rate = 0;

  int64_t length() const { return samples.rank() ? samples.dim(0) : 0; }
  int64_t channels() const { return samples.rank() > 1 ? samples.dim(1) : 0; }
};

RawSignal make_signal(Tensor<double> samples, int64_t sample_rate);
RawSignal mono_signal(std::vector<double> samples, int64_t sample_rate);

// Magnitude spectrogram, [n_frames x n_bins].
struct Spectrogram {
  Tensor<double> magnitudes;
  double frame_hop_s = 0.0;
  double window_s = 0.0;
};

// IIR transfer function b/a (order+1 coefficients each, a[0] = 1)
struct FilterCoeffs {
  std::vector<double> b, a;
};

// Butterworth design via bilinear transform.
FilterCoeffs butterworth(int order, double cutoff_hz, double sample_rate, bool highpass);

// One causal IIR pass, direct form II transposed, zi = steady-state unit-step
// state scaled by the caller.
std::vector<double> lfilter(const FilterCoeffs& f, const std::vector<double>& x,
                            const std::vector<double>& zi_scaled);
std::vector<double> lfilter_zi(const FilterCoeffs& f);

// Forward-backward (zero phase) filtering with odd-reflection padding.
std::vector<double> filtfilt(const FilterCoeffs& f, const std::vector<double>& x);

// 4th-order zero-phase Butterworth low/high pass, per channel.
RawSignal lowpass_filter(const RawSignal& sig, double cutoff_hz);
RawSignal highpass_filter(const RawSignal& sig, double cutoff_hz);

// Zero-phase anti-alias filter followed by polyphase rational resampling.
// Output length is round(n_in * target_rate / sample_rate).
RawSignal resample(const RawSignal& sig, int64_t target_rate);

// Sliding-window segmentation; returns floor((total_s - trial_len_s)/hop_s)+1
// segments of exactly trial_len_s * rate samples (empty when too short).
std::vector<Tensor<double>> segment_trials(const RawSignal& sig, int trial_len_s,
                                           double hop_s);

// Per-column zero mean and unit population variance; constant columns
// (std < 1e-8) become all-zero instead of dividing by ~0.
Tensor<double> normalize_trial(const Tensor<double>& eeg);
Tensor<float> normalize_trial(const Tensor<float>& eeg);

// STFT magnitudes of one audio trial at 16 kHz: 512-point FFT, 32 ms Hann
// window, 20 ms hop, reflection-centered; yields (50d+1) x 257 for d seconds.
Spectrogram stft_spectrogram(const RawSignal& audio, int trial_len_s);

// |analytic signal| -> 32 Hz low-pass -> 64 Hz, clamped nonnegative.
RawSignal hilbert_envelope(const RawSignal& audio);

}  // namespace aad

#endif  // AAD_DSP_HPP
