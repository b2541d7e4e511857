#include "aad/synth.hpp"

#include <algorithm>
#include <cmath>

#include "aad/common.hpp"
#include "aad/io.hpp"

namespace aad {

namespace {

constexpr int64_t kEegRate = 64;
constexpr int64_t kAudioRate = 16000;
constexpr int64_t kElectrodes = 10;

std::vector<double> convolve_truncated(const std::vector<double>& env,
                                       const TrfKernel& trf) {
  std::vector<double> out(env.size(), 0.0);
  const int64_t n = int64_t(env.size());
  const int64_t k = int64_t(trf.taps.size());
  for (int64_t t = 0; t < n; ++t) {
    double acc = 0.0;
    const int64_t kmax = std::min<int64_t>(k - 1, t);
    for (int64_t j = 0; j <= kmax; ++j) acc += env[size_t(t - j)] * trf.taps[size_t(j)];
    out[size_t(t)] = acc;
  }
  return out;
}

// low-pass-modulated white noise: broadband carrier whose Hilbert envelope
// follows a slow (< 8 Hz) random modulator, a stand-in for speech loudness
std::vector<double> modulated_noise_carrier(int64_t n_samples, Rng& rng) {
  const int64_t n_slow = n_samples * kEegRate / kAudioRate + 8;
  std::vector<double> slow(static_cast<size_t>(n_slow));
  for (auto& v : slow) v = rng.normal();
  RawSignal mod = lowpass_filter(mono_signal(std::move(slow), kEegRate), 8.0);
  double lo = mod.samples[0], hi = mod.samples[0];
  for (int64_t i = 0; i < mod.length(); ++i) {
    lo = std::min(lo, mod.samples[i]);
    hi = std::max(hi, mod.samples[i]);
  }
  const double span = std::max(hi - lo, 1e-9);
  for (auto& v : mod.samples.data) v = 0.3 + 0.7 * (v - lo) / span;
  RawSignal mod_hi = resample(mod, kAudioRate);

  std::vector<double> carrier(static_cast<size_t>(n_samples));
  for (int64_t i = 0; i < n_samples; ++i) {
    const double m = i < mod_hi.length() ? mod_hi.samples[i] : mod_hi.samples[mod_hi.length() - 1];
    carrier[size_t(i)] = 0.1 * rng.normal() * m;
  }
  return carrier;
}

}  // namespace

std::vector<double> default_electrode_gains() {
  std::vector<double> g(static_cast<size_t>(kElectrodes));
  for (int64_t e = 0; e < kElectrodes; ++e)
    g[size_t(e)] = 1.0 - 0.6 * double(e) / double(kElectrodes - 1);
  return g;
}

TrfKernel make_trf(double peak_amp_100, double peak_amp_200, double width_ms) {
  require(std::isfinite(peak_amp_100) && std::isfinite(peak_amp_200),
          "make_trf: amplitudes must be finite");
  require(width_ms > 0, "make_trf: width must be positive");
  TrfKernel k;
  k.taps.resize(33);  // 0..500 ms inclusive at 64 Hz
  const double sigma = width_ms / 1000.0;
  for (int64_t i = 0; i < int64_t(k.taps.size()); ++i) {
    const double t = double(i) / double(kEegRate);
    const double b1 = std::exp(-(t - 0.1) * (t - 0.1) / (2.0 * sigma * sigma));
    const double b2 = std::exp(-(t - 0.2) * (t - 0.2) / (2.0 * sigma * sigma));
    k.taps[size_t(i)] = peak_amp_100 * b1 + peak_amp_200 * b2;
  }
  return k;
}

Tensor<double> synthesize_eeg(const std::vector<double>& env_a,
                              const std::vector<double>& env_b, int label,
                              const TrfKernel& trf_att, const TrfKernel& trf_ign,
                              const std::vector<double>& gains, double snr_db, Rng& rng) {
  require(env_a.size() == env_b.size(), "synthesize_eeg: envelope lengths differ");
  require(!env_a.empty(), "synthesize_eeg: empty envelopes");
  require(label == 0 || label == 1, "synthesize_eeg: label must be 0 or 1");
  const auto& env_att = label == 0 ? env_a : env_b;
  const auto& env_ign = label == 0 ? env_b : env_a;
  const auto a = convolve_truncated(env_att, trf_att);
  const auto b = convolve_truncated(env_ign, trf_ign);
  const int64_t t_len = int64_t(env_a.size());
  const int64_t n_elec = int64_t(gains.size());

  Tensor<double> eeg({t_len, n_elec});
  std::vector<double> noise(static_cast<size_t>(t_len));
  for (int64_t e = 0; e < n_elec; ++e) {
    double p_sig = 0.0;
    for (int64_t t = 0; t < t_len; ++t) {
      const double s = gains[size_t(e)] * (a[size_t(t)] + b[size_t(t)]);
      eeg.at(t, e) = s;
      p_sig += s * s;
    }
    p_sig /= double(t_len);
    if (std::isinf(snr_db) || p_sig == 0.0) continue;
    double p_noise = 0.0;
    for (auto& v : noise) {
      v = rng.normal();
      p_noise += v * v;
    }
    p_noise /= double(t_len);
    // scale the realized noise so the per-trial SNR is exact
    const double target = p_sig * std::pow(10.0, -snr_db / 10.0);
    const double scale = std::sqrt(target / p_noise);
    for (int64_t t = 0; t < t_len; ++t) eeg.at(t, e) += scale * noise[size_t(t)];
  }
  return eeg;
}

SynthOutput generate_dataset(const SynthConfig& cfg) {
  require(cfg.n_trials >= 1, "generate_dataset: n_trials must be >= 1");
  require(cfg.duration_s >= 2 && cfg.duration_s <= 5,
          "generate_dataset: duration must be 2-5 s");
  require(cfg.n_recordings >= 1, "generate_dataset: n_recordings must be >= 1");
  const std::vector<double> gains = cfg.gains.empty() ? default_electrode_gains() : cfg.gains;
  require(int64_t(gains.size()) == kElectrodes, "generate_dataset: need 10 electrode gains");

  const TrfKernel trf_att = make_trf(cfg.attended_peak, -cfg.attended_peak, cfg.trf_width_ms);
  const TrfKernel trf_ign = make_trf(cfg.ignored_peak, -cfg.ignored_peak, cfg.trf_width_ms);
  const int64_t n_audio = cfg.duration_s * kAudioRate;
  const int64_t t_eeg = cfg.duration_s * kEegRate;

  RawSignal wav_a, wav_b;
  const bool use_wav = cfg.carrier == "wav-files";
  if (use_wav) {
    require(!cfg.wav_a.empty() && !cfg.wav_b.empty(),
            "generate_dataset: wav-files carrier needs wav_a and wav_b");
    wav_a = prepare_audio(read_wav_mono(cfg.wav_a));
    wav_b = prepare_audio(read_wav_mono(cfg.wav_b));
    const int64_t needed = cfg.n_trials * n_audio;
    for (const RawSignal* w : {&wav_a, &wav_b}) {
      if (w->length() < needed)
        throw std::invalid_argument(
            "generate_dataset: wav provides " +
            std::to_string(double(w->length()) / double(kAudioRate)) + " s but " +
            std::to_string(double(needed) / double(kAudioRate)) + " s are required");
    }
  } else {
    require(cfg.carrier == "modulated-noise",
            "generate_dataset: carrier must be modulated-noise or wav-files");
  }

  SynthOutput out;
  out.records.reserve(static_cast<size_t>(cfg.n_trials));
  const int64_t per_rec = (cfg.n_trials + cfg.n_recordings - 1) / cfg.n_recordings;
  for (int64_t i = 0; i < cfg.n_trials; ++i) {
    Rng rng(mix_seed(cfg.seed, uint64_t(i)));
    const int label = int(i % 2);

    std::vector<double> carrier_a, carrier_b;
    if (use_wav) {
      const int64_t off = i * n_audio;
      carrier_a.assign(wav_a.samples.ptr() + off, wav_a.samples.ptr() + off + n_audio);
      carrier_b.assign(wav_b.samples.ptr() + off, wav_b.samples.ptr() + off + n_audio);
    } else {
      carrier_a = modulated_noise_carrier(n_audio, rng);
      carrier_b = modulated_noise_carrier(n_audio, rng);
    }
    RawSignal sig_a = mono_signal(std::move(carrier_a), kAudioRate);
    RawSignal sig_b = mono_signal(std::move(carrier_b), kAudioRate);

    TrialRecord rec;
    rec.duration_s = int32_t(cfg.duration_s);
    rec.label = uint8_t(label);
    rec.spec_a = stft_spectrogram(sig_a, int(cfg.duration_s)).magnitudes.cast<float>();
    rec.spec_b = stft_spectrogram(sig_b, int(cfg.duration_s)).magnitudes.cast<float>();

    RawSignal env_a = hilbert_envelope(sig_a);
    RawSignal env_b = hilbert_envelope(sig_b);
    require(env_a.length() == t_eeg && env_b.length() == t_eeg,
            "generate_dataset: unexpected envelope length");
    std::vector<double> ea(env_a.samples.data), eb(env_b.samples.data);

    Tensor<double> eeg = synthesize_eeg(ea, eb, label, trf_att, trf_ign, gains, cfg.snr_db, rng);
    RawSignal eeg_sig;
    eeg_sig.samples = std::move(eeg);
    eeg_sig.sample_rate = kEegRate;
    eeg_sig = highpass_filter(eeg_sig, 1.0);
    rec.eeg = normalize_trial(eeg_sig.samples).cast<float>();
    out.records.push_back(std::move(rec));

    TrialMeta meta;
    meta.trial_index = i;
    const int64_t rec_id = i / per_rec;
    const int64_t pos = i % per_rec;
    meta.source_id = "synth-" + std::to_string(rec_id);
    meta.span_begin = pos * t_eeg;
    meta.span_end = meta.span_begin + t_eeg;
    out.manifest.push_back(std::move(meta));
  }
  return out;
}

void generate_dataset_files(const SynthConfig& cfg, const std::string& container_path,
                            const std::string& manifest_path) {
  SynthOutput out = generate_dataset(cfg);
  write_trials(container_path, out.records);
  write_manifest(manifest_path, out.manifest);
}

}  // namespace aad
