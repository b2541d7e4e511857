#ifndef AAD_SYNTH_HPP
#define AAD_SYNTH_HPP

#include <string>
#include <vector>

#include "aad/dsp.hpp"
#include "aad/rng.hpp"
#include "aad/trials.hpp"

namespace aad {

// Temporal response function on the 64 Hz grid, lags 0-500 ms (33 taps).
struct TrfKernel {
  std::vector<double> taps;
};

// Two Gaussian bumps centered at the 100 ms and 200 ms lags.
TrfKernel make_trf(double peak_amp_100, double peak_amp_200, double width_ms = 30.0);

struct SynthConfig {
  int64_t n_trials = 4000;
  int64_t duration_s = 3;
  double snr_db = -3.0;            // +inf disables noise
  std::vector<double> gains;       // per-electrode; default smooth 1.0 -> 0.4
  uint64_t seed = 1;
  std::string carrier = "modulated-noise";  // or "wav-files"
  std::string wav_a, wav_b;
  int64_t n_recordings = 10;
  double attended_peak = 1.0;  // 100 ms bump amplitude; 200 ms bump is its negative
  double ignored_peak = 0.4;
  double trf_width_ms = 30.0;
};

std::vector<double> default_electrode_gains();

// source = conv(env_attended, trf_att) + conv(env_ignored, trf_ign), routed by
// label; per electrode, white noise is scaled so the realized per-trial SNR
// equals snr_db exactly. Returns [T x n_electrodes].
Tensor<double> synthesize_eeg(const std::vector<double>& env_a,
                              const std::vector<double>& env_b, int label,
                              const TrfKernel& trf_att, const TrfKernel& trf_ign,
                              const std::vector<double>& gains, double snr_db, Rng& rng);

struct SynthOutput {
  std::vector<TrialRecord> records;
  std::vector<TrialMeta> manifest;
};

// Labeled synthetic two-speaker trials: fresh carriers per trial (or WAV
// excerpts), spectrograms via the production STFT path, EEG via the TRF
// model plus the standard per-trial high-pass and normalization.
SynthOutput generate_dataset(const SynthConfig& cfg);

void generate_dataset_files(const SynthConfig& cfg, const std::string& container_path,
                            const std::string& manifest_path);

}  // namespace aad

#endif  // AAD_SYNTH_HPP
