#ifndef AAD_IO_HPP
#define AAD_IO_HPP

#include <string>
#include <vector>

#include "aad/dsp.hpp"

namespace aad {

// PCM 16-bit little-endian mono WAV.
RawSignal read_wav_mono(const std::string& path);
void write_wav_mono(const std::string& path, const RawSignal& sig);

// Stimulus conditioning: 8 kHz low-pass then resample to 16 kHz.
RawSignal prepare_audio(const RawSignal& in);

// EEG CSV: header row with electrode names, one row per sample. Returns the
// requested electrode columns in the requested order.
RawSignal read_eeg_csv(const std::string& path, int64_t sample_rate,
                       const std::vector<std::string>& electrodes);

// The ten scalp locations the analysis uses.
const std::vector<std::string>& default_electrodes();

}  // namespace aad

#endif  // AAD_IO_HPP
