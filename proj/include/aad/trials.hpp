#ifndef AAD_TRIALS_HPP
#define AAD_TRIALS_HPP

#include <string>
#include <vector>

#include "aad/tensor.hpp"

namespace aad {

// One training sample: preprocessed EEG, both speakers' spectrograms, and
// the attended-speaker label.
struct TrialRecord {
  Tensor<float> eeg;             // [T_e x n_electrodes]
  Tensor<float> spec_a, spec_b;  // [T_s x n_freq]
  uint8_t label = 0;             // attended speaker index, 0 or 1
  int32_t duration_s = 3;
};

// Provenance of one trial inside its source recording; spans are raw-signal
// sample indices used for overlap-aware splitting.
struct TrialMeta {
  int64_t trial_index = 0;
  std::string source_id;
  int64_t span_begin = 0, span_end = 0;
  std::string split_hint;
};

// Binary trial container ("AADTRLv1"): header with trial dimensions, then
// per trial the label byte and float32 payloads.
void write_trials(const std::string& path, const std::vector<TrialRecord>& records);
std::vector<TrialRecord> read_trials(const std::string& path);

// JSON-lines manifest with one entry per trial.
void write_manifest(const std::string& path, const std::vector<TrialMeta>& metas);
std::vector<TrialMeta> read_manifest(const std::string& path);

}  // namespace aad

#endif  // AAD_TRIALS_HPP
