#include "aad/config.hpp"

#include <cstdlib>
#include <fstream>

#include "aad/common.hpp"
#include "json.hpp"

namespace aad {

namespace {

using Type = RunConfig::KeySpec::Type;

std::map<std::string, RunConfig::KeySpec> build_schema() {
  std::map<std::string, RunConfig::KeySpec> s;
  auto add = [&](const std::string& key, const std::string& def, Type t,
                 const std::string& doc, std::vector<std::string> choices = {}) {
    s[key] = {def, t, doc, std::move(choices)};
  };
  add("duration_s", "3", Type::integer, "trial duration in seconds (2-5)");
  add("epochs", "80", Type::integer, "training epochs");
  add("batch_size", "32", Type::integer, "mini batch size");
  add("micro_batch", "8", Type::integer, "batch-norm / accumulation granularity");
  add("eval_batch", "32", Type::integer, "batch size for evaluation passes");
  add("checkpoint_every", "10", Type::integer, "checkpoint cadence in epochs (0 = off)");
  add("lr", "5e-4", Type::real, "Adam learning rate");
  add("seed", "1", Type::integer, "master seed for shuffling, dropout, and synthesis");
  add("dropout_eeg", "0.25", Type::real, "dropout probability in the EEG subnetwork");
  add("dropout_audio", "0.4", Type::real, "dropout probability in the audio subnetwork");
  add("dropout_concat", "0.25", Type::real, "dropout probability after concatenation");
  add("hidden", "32", Type::integer, "BLSTM hidden size per direction");
  add("sparsity", "0.5", Type::real, "target prunable-weight sparsity");
  add("schedule", "one_shot", Type::text, "pruning fine-tune schedule",
      {"one_shot", "sequential"});
  add("finetune_epochs", "6", Type::integer, "fine-tuning epochs after pruning");
  add("snr_db", "-3", Type::real, "per-electrode synthetic EEG SNR in dB (inf = noiseless)");
  add("n_trials", "4000", Type::integer, "number of synthetic trials");
  add("n_recordings", "10", Type::integer, "synthetic recordings in the manifest");
  add("attended_peak", "1.0", Type::real, "attended TRF bump amplitude");
  add("ignored_peak", "0.4", Type::real, "ignored TRF bump amplitude");
  add("trf_width_ms", "30", Type::real, "TRF bump width in milliseconds");
  add("carrier", "modulated-noise", Type::text, "synthetic audio carrier",
      {"modulated-noise", "wav-files"});
  add("wav_a", "", Type::text, "speaker-a WAV for the wav-files carrier");
  add("wav_b", "", Type::text, "speaker-b WAV for the wav-files carrier");
  add("container", "trials.aadtrl", Type::text, "trial container path");
  add("manifest", "manifest.jsonl", Type::text, "trial manifest path");
  add("checkpoint", "", Type::text, "model checkpoint path");
  add("out_dir", "runs", Type::text, "root directory for run outputs");
  add("run_name", "", Type::text, "run directory name (default <command>-<seed>-<timestamp>)");
  add("run", "", Type::text, "existing run directory (report command)");
  add("ablation", "none", Type::text, "ablation mode",
      {"none", "zero_eeg", "zero_audio", "remove_blstm", "remove_fc"});
  add("label", "0", Type::integer, "attended-speaker label for preprocess");
  add("eeg_csv", "", Type::text, "raw EEG CSV path for preprocess");
  add("eeg_rate", "0", Type::integer, "EEG sampling rate of the CSV");
  add("audio_a", "", Type::text, "speaker-a WAV for preprocess");
  add("audio_b", "", Type::text, "speaker-b WAV for preprocess");
  add("electrodes", "F7,F3,F4,F8,T7,C3,Cz,C4,T8,Pz", Type::text,
      "comma-separated electrode subset taken from the CSV header");
  return s;
}

}  // namespace

const std::map<std::string, RunConfig::KeySpec>& RunConfig::schema() {
  static const std::map<std::string, KeySpec> s = build_schema();
  return s;
}

RunConfig::RunConfig() {
  for (const auto& [key, spec] : schema()) values_[key] = spec.def;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = schema().find(key);
  if (it == schema().end())
    throw std::invalid_argument("unknown configuration key '" + key + "'");
  const KeySpec& spec = it->second;
  if (spec.type == Type::integer) {
    char* end = nullptr;
    std::strtoll(value.c_str(), &end, 10);
    if (value.empty() || end == nullptr || *end != '\0')
      throw std::invalid_argument("key '" + key + "' expects an integer, got '" + value + "'");
  } else if (spec.type == Type::real) {
    char* end = nullptr;
    std::strtod(value.c_str(), &end);
    if (value.empty() || end == nullptr || *end != '\0')
      throw std::invalid_argument("key '" + key + "' expects a number, got '" + value + "'");
  }
  if (!spec.choices.empty()) {
    bool ok = false;
    for (const auto& c : spec.choices) ok = ok || c == value;
    if (!ok)
      throw std::invalid_argument("key '" + key + "' does not accept '" + value + "'");
  }
  values_[key] = value;
}

const std::string& RunConfig::get_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw std::invalid_argument("unknown configuration key '" + key + "'");
  return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
  return std::strtoll(get_str(key).c_str(), nullptr, 10);
}

double RunConfig::get_double(const std::string& key) const {
  return std::strtod(get_str(key).c_str(), nullptr);
}

std::string RunConfig::to_json() const {
  nlohmann::json j(values_);
  return j.dump(2);
}

RunConfig parse_config(const std::string& file, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw IoError("open-failed", "config: cannot open " + file);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto trim = [](std::string s) {
        const size_t b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const size_t e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      const std::string t = trim(line);
      if (t.empty()) continue;
      const size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                    " is not key=value");
      cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }
  for (const auto& kv : overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override '" + kv + "' is not key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

}  // namespace aad
