#include "aad/commands.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "aad/checkpoint.hpp"
#include "aad/io.hpp"
#include "aad/prune.hpp"
#include "aad/synth.hpp"
#include "aad/train.hpp"
#include "json.hpp"

namespace aad {

namespace {

namespace fs = std::filesystem;

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  localtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

std::string make_run_dir(const std::string& command, const RunConfig& cfg) {
  const std::string name = cfg.get_str("run_name").empty()
                               ? command + "-" + cfg.get_str("seed") + "-" + timestamp()
                               : cfg.get_str("run_name");
  const std::string dir = cfg.get_str("out_dir") + "/" + name;
  fs::create_directories(dir);
  std::ofstream os(dir + "/config.json");
  os << "{\n  \"command\": \"" << command << "\",\n  \"config\": " << cfg.to_json()
     << "\n}\n";
  return dir;
}

std::string out_path(const std::string& run_dir, const std::string& p) {
  return p.empty() || p.front() == '/' ? p : run_dir + "/" + p;
}

SynthConfig synth_config(const RunConfig& cfg) {
  SynthConfig sc;
  sc.n_trials = cfg.get_int("n_trials");
  sc.duration_s = cfg.get_int("duration_s");
  sc.snr_db = cfg.get_double("snr_db");
  sc.seed = uint64_t(cfg.get_int("seed"));
  sc.carrier = cfg.get_str("carrier");
  sc.wav_a = cfg.get_str("wav_a");
  sc.wav_b = cfg.get_str("wav_b");
  sc.n_recordings = cfg.get_int("n_recordings");
  sc.attended_peak = cfg.get_double("attended_peak");
  sc.ignored_peak = cfg.get_double("ignored_peak");
  sc.trf_width_ms = cfg.get_double("trf_width_ms");
  return sc;
}

ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig mc;
  mc.duration_s = cfg.get_int("duration_s");
  mc.blstm_hidden = cfg.get_int("hidden");
  mc.p_drop_eeg = cfg.get_double("dropout_eeg");
  mc.p_drop_audio = cfg.get_double("dropout_audio");
  mc.p_drop_concat = cfg.get_double("dropout_concat");
  mc.init_seed = uint64_t(cfg.get_int("seed"));
  const AblationMode mode = ablation_from_string(cfg.get_str("ablation"));
  if (mode == AblationMode::remove_blstm || mode == AblationMode::remove_fc) mc.arch = mode;
  return mc;
}

TrainConfig train_config(const RunConfig& cfg, const std::string& run_dir) {
  TrainConfig tc;
  tc.epochs = cfg.get_int("epochs");
  tc.batch_size = cfg.get_int("batch_size");
  tc.micro_batch = cfg.get_int("micro_batch");
  tc.lr = cfg.get_double("lr");
  tc.seed = uint64_t(cfg.get_int("seed"));
  tc.eval_batch = cfg.get_int("eval_batch");
  tc.checkpoint_every = cfg.get_int("checkpoint_every");
  tc.out_dir = run_dir;
  return tc;
}

void load_any_checkpoint(const std::string& path, ParamStore<float>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("open-failed", "checkpoint: cannot open " + path);
  char magic[9] = {0};
  is.read(magic, 8);
  is.close();
  if (std::string(magic) == "AADWTSs1")
    load_sparse_checkpoint(path, store);
  else
    load_checkpoint(path, store);
}

nlohmann::json summary_json(const RunConfig& cfg, Model& model,
                            const std::vector<EpochMetrics>& metrics) {
  const auto counts = model.param_count();
  const auto sp = sparsity_report(model.params());
  nlohmann::json j;
  j["accuracy_median_last5"] = test_accuracy_median_last5(metrics);
  j["params_total"] = counts.total;
  j["params_prunable"] = counts.prunable;
  j["params_delta_vs_416741"] = counts.total - 416741;
  j["sparsity_global"] = sp.global_sparsity();
  j["seed"] = cfg.get_int("seed");
  j["config"] = nlohmann::json(cfg.values());
  return j;
}

void write_summary(const std::string& run_dir, const nlohmann::json& j) {
  std::ofstream os(run_dir + "/summary.json");
  os << j.dump(2) << "\n";
}

std::pair<std::vector<TrialRecord>, SplitPlan> load_dataset(const RunConfig& cfg) {
  auto trials = read_trials(cfg.get_str("container"));
  auto manifest = read_manifest(cfg.get_str("manifest"));
  if (manifest.size() != trials.size())
    throw IoError("dim-mismatch", "manifest lists " + std::to_string(manifest.size()) +
                                      " trials but container holds " +
                                      std::to_string(trials.size()));
  return {std::move(trials), split_dataset(manifest)};
}

int cmd_synth(const RunConfig& cfg, const std::string& run_dir) {
  const std::string container = out_path(run_dir, cfg.get_str("container"));
  const std::string manifest = out_path(run_dir, cfg.get_str("manifest"));
  generate_dataset_files(synth_config(cfg), container, manifest);
  std::cout << "wrote " << cfg.get_int("n_trials") << " trials to " << container << "\n";
  return 0;
}

int cmd_preprocess(const RunConfig& cfg, const std::string& run_dir) {
  require(!cfg.get_str("eeg_csv").empty(), "preprocess: eeg_csv is required");
  require(cfg.get_int("eeg_rate") > 0, "preprocess: eeg_rate must be positive");
  require(!cfg.get_str("audio_a").empty() && !cfg.get_str("audio_b").empty(),
          "preprocess: audio_a and audio_b are required");
  const int d = int(cfg.get_int("duration_s"));
  const int label = int(cfg.get_int("label"));
  require(label == 0 || label == 1, "preprocess: label must be 0 or 1");

  std::vector<std::string> electrodes;
  {
    std::stringstream ss(cfg.get_str("electrodes"));
    std::string tok;
    while (std::getline(ss, tok, ',')) electrodes.push_back(tok);
  }
  RawSignal eeg = read_eeg_csv(cfg.get_str("eeg_csv"), cfg.get_int("eeg_rate"), electrodes);
  eeg = resample(lowpass_filter(eeg, 32.0), 64);
  RawSignal audio_a = prepare_audio(read_wav_mono(cfg.get_str("audio_a")));
  RawSignal audio_b = prepare_audio(read_wav_mono(cfg.get_str("audio_b")));

  auto segs_e = segment_trials(eeg, d, 1.0);
  auto segs_a = segment_trials(audio_a, d, 1.0);
  auto segs_b = segment_trials(audio_b, d, 1.0);
  const size_t n = std::min({segs_e.size(), segs_a.size(), segs_b.size()});
  require(n > 0, "preprocess: recording shorter than one trial");

  std::vector<TrialRecord> records;
  std::vector<TrialMeta> metas;
  const std::string source = fs::path(cfg.get_str("eeg_csv")).filename().string();
  for (size_t k = 0; k < n; ++k) {
    TrialRecord rec;
    rec.duration_s = d;
    rec.label = uint8_t(label);
    RawSignal trial;
    trial.samples = std::move(segs_e[k]);
    trial.sample_rate = 64;
    trial = highpass_filter(trial, 1.0);
    rec.eeg = normalize_trial(trial.samples).cast<float>();
    rec.spec_a =
        stft_spectrogram(make_signal(std::move(segs_a[k]), 16000), d).magnitudes.cast<float>();
    rec.spec_b =
        stft_spectrogram(make_signal(std::move(segs_b[k]), 16000), d).magnitudes.cast<float>();
    records.push_back(std::move(rec));

    TrialMeta meta;
    meta.trial_index = int64_t(k);
    meta.source_id = source;
    meta.span_begin = int64_t(k) * 64;  // 1 s hop at 64 Hz
    meta.span_end = meta.span_begin + 64 * d;
    metas.push_back(std::move(meta));
  }
  const std::string container = out_path(run_dir, cfg.get_str("container"));
  write_trials(container, records);
  write_manifest(out_path(run_dir, cfg.get_str("manifest")), metas);
  std::cout << "wrote " << records.size() << " trials to " << container << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& run_dir) {
  auto [trials, split] = load_dataset(cfg);
  Model model(model_config(cfg));
  Adam<float> opt(model.params(), cfg.get_double("lr"));
  auto metrics = train_model(model, opt, trials, split, train_config(cfg, run_dir));
  const auto j = summary_json(cfg, model, metrics);
  write_summary(run_dir, j);
  std::cout << "median-last-5 test accuracy: " << j["accuracy_median_last5"] << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& run_dir) {
  require(!cfg.get_str("checkpoint").empty(), "eval: checkpoint is required");
  Model model(model_config(cfg));
  load_any_checkpoint(cfg.get_str("checkpoint"), model.params());
  auto trials = read_trials(cfg.get_str("container"));
  nlohmann::json j;
  j["config"] = nlohmann::json(cfg.values());
  if (fs::exists(cfg.get_str("manifest"))) {
    auto manifest = read_manifest(cfg.get_str("manifest"));
    auto split = split_dataset(manifest);
    for (const auto& [name, idx] :
         {std::pair<std::string, const std::vector<int64_t>*>{"train", &split.train},
          {"validation", &split.validation},
          {"test", &split.test}}) {
      if (idx->empty()) continue;
      auto r = evaluate(model, trials, *idx, cfg.get_int("eval_batch"));
      j[name] = {{"accuracy", r.accuracy}, {"loss", r.loss}};
    }
  } else {
    std::vector<int64_t> all(trials.size());
    for (size_t i = 0; i < trials.size(); ++i) all[i] = int64_t(i);
    auto r = evaluate(model, trials, all, cfg.get_int("eval_batch"));
    j["all"] = {{"accuracy", r.accuracy}, {"loss", r.loss}};
  }
  std::ofstream os(run_dir + "/eval.json");
  os << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& run_dir) {
  const AblationMode mode = ablation_from_string(cfg.get_str("ablation"));
  require(mode != AblationMode::none, "ablate: choose an ablation mode");
  if (mode == AblationMode::remove_blstm || mode == AblationMode::remove_fc) {
    // architecture ablations retrain from scratch
    return cmd_train(cfg, run_dir);
  }
  require(!cfg.get_str("checkpoint").empty(), "ablate: checkpoint is required");
  Model model(model_config(cfg));
  load_any_checkpoint(cfg.get_str("checkpoint"), model.params());
  auto [trials, split] = load_dataset(cfg);
  const std::vector<int64_t>* eval_set = split.test.empty() ? &split.train : &split.test;
  auto full = evaluate(model, trials, *eval_set, cfg.get_int("eval_batch"));
  auto ablated = evaluate(model, trials, *eval_set, cfg.get_int("eval_batch"), mode);
  nlohmann::json j;
  j["mode"] = to_string(mode);
  j["accuracy_full"] = full.accuracy;
  j["accuracy_ablated"] = ablated.accuracy;
  j["loss_full"] = full.loss;
  j["loss_ablated"] = ablated.loss;
  j["config"] = nlohmann::json(cfg.values());
  std::ofstream os(run_dir + "/ablate.json");
  os << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_prune(const RunConfig& cfg, const std::string& run_dir) {
  require(!cfg.get_str("checkpoint").empty(), "prune: dense checkpoint is required");
  auto [trials, split] = load_dataset(cfg);
  Model model(model_config(cfg));
  load_any_checkpoint(cfg.get_str("checkpoint"), model.params());
  Adam<float> opt(model.params(), cfg.get_double("lr"));
  FinetuneSchedule schedule;
  schedule.mode = cfg.get_str("schedule") == "sequential" ? FinetuneSchedule::Mode::sequential
                                                          : FinetuneSchedule::Mode::one_shot;
  schedule.target = cfg.get_double("sparsity");
  TrainConfig tc = train_config(cfg, run_dir);
  tc.epochs = cfg.get_int("finetune_epochs");
  auto metrics = finetune(model, opt, trials, split, schedule, tc);
  save_sparse_checkpoint(run_dir + "/checkpoint-sparse.aadwts", model.params());

  auto j = summary_json(cfg, model, metrics);
  const auto sp = sparsity_report(model.params());
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : sp.layers)
    layers.push_back({{"name", l.name}, {"zeros", l.zeros}, {"total", l.total}});
  j["sparsity_layers"] = layers;
  write_summary(run_dir, j);
  std::cout << "sparsity " << sp.global_sparsity() << ", median-last-5 accuracy "
            << j["accuracy_median_last5"] << "\n";
  return 0;
}

int cmd_report(const RunConfig& cfg) {
  const std::string run = cfg.get_str("run");
  require(!run.empty(), "report: set run=<existing run directory>");
  std::ifstream cj(run + "/config.json");
  if (!cj) throw IoError("open-failed", "report: cannot open " + run + "/config.json");
  nlohmann::json stored = nlohmann::json::parse(cj);
  RunConfig rcfg;
  for (const auto& [k, v] : stored.at("config").items())
    rcfg.set(k, v.get<std::string>());

  auto metrics = read_metrics_csv(run + "/metrics.csv");
  Model model(model_config(rcfg));
  const std::string ck_sparse = run + "/checkpoint-sparse.aadwts";
  const std::string ck_final = run + "/checkpoint-final.aadwts";
  if (fs::exists(ck_sparse))
    load_any_checkpoint(ck_sparse, model.params());
  else if (fs::exists(ck_final))
    load_any_checkpoint(ck_final, model.params());

  auto j = summary_json(rcfg, model, metrics);
  write_summary(run, j);
  {
    std::ofstream os(run + "/summary.csv");
    os << "key,value\n";
    os << "accuracy_median_last5," << j["accuracy_median_last5"] << "\n";
    os << "params_total," << j["params_total"] << "\n";
    os << "params_prunable," << j["params_prunable"] << "\n";
    os << "params_delta_vs_416741," << j["params_delta_vs_416741"] << "\n";
    os << "sparsity_global," << j["sparsity_global"] << "\n";
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int run_command(const std::string& command, const RunConfig& cfg, std::string* run_dir_out) {
  if (command == "report") return cmd_report(cfg);  // regenerates in place
  const std::string run_dir = make_run_dir(command, cfg);
  if (run_dir_out) *run_dir_out = run_dir;
  if (command == "synth") return cmd_synth(cfg, run_dir);
  if (command == "preprocess") return cmd_preprocess(cfg, run_dir);
  if (command == "train") return cmd_train(cfg, run_dir);
  if (command == "eval") return cmd_eval(cfg, run_dir);
  if (command == "ablate") return cmd_ablate(cfg, run_dir);
  if (command == "prune") return cmd_prune(cfg, run_dir);
  throw std::invalid_argument("unknown command '" + command + "'");
}

}  // namespace aad
