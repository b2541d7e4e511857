#include "aad/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "aad/checkpoint.hpp"
#include "aad/stats.hpp"

namespace aad {

namespace {

std::vector<const TrialRecord*> gather(const std::vector<TrialRecord>& trials,
                                       const std::vector<int64_t>& indices, int64_t lo,
                                       int64_t hi) {
  std::vector<const TrialRecord*> out;
  out.reserve(static_cast<size_t>(hi - lo));
  for (int64_t k = lo; k < hi; ++k) out.push_back(&trials[size_t(indices[size_t(k)])]);
  return out;
}

// micro-batch sizes covering `total`, avoiding a trailing singleton (which
// train-mode batchnorm rejects) by folding it into the previous micro
std::vector<int64_t> micro_sizes(int64_t total, int64_t micro) {
  std::vector<int64_t> sizes;
  int64_t left = total;
  while (left > 0) {
    int64_t take = std::min(micro, left);
    if (left - take == 1) take = std::min(left, take + 1);
    sizes.push_back(take);
    left -= take;
  }
  return sizes;
}

}  // namespace

EvalResult evaluate(Model& model, const std::vector<TrialRecord>& trials,
                    const std::vector<int64_t>& indices, int64_t batch, AblationMode mode) {
  require(!indices.empty(), "evaluate: empty trial set");
  NoGradGuard ng;
  double loss_sum = 0.0;
  int64_t correct = 0;
  const int64_t n = int64_t(indices.size());
  for (int64_t lo = 0; lo < n; lo += batch) {
    const int64_t hi = std::min(n, lo + batch);
    auto batch_trials = gather(trials, indices, lo, hi);
    ModelInput input = make_input(batch_trials);
    auto logits = model.forward(input, false, mode);
    auto sx = softmax_crossentropy(logits, input.labels);
    loss_sum += double(sx.loss->value[0]) * double(hi - lo);
    for (int64_t i = 0; i < hi - lo; ++i) {
      const int pred = sx.probabilities.at(i, 1) > sx.probabilities.at(i, 0) ? 1 : 0;
      if (pred == input.labels[size_t(i)]) ++correct;
    }
  }
  return {double(correct) / double(n), loss_sum / double(n)};
}

std::vector<EpochMetrics> train_model(Model& model, Adam<float>& opt,
                                      const std::vector<TrialRecord>& trials,
                                      const SplitPlan& split, const TrainConfig& cfg,
                                      const TrainHooks& hooks) {
  require(!split.train.empty(), "train: empty training split");
  require(cfg.epochs >= 1 && cfg.batch_size >= 2, "train: bad epoch/batch configuration");

  model.seed_dropout(mix_seed(cfg.seed, 0xd20f));
  std::vector<EpochMetrics> metrics;
  std::ofstream csv;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    csv.open(cfg.out_dir + "/metrics.csv");
    csv << "epoch,split,loss,accuracy\n";
  }
  auto emit = [&](int64_t epoch, const std::string& split_name, double loss, double acc) {
    metrics.push_back({epoch, split_name, loss, acc});
    if (csv.is_open()) {
      csv << epoch << "," << split_name << "," << loss << "," << acc << "\n";
      csv.flush();
    }
  };

  std::vector<int64_t> order = split.train;
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (hooks.before_epoch) hooks.before_epoch(epoch);
    Rng shuffle_rng(mix_seed(cfg.seed, uint64_t(epoch)));
    shuffle_rng.shuffle(order);

    double train_loss = 0.0;
    int64_t train_correct = 0, seen = 0;
    const int64_t n = int64_t(order.size());
    int64_t batch_index = 0;
    for (int64_t lo = 0; lo < n; lo += cfg.batch_size, ++batch_index) {
      int64_t hi = std::min(n, lo + cfg.batch_size);
      if (n - hi == 1) hi = n;  // avoid a trailing 1-sample batch
      const int64_t bn = hi - lo;
      model.params().zero_grad();
      int64_t off = lo;
      try {
        for (int64_t ms : micro_sizes(bn, std::min(cfg.micro_batch, cfg.batch_size))) {
          auto batch_trials = gather(trials, order, off, off + ms);
          ModelInput input = make_input(batch_trials);
          auto logits = model.forward(input, true);
          auto sx = softmax_crossentropy(logits, input.labels);
          Tensor<float> seed({1});
          seed[0] = float(double(ms) / double(bn));
          backward(sx.loss, seed);
          train_loss += double(sx.loss->value[0]) * double(ms);
          for (int64_t i = 0; i < ms; ++i) {
            const int pred = sx.probabilities.at(i, 1) > sx.probabilities.at(i, 0) ? 1 : 0;
            if (pred == input.labels[size_t(i)]) ++train_correct;
          }
          off += ms;
          seen += ms;
        }
      } catch (const NonFiniteError& e) {
        throw std::runtime_error(std::string(e.what()) + " at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_index));
      }
      opt.step();
    }

    emit(epoch, "train", train_loss / double(seen), double(train_correct) / double(seen));
    if (!split.validation.empty()) {
      auto v = evaluate(model, trials, split.validation, cfg.eval_batch);
      emit(epoch, "validation", v.loss, v.accuracy);
    }
    if (!split.test.empty()) {
      auto t = evaluate(model, trials, split.test, cfg.eval_batch);
      emit(epoch, "test", t.loss, t.accuracy);
    }
    if (hooks.after_epoch) hooks.after_epoch(epoch);

    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "/checkpoint-epoch-%03lld.aadwts",
                    static_cast<long long>(epoch));
      save_checkpoint(cfg.out_dir + buf, model.params());
    }
  }
  if (!cfg.out_dir.empty())
    save_checkpoint(cfg.out_dir + "/checkpoint-final.aadwts", model.params());
  return metrics;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics) {
  std::ofstream os(path);
  if (!os) throw IoError("open-failed", "write_metrics_csv: cannot open " + path);
  os << "epoch,split,loss,accuracy\n";
  for (const auto& m : metrics)
    os << m.epoch << "," << m.split << "," << m.loss << "," << m.accuracy << "\n";
}

std::vector<EpochMetrics> read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("open-failed", "read_metrics_csv: cannot open " + path);
  std::vector<EpochMetrics> metrics;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EpochMetrics m;
    const size_t c1 = line.find(',');
    const size_t c2 = line.find(',', c1 + 1);
    const size_t c3 = line.find(',', c2 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos || c3 == std::string::npos)
      throw IoError("bad-csv", "read_metrics_csv: malformed row '" + line + "'");
    m.epoch = std::stoll(line.substr(0, c1));
    m.split = line.substr(c1 + 1, c2 - c1 - 1);
    m.loss = std::stod(line.substr(c2 + 1, c3 - c2 - 1));
    m.accuracy = std::stod(line.substr(c3 + 1));
    metrics.push_back(std::move(m));
  }
  return metrics;
}

double test_accuracy_median_last5(const std::vector<EpochMetrics>& metrics) {
  std::vector<double> acc;
  for (const auto& m : metrics)
    if (m.split == "test") acc.push_back(m.accuracy);
  return median_last_k(acc, std::min<int64_t>(5, int64_t(acc.size())));
}

}  // namespace aad
