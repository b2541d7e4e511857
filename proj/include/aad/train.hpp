#ifndef AAD_TRAIN_HPP
#define AAD_TRAIN_HPP

#include <functional>
#include <string>
#include <vector>

#include "aad/model.hpp"
#include "aad/split.hpp"

namespace aad {

struct TrainConfig {
  int64_t epochs = 80;
  int64_t batch_size = 32;
  int64_t micro_batch = 8;  // batch-norm / gradient-accumulation granularity
  double lr = 5e-4;
  uint64_t seed = 1;
  int64_t eval_batch = 32;
  int64_t checkpoint_every = 10;
  std::string out_dir;  // when nonempty: metrics.csv and checkpoints
};

struct EpochMetrics {
  int64_t epoch = 0;  // 1-based
  std::string split;  // train | validation | test
  double loss = 0.0;
  double accuracy = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

// Eval-mode accuracy and mean loss over the indexed trials. Probability ties
// resolve to class 0.
EvalResult evaluate(Model& model, const std::vector<TrialRecord>& trials,
                    const std::vector<int64_t>& indices, int64_t batch = 32,
                    AblationMode mode = AblationMode::none);

struct TrainHooks {
  std::function<void(int64_t)> before_epoch;  // 1-based, runs before batches
  std::function<void(int64_t)> after_epoch;   // runs after the epoch's evals
};

// Seeded-shuffle mini-batch training with Adam; emits loss/accuracy for all
// three splits every epoch. Non-finite layer outputs abort with a diagnostic
// naming the first offending layer.
std::vector<EpochMetrics> train_model(Model& model, Adam<float>& opt,
                                      const std::vector<TrialRecord>& trials,
                                      const SplitPlan& split, const TrainConfig& cfg,
                                      const TrainHooks& hooks = {});

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics);
std::vector<EpochMetrics> read_metrics_csv(const std::string& path);

// median-last-5 test accuracy pulled out of a metrics list
double test_accuracy_median_last5(const std::vector<EpochMetrics>& metrics);

}  // namespace aad

#endif  // AAD_TRAIN_HPP
