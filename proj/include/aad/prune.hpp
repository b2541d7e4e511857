#ifndef AAD_PRUNE_HPP
#define AAD_PRUNE_HPP

#include <map>
#include <memory>
#include <string>

#include "aad/train.hpp"

namespace aad {

// Per-parameter keep masks (1 = keep, 0 = pruned) for every prunable tensor.
struct PruneMask {
  std::map<std::string, std::shared_ptr<Tensor<float>>> masks;
  double target = 0.0;
};

// Per-layer magnitude pruning: within each prunable tensor the floor(s*|W|)
// smallest-magnitude entries are masked, ties broken by ascending flat index.
PruneMask compute_prune_mask(const ParamStore<float>& store, double sparsity);

// Zeroes masked weights and, when an optimizer is given, pins them there:
// masked gradients/moments are ignored so fine-tuning cannot resurrect them.
void apply_mask(ParamStore<float>& store, Adam<float>* opt, const PruneMask& mask);

struct LayerSparsity {
  std::string name;
  int64_t zeros = 0;
  int64_t total = 0;
};

// Exact zero counts over prunable parameters; bias and batch-norm tensors are
// excluded from both numerator and denominator.
struct SparsityReport {
  std::vector<LayerSparsity> layers;
  int64_t prunable_zeros = 0;
  int64_t prunable_total = 0;
  int64_t total_params = 0;

  double global_sparsity() const {
    return prunable_total ? double(prunable_zeros) / double(prunable_total) : 0.0;
  }
};

SparsityReport sparsity_report(const ParamStore<float>& store);

struct FinetuneSchedule {
  enum class Mode { one_shot, sequential };
  Mode mode = Mode::one_shot;
  double target = 0.5;

  // sequential: linear ramp to the target over the first half of the epochs,
  // constant afterwards; one_shot: full target from epoch 1
  double sparsity_at(int64_t epoch, int64_t total_epochs) const;
};

// Prunes a trained model and fine-tunes the survivors. Masked weights are
// asserted to stay exactly zero after every epoch.
std::vector<EpochMetrics> finetune(Model& model, Adam<float>& opt,
                                   const std::vector<TrialRecord>& trials,
                                   const SplitPlan& split, const FinetuneSchedule& schedule,
                                   const TrainConfig& cfg);

}  // namespace aad

#endif  // AAD_PRUNE_HPP
