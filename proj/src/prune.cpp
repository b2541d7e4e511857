#include "aad/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aad {

PruneMask compute_prune_mask(const ParamStore<float>& store, double sparsity) {
  require(sparsity >= 0.0 && sparsity < 1.0, "prune: sparsity must be in [0,1)");
  PruneMask out;
  out.target = sparsity;
  for (const auto& p : store.params()) {
    if (!p.prunable) continue;
    const Tensor<float>& w = p.var->value;
    const int64_t n = w.numel();
    const int64_t k = int64_t(std::floor(sparsity * double(n)));
    auto mask = std::make_shared<Tensor<float>>(Tensor<float>::full(w.shape, 1.f));
    if (k > 0) {
      std::vector<int64_t> order(static_cast<size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        const float ma = std::abs(w[a]), mb = std::abs(w[b]);
        if (ma != mb) return ma < mb;
        return a < b;  // ties by ascending flat index
      });
      for (int64_t i = 0; i < k; ++i) (*mask)[order[size_t(i)]] = 0.f;
    }
    out.masks[p.name] = std::move(mask);
  }
  return out;
}

void apply_mask(ParamStore<float>& store, Adam<float>* opt, const PruneMask& mask) {
  for (const auto& [name, m] : mask.masks) {
    Param<float>* p = store.find(name);
    require(p != nullptr, "apply_mask: unknown parameter " + name);
    require(m->shape == p->var->value.shape, "apply_mask: shape mismatch for " + name);
    Tensor<float>& w = p->var->value;
    for (int64_t i = 0; i < w.numel(); ++i)
      if ((*m)[i] == 0.f) w[i] = 0.f;
    if (opt) opt->set_mask(name, m);
  }
}

SparsityReport sparsity_report(const ParamStore<float>& store) {
  SparsityReport rep;
  for (const auto& p : store.params()) {
    rep.total_params += p.var->value.numel();
    if (!p.prunable) continue;
    LayerSparsity ls;
    ls.name = p.name;
    ls.total = p.var->value.numel();
    for (int64_t i = 0; i < ls.total; ++i)
      if (p.var->value[i] == 0.f) ++ls.zeros;
    rep.prunable_zeros += ls.zeros;
    rep.prunable_total += ls.total;
    rep.layers.push_back(std::move(ls));
  }
  return rep;
}

double FinetuneSchedule::sparsity_at(int64_t epoch, int64_t total_epochs) const {
  if (mode == Mode::one_shot) return target;
  const int64_t ramp = std::max<int64_t>(1, (total_epochs + 1) / 2);
  const double frac = std::min(1.0, double(epoch) / double(ramp));
  return target * frac;
}

std::vector<EpochMetrics> finetune(Model& model, Adam<float>& opt,
                                   const std::vector<TrialRecord>& trials,
                                   const SplitPlan& split, const FinetuneSchedule& schedule,
                                   const TrainConfig& cfg) {
  auto current = std::make_shared<PruneMask>();
  auto reprune = [&](double s) {
    *current = compute_prune_mask(model.params(), s);
    apply_mask(model.params(), &opt, *current);
  };

  TrainHooks hooks;
  if (schedule.mode == FinetuneSchedule::Mode::one_shot) {
    reprune(schedule.target);
  } else {
    hooks.before_epoch = [&, reprune](int64_t epoch) {
      reprune(schedule.sparsity_at(epoch, cfg.epochs));
    };
  }
  hooks.after_epoch = [&](int64_t epoch) {
    // pruned weights must still be exactly zero
    for (const auto& [name, m] : current->masks) {
      const Param<float>* p = model.params().find(name);
      for (int64_t i = 0; i < m->numel(); ++i) {
        if ((*m)[i] == 0.f && p->var->value[i] != 0.f)
          throw std::logic_error("finetune: masked weight resurrected in " + name +
                                 " after epoch " + std::to_string(epoch));
      }
    }
  };
  return train_model(model, opt, trials, split, cfg, hooks);
}

}  // namespace aad
