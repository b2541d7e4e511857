#ifndef AAD_NN_HPP
#define AAD_NN_HPP

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "aad/graph.hpp"

namespace aad {

// Named learnable parameter. `prunable` marks weight matrices/kernels that
// magnitude pruning may zero; biases and batch-norm parameters are not.
template <typename T>
struct Param {
  std::string name;
  Var<T> var;
  bool prunable = false;
};

// Ordered registry of learnable parameters plus named non-learnable state
// (batch-norm running statistics). Order defines checkpoint layout.
template <typename T>
class ParamStore {
 public:
  Var<T> add(std::string name, Tensor<T> init, bool prunable) {
    auto v = make_leaf(std::move(init), true, name);
    params_.push_back({std::move(name), v, prunable});
    return v;
  }

  void add_state(std::string name, Tensor<T>* t) { state_.push_back({std::move(name), t}); }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  std::vector<std::pair<std::string, Tensor<T>*>>& state() { return state_; }
  const std::vector<std::pair<std::string, Tensor<T>*>>& state() const { return state_; }

  Param<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.var->grad = Tensor<T>{};
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (auto& p : params_) n += p.var->value.numel();
    return n;
  }

  int64_t prunable_count() const {
    int64_t n = 0;
    for (auto& p : params_)
      if (p.prunable) n += p.var->value.numel();
    return n;
  }

 private:
  std::vector<Param<T>> params_;
  std::vector<std::pair<std::string, Tensor<T>*>> state_;
};

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
template <typename T>
Tensor<T> init_uniform_fan_in(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  return Tensor<T>::uniform(std::move(shape), rng, T(-bound), T(bound));
}

// Adam with bias correction. An optional per-parameter mask pins pruned
// weights: gradients and moments are masked so momentum cannot push a pruned
// weight off zero, and the weight itself is re-masked after each update.
template <typename T>
class Adam {
 public:
  Adam(ParamStore<T>& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : store.params()) {
      m_.push_back(Tensor<T>::zeros(p.var->value.shape));
      v_.push_back(Tensor<T>::zeros(p.var->value.shape));
    }
    masks_.resize(store.params().size());
  }

  // mask: 1 = keep, 0 = pruned; moments at masked entries are reset
  void set_mask(const std::string& name, std::shared_ptr<const Tensor<T>> mask) {
    auto& ps = store_.params();
    for (size_t i = 0; i < ps.size(); ++i) {
      if (ps[i].name != name) continue;
      require(!mask || mask->shape == ps[i].var->value.shape, "adam mask: shape mismatch");
      masks_[i] = std::move(mask);
      if (masks_[i]) {
        for (int64_t k = 0; k < m_[i].numel(); ++k) {
          if ((*masks_[i])[k] == T(0)) {
            m_[i][k] = T(0);
            v_[i][k] = T(0);
          }
        }
      }
      return;
    }
    throw std::invalid_argument("adam mask: unknown parameter " + name);
  }

  void clear_masks() {
    for (auto& m : masks_) m.reset();
  }

  int64_t step_count() const { return step_; }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, double(step_));
    const double bc2 = 1.0 - std::pow(beta2_, double(step_));
    auto& ps = store_.params();
    for (size_t i = 0; i < ps.size(); ++i) {
      auto& p = ps[i];
      if (p.var->grad.empty()) continue;
      Tensor<T>& w = p.var->value;
      const Tensor<T>& g = p.var->grad;
      const Tensor<T>* mask = masks_[i] ? masks_[i].get() : nullptr;
      for (int64_t k = 0; k < w.numel(); ++k) {
        T gk = g[k];
        if (mask && (*mask)[k] == T(0)) continue;  // moments and weight stay zero
        m_[i][k] = T(beta1_ * double(m_[i][k]) + (1.0 - beta1_) * double(gk));
        v_[i][k] = T(beta2_ * double(v_[i][k]) + (1.0 - beta2_) * double(gk) * double(gk));
        const double mhat = double(m_[i][k]) / bc1;
        const double vhat = double(v_[i][k]) / bc2;
        w[k] = T(double(w[k]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  ParamStore<T>& store_;
  double lr_, beta1_, beta2_, eps_;
  int64_t step_ = 0;
  std::vector<Tensor<T>> m_, v_;
  std::vector<std::shared_ptr<const Tensor<T>>> masks_;
};

}  // namespace aad

#endif  // AAD_NN_HPP
