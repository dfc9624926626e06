#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "contextseg/ad/params.hpp"

namespace cseg::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are kept per parameter in store order.
template <typename T>
class Adam {
 public:
  Adam(ParameterStore<T>& store, AdamConfig cfg = {}) : store_(&store), cfg_(cfg) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_.emplace_back(store[i].value.shape());
      v_.emplace_back(store[i].value.shape());
    }
  }

  const AdamConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t steps() const noexcept { return t_; }

  // Parameters without a gradient buffer are skipped.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store_->size(); ++i) {
      auto& p = (*store_)[i];
      if (p.grad.shape() != p.value.shape()) continue;
      T* w = p.value.data();
      const T* g = p.grad.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double gk = g[k];
        const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        w[k] = static_cast<T>(w[k] - cfg_.lr * (mk / c1) / (std::sqrt(vk / c2) + cfg_.eps));
      }
    }
  }

  // Named tensors "<prefix>m/<param>", "<prefix>v/<param>" and "<prefix>t".
  std::vector<std::pair<std::string, Tensor<T>>> export_state(const std::string& prefix = "opt/") const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (std::size_t i = 0; i < store_->size(); ++i) {
      out.emplace_back(prefix + "m/" + (*store_)[i].name, m_[i]);
      out.emplace_back(prefix + "v/" + (*store_)[i].name, v_[i]);
    }
    out.emplace_back(prefix + "t", Tensor<T>({1}, static_cast<T>(t_)));
    return out;
  }

  template <typename Lookup>
  void import_state(Lookup&& find, const std::string& prefix = "opt/") {
    for (std::size_t i = 0; i < store_->size(); ++i) {
      const Tensor<T>* m = find(prefix + "m/" + (*store_)[i].name);
      const Tensor<T>* v = find(prefix + "v/" + (*store_)[i].name);
      if (!m || !v || m->shape() != m_[i].shape() || v->shape() != v_[i].shape())
        throw Error("optimizer state missing or mismatched for '" + (*store_)[i].name + "'");
      m_[i] = *m;
      v_[i] = *v;
    }
    const Tensor<T>* t = find(prefix + "t");
    if (!t || t->size() != 1) throw Error("optimizer step counter missing");
    t_ = static_cast<std::uint64_t>(std::llround(static_cast<double>((*t)[0])));
  }

 private:
  ParameterStore<T>* store_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace cseg::ad
