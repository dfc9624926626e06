#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "contextseg/ad/tape.hpp"
#include "contextseg/ad/tensor.hpp"
#include "contextseg/error.hpp"

namespace cseg::ad {

enum class Init { kXavierUniform, kZeros, kOnes };

// fan_in / fan_out for dense [in, out] and conv [F, C, kh, kw] weights.
inline std::pair<double, double> fans(const Shape& s) {
  if (s.size() == 4) {
    const double rf = static_cast<double>(s[2] * s[3]);
    return {s[1] * rf, s[0] * rf};
  }
  if (s.size() == 2) return {static_cast<double>(s[0]), static_cast<double>(s[1])};
  return {static_cast<double>(shape_size(s)), static_cast<double>(shape_size(s))};
}

// Named parameters in insertion order; addresses stay stable.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(std::string name, Shape shape, Init init, std::mt19937_64& rng) {
    if (find(name)) throw Error("duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    p->value = Tensor<T>(shape);
    switch (init) {
      case Init::kZeros: break;
      case Init::kOnes: p->value.fill(T{1}); break;
      case Init::kXavierUniform: {
        const auto [fi, fo] = fans(shape);
        const double bound = std::sqrt(6.0 / (fi + fo));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : p->value.values()) v = static_cast<T>(u(rng));
        break;
      }
    }
    params_.push_back(std::move(p));
    return *params_.back();
  }

  const Parameter<T>* find(std::string_view name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  const Parameter<T>& get(std::string_view name) const {
    if (const auto* p = find(name)) return *p;
    throw Error("no parameter named '" + std::string(name) + "'");
  }

  Parameter<T>& get(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw Error("no parameter named '" + std::string(name) + "'");
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() const {
    for (const auto& p : params_) p->zero_grad();
  }

  // Copies values from a store with identical names and shapes.
  template <typename U>
  void assign_from(const ParameterStore<U>& other) {
    if (other.size() != size()) throw Error("parameter count mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& src = other[i];
      auto& dst = *params_[i];
      if (src.name != dst.name || src.value.shape() != dst.value.shape())
        throw Error("parameter mismatch at '" + dst.name + "'");
      dst.value = src.value.template cast<T>();
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

}  // namespace cseg::ad
