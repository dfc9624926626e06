#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <vector>

#include "contextseg/ad/ops.hpp"

namespace cseg::ad {

// Fused per-head softmax(q_h k_h^T / sqrt(d_h)) v_h. q [Tq, D], k/v [Tk, D].
// With `causal`, query i only sees keys j <= i + (Tk - Tq).
// When `weights_out` is given it receives the [heads, Tq, Tk] attention weights.
template <typename T>
Var<T> attention_core(Var<T> q, Var<T> k, Var<T> v, std::size_t heads, bool causal,
                      Tensor<T>* weights_out = nullptr) {
  detail::check_tapes(q, k);
  detail::check_tapes(q, v);
  const auto& qs = q.shape();
  const auto& ks = k.shape();
  detail::require(qs.size() == 2 && ks.size() == 2 && qs[1] == ks[1] && k.shape() == v.shape(),
                  "attention: incompatible q/k/v shapes");
  const std::size_t d = qs[1];
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: model dim not divisible by heads");
  const std::size_t tq = qs[0], tk = ks[0], dh = d / heads;
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(dh));
  const long shift = static_cast<long>(tk) - static_cast<long>(tq);

  auto weights = std::make_shared<std::vector<T>>(heads * tq * tk, T{0});
  Tensor<T> out({tq, d});
  const T* qv = q.value().data();
  const T* kv = k.value().data();
  const T* vv = v.value().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < tq; ++i) {
      T* w = weights->data() + (h * tq + i) * tk;
      const long last = causal ? static_cast<long>(i) + shift : static_cast<long>(tk) - 1;
      detail::require(last >= 0, "attention: causal mask hides every key");
      T mx = -std::numeric_limits<T>::infinity();
      for (long j = 0; j <= last; ++j) {
        T s{0};
        for (std::size_t c = 0; c < dh; ++c) s += qv[i * d + off + c] * kv[static_cast<std::size_t>(j) * d + off + c];
        w[j] = s * inv_scale;
        mx = std::max(mx, w[j]);
      }
      T z{0};
      for (long j = 0; j <= last; ++j) z += (w[j] = std::exp(w[j] - mx));
      for (long j = 0; j <= last; ++j) w[j] /= z;
      for (std::size_t c = 0; c < dh; ++c) {
        T acc{0};
        for (long j = 0; j <= last; ++j) acc += w[j] * vv[static_cast<std::size_t>(j) * d + off + c];
        out[i * d + off + c] = acc;
      }
    }
  }
  if (weights_out) *weights_out = Tensor<T>({heads, tq, tk}, *weights);

  return q.tape->record(
      "attention", std::move(out), {q, k, v},
      [q, k, v, heads, tq, tk, d, dh, inv_scale, weights](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const T* qv = t.value(q.id).data();
        const T* kv = t.value(k.id).data();
        const T* vv = t.value(v.id).data();
        auto* gq = detail::grad_sink(t, q);
        auto* gk = detail::grad_sink(t, k);
        auto* gv = detail::grad_sink(t, v);
        std::vector<T> dw(tk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < tq; ++i) {
            const T* w = weights->data() + (h * tq + i) * tk;
            T dot{0};
            for (std::size_t j = 0; j < tk; ++j) {
              T s{0};
              for (std::size_t c = 0; c < dh; ++c) s += g[i * d + off + c] * vv[j * d + off + c];
              dw[j] = s;
              dot += s * w[j];
              if (gv)
                for (std::size_t c = 0; c < dh; ++c) (*gv)[j * d + off + c] += w[j] * g[i * d + off + c];
            }
            for (std::size_t j = 0; j < tk; ++j) {
              const T ds = w[j] * (dw[j] - dot) * inv_scale;
              if (ds == T{0}) continue;
              for (std::size_t c = 0; c < dh; ++c) {
                if (gq) (*gq)[i * d + off + c] += ds * kv[j * d + off + c];
                if (gk) (*gk)[j * d + off + c] += ds * qv[i * d + off + c];
              }
            }
          }
        }
      });
}

// Learned projections around attention_core.
template <typename T>
struct AttentionWeights {
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
Var<T> multi_head_attention(Var<T> query_in, Var<T> kv_in, const AttentionWeights<T>& w, std::size_t heads,
                            bool causal, Tensor<T>* weights_out = nullptr) {
  const std::size_t d = query_in.shape().at(1);
  if (heads == 0 || d % heads != 0) throw ShapeError("multi_head_attention: model dim not divisible by heads");
  Var<T> q = dense(query_in, w.wq, w.bq);
  Var<T> k = dense(kv_in, w.wk, w.bk);
  Var<T> v = dense(kv_in, w.wv, w.bv);
  return dense(attention_core(q, k, v, heads, causal, weights_out), w.wo, w.bo);
}

}  // namespace cseg::ad
