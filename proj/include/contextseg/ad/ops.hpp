#pragma once

// Differentiable tensor operations. Every op computes its forward value
// eagerly and records a backward rule on the tape of its inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "contextseg/ad/tape.hpp"
#include "contextseg/ad/tensor.hpp"
#include "contextseg/error.hpp"

namespace cseg::ad {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

template <typename T>
Tensor<T>* grad_sink(Tape<T>& tape, Var<T> v) {
  return tape.requires_grad(v) ? &tape.grad_accumulator(v.id) : nullptr;
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void same_shape(Var<T> a, Var<T> b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void check_tapes(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw Error("operands live on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_tapes(a, b);
  detail::same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (Var<T> v : {a, b})
      if (auto* ga = detail::grad_sink(t, v))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_tapes(a, b);
  detail::same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (auto* ga = detail::grad_sink(t, a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (auto* gb = detail::grad_sink(t, b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_tapes(a, b);
  detail::same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(a.id);
    const auto& bv = t.value(b.id);
    if (auto* ga = detail::grad_sink(t, a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    if (auto* gb = detail::grad_sink(t, b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
  });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= c;
  return a.tape->record("scale", std::move(out), {a}, [a, c](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (auto* ga = detail::grad_sink(t, a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
  });
}

// x [..., D] + b [D], broadcast over leading dims.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  detail::check_tapes(x, b);
  const std::size_t d = b.value().size();
  detail::require(x.shape().back() == d && b.value().rank() == 1, "add_bias: bias length must equal last dim");
  Tensor<T> out = x.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % d];
  return x.tape->record("add_bias", std::move(out), {x, b}, [x, b, d](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (auto* gx = detail::grad_sink(t, x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (auto* gb = detail::grad_sink(t, b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % d] += g[i];
  });
}

// x [N, C, ...] + b [C].
template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> b) {
  detail::check_tapes(x, b);
  const auto& xs = x.shape();
  detail::require(xs.size() >= 2 && xs[1] == b.value().size(), "add_channel_bias: channel mismatch");
  const std::size_t channels = xs[1];
  const std::size_t planes = xs[0] * channels;
  const std::size_t inner = x.value().size() / planes;
  Tensor<T> out = x.value();
  const auto& bv = b.value();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    T* o = out.data() + pl * inner;
    const T bias = bv[pl % channels];
    for (std::size_t i = 0; i < inner; ++i) o[i] += bias;
  }
  return x.tape->record("add_channel_bias", std::move(out), {x, b},
                        [x, b, channels, planes, inner](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          if (auto* gx = detail::grad_sink(t, x))
                            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                          if (auto* gb = detail::grad_sink(t, b))
                            for (std::size_t pl = 0; pl < planes; ++pl) {
                              const T* gp = g.data() + pl * inner;
                              T acc{0};
                              for (std::size_t i = 0; i < inner; ++i) acc += gp[i];
                              (*gb)[pl % channels] += acc;
                            }
                        });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return x.tape->record("relu", std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id);
    if (auto* gx = detail::grad_sink(t, x))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > T{0}) (*gx)[i] += g[i];
  });
}

// max(x, slope * x) for 0 <= slope < 1.
template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T{0} ? v : slope * v;
  return x.tape->record("leaky_relu", std::move(out), {x}, [x, slope](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id);
    if (auto* gx = detail::grad_sink(t, x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += xv[i] > T{0} ? g[i] : slope * g[i];
  });
}

template <typename T>
T sigmoid_scalar(T z) {
  if (z >= T{0}) {
    const T e = std::exp(-z);
    return T{1} / (T{1} + e);
  }
  const T e = std::exp(z);
  return e / (T{1} + e);
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = sigmoid_scalar(v);
  return x.tape->record("sigmoid", std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    if (auto* gx = detail::grad_sink(t, x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T s{0};
  for (T v : x.value().values()) s += v;
  return x.tape->record("sum", Tensor<T>({1}, {s}), {x}, [x](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    if (auto* gx = detail::grad_sink(t, x))
      for (auto& v : gx->values()) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape->record("reshape", std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (auto* gx = detail::grad_sink(t, x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

// [N, ...] -> [N, prod(...)]
template <typename T>
Var<T> flatten(Var<T> x) {
  const std::size_t n = x.shape().at(0);
  return reshape(x, {n, x.value().size() / n});
}

namespace detail {

inline void outer_inner(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat: no inputs");
  Shape shape = parts[0].shape();
  detail::require(axis < shape.size(), "concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_tapes(p, parts[0]);
    Shape s = p.shape();
    detail::require(s.size() == shape.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      detail::require(i == axis || s[i] == shape[i], "concat: shape mismatch off the concat axis");
    total += s[axis];
  }
  shape[axis] = total;
  std::size_t outer, inner;
  detail::outer_inner(shape, axis, outer, inner);
  Tensor<T> out(shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[axis];
    const auto& pv = p.value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * len * inner, len * inner, out.data() + (o * total + off) * inner);
    off += len;
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(
      "concat", std::move(out), parts, [inputs, offsets, outer, inner, total, axis](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          auto* gp = detail::grad_sink(t, inputs[k]);
          if (!gp) continue;
          const std::size_t len = t.value(inputs[k].id).shape()[axis];
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < len * inner; ++i)
              (*gp)[o * len * inner + i] += g[(o * total + offsets[k]) * inner + i];
        }
      });
}

template <typename T>
Var<T> concat(std::initializer_list<Var<T>> parts, std::size_t axis) {
  return concat(std::span<const Var<T>>(parts.begin(), parts.size()), axis);
}

// Elements [begin, end) along `axis`.
template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end) {
  Shape shape = x.shape();
  detail::require(axis < shape.size() && begin < end && end <= shape[axis], "slice: range out of bounds");
  const std::size_t full = shape[axis];
  const std::size_t len = end - begin;
  shape[axis] = len;
  std::size_t outer, inner;
  detail::outer_inner(shape, axis, outer, inner);
  Tensor<T> out(shape);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + (o * full + begin) * inner, len * inner, out.data() + o * len * inner);
  return x.tape->record("slice", std::move(out), {x}, [x, outer, inner, full, begin, len](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (auto* gx = detail::grad_sink(t, x))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < len * inner; ++i) (*gx)[(o * full + begin) * inner + i] += g[o * len * inner + i];
  });
}

// Rows of `table` [R, D] selected by `indices`.
template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<std::size_t> indices) {
  const auto& ts = table.shape();
  detail::require(ts.size() == 2 && !indices.empty(), "gather_rows: table must be 2-D and indices nonempty");
  const std::size_t d = ts[1];
  Tensor<T> out({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    detail::require(indices[r] < ts[0], "gather_rows: index out of range");
    std::copy_n(table.value().data() + indices[r] * d, d, out.data() + r * d);
  }
  return table.tape->record("gather_rows", std::move(out), {table},
                            [table, indices = std::move(indices), d](Tape<T>& t, std::size_t self) {
                              const auto& g = t.grad(self);
                              if (auto* gt = detail::grad_sink(t, table))
                                for (std::size_t r = 0; r < indices.size(); ++r)
                                  for (std::size_t c = 0; c < d; ++c) (*gt)[indices[r] * d + c] += g[r * d + c];
                            });
}

// ---------------------------------------------------------------------------
// Linear algebra

// a [M, K] x b [K, N]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_tapes(a, b);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  detail::require(as.size() == 2 && bs.size() == 2 && as[1] == bs[0],
                  "matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor<T> out({m, n});
  MatMap<T>(out.data(), m, n).noalias() = ConstMatMap<T>(a.value().data(), m, k) * ConstMatMap<T>(b.value().data(), k, n);
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, std::size_t self) {
    ConstMatMap<T> g(t.grad(self).data(), m, n);
    if (auto* ga = detail::grad_sink(t, a))
      MatMap<T>(ga->data(), m, k).noalias() += g * ConstMatMap<T>(t.value(b.id).data(), k, n).transpose();
    if (auto* gb = detail::grad_sink(t, b))
      MatMap<T>(gb->data(), k, n).noalias() += ConstMatMap<T>(t.value(a.id).data(), m, k).transpose() * g;
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const auto& s = a.shape();
  detail::require(s.size() == 2, "transpose: needs a 2-D tensor");
  const std::size_t m = s[0], n = s[1];
  Tensor<T> out({n, m});
  MatMap<T>(out.data(), n, m) = ConstMatMap<T>(a.value().data(), m, n).transpose();
  return a.tape->record("transpose", std::move(out), {a}, [a, m, n](Tape<T>& t, std::size_t self) {
    if (auto* ga = detail::grad_sink(t, a))
      MatMap<T>(ga->data(), m, n) += ConstMatMap<T>(t.grad(self).data(), n, m).transpose();
  });
}

// x [N, in] * w [in, out] + b [out]
template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  detail::check_tapes(x, w);
  detail::check_tapes(x, b);
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  detail::require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[0] && b.value().size() == ws[1],
                  "dense: incompatible shapes " + shape_str(xs) + " x " + shape_str(ws));
  const std::size_t n = xs[0], in = xs[1], outd = ws[1];
  Tensor<T> out({n, outd});
  MatMap<T> om(out.data(), n, outd);
  om.noalias() = ConstMatMap<T>(x.value().data(), n, in) * ConstMatMap<T>(w.value().data(), in, outd);
  om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data(), outd);
  return x.tape->record("dense", std::move(out), {x, w, b}, [x, w, b, n, in, outd](Tape<T>& t, std::size_t self) {
    ConstMatMap<T> g(t.grad(self).data(), n, outd);
    if (auto* gx = detail::grad_sink(t, x))
      MatMap<T>(gx->data(), n, in).noalias() += g * ConstMatMap<T>(t.value(w.id).data(), in, outd).transpose();
    if (auto* gw = detail::grad_sink(t, w))
      MatMap<T>(gw->data(), in, outd).noalias() += ConstMatMap<T>(t.value(x.id).data(), n, in).transpose() * g;
    if (auto* gb = detail::grad_sink(t, b))
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->data(), outd) += g.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Normalization and probabilities

// Normalizes each row of the last dimension, then applies gain and bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-12)) {
  detail::check_tapes(x, gain);
  detail::check_tapes(x, bias);
  const std::size_t d = x.shape().back();
  detail::require(gain.value().size() == d && bias.value().size() == d, "layer_norm: gain/bias length mismatch");
  const std::size_t rows = x.value().size() / d;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.value().size());
  std::vector<T> inv_std(rows);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu{0};
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    inv_std[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (row[i] - mu) * inv_std[r];
      out[r * d + i] = gv[i] * xhat[r * d + i] + bv[i];
    }
  }
  return x.tape->record("layer_norm", std::move(out), {x, gain, bias},
                        [x, gain, bias, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                            Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          const auto& gv = t.value(gain.id);
                          auto* gx = detail::grad_sink(t, x);
                          auto* gg = detail::grad_sink(t, gain);
                          auto* gb = detail::grad_sink(t, bias);
                          std::vector<T> dxhat(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                            T mean_d{0}, mean_dx{0};
                            for (std::size_t i = 0; i < d; ++i) {
                              const std::size_t k = r * d + i;
                              if (gg) (*gg)[i] += g[k] * xhat[k];
                              if (gb) (*gb)[i] += g[k];
                              dxhat[i] = g[k] * gv[i];
                              mean_d += dxhat[i];
                              mean_dx += dxhat[i] * xhat[k];
                            }
                            if (!gx) continue;
                            mean_d /= static_cast<T>(d);
                            mean_dx /= static_cast<T>(d);
                            for (std::size_t i = 0; i < d; ++i) {
                              const std::size_t k = r * d + i;
                              (*gx)[k] += inv_std[r] * (dxhat[i] - mean_d - xhat[k] * mean_dx);
                            }
                          }
                        });
}

template <typename T>
Var<T> softmax_lastdim(Var<T> x) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.value().size() / d;
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(in, in + d);
    T s{0};
    for (std::size_t i = 0; i < d; ++i) s += (o[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < d; ++i) o[i] /= s;
  }
  return x.tape->record("softmax", std::move(out), {x}, [x, d, rows](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto* gx = detail::grad_sink(t, x);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t i = 0; i < d; ++i) dot += g[r * d + i] * y[r * d + i];
      for (std::size_t i = 0; i < d; ++i) (*gx)[r * d + i] += y[r * d + i] * (g[r * d + i] - dot);
    }
  });
}

// Inverted dropout with a mask drawn from `seed`; identity when not training.
template <typename T>
Var<T> dropout(Var<T> x, double rate, std::uint64_t seed, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const T s = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.value().size());
  for (auto& m : mask) m = keep(rng) ? s : T{0};
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape->record("dropout", std::move(out), {x}, [x, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (auto* gx = detail::grad_sink(t, x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Losses

// Mean of squared elementwise differences.
template <typename T>
Var<T> mse_loss(Var<T> a, Var<T> b) {
  detail::check_tapes(a, b);
  detail::same_shape(a, b, "mse_loss");
  const auto& av = a.value();
  const auto& bv = b.value();
  T s{0};
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const T n = static_cast<T>(av.size());
  return a.tape->record("mse_loss", Tensor<T>({1}, {s / n}), {a, b}, [a, b, n](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    const auto& av = t.value(a.id);
    const auto& bv = t.value(b.id);
    auto* ga = detail::grad_sink(t, a);
    auto* gb = detail::grad_sink(t, b);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T d = T{2} * (av[i] - bv[i]) / n * g;
      if (ga) (*ga)[i] += d;
      if (gb) (*gb)[i] -= d;
    }
  });
}

}  // namespace cseg::ad
