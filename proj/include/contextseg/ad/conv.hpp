#pragma once

// 2-D cross-correlation via im2col + a single GEMM over the whole batch, and
// nearest-neighbour 2x upsampling.

#include <algorithm>
#include <cstddef>
#include <vector>

#include "contextseg/ad/ops.hpp"

namespace cseg::ad {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_pixels() const { return out_h * out_w; }
  std::size_t columns() const { return batch * out_pixels(); }
};

namespace detail {

// Output columns [lo, hi) whose input column ox * stride + j - pad is inside [0, width).
inline void valid_range(std::size_t j, const ConvGeometry& g, std::size_t& lo, std::size_t& hi) {
  const long pad = static_cast<long>(g.pad), s = static_cast<long>(g.stride), off = static_cast<long>(j) - pad;
  long l = off >= 0 ? 0 : (-off + s - 1) / s;
  long h = (static_cast<long>(g.width) - 1 - off) / s + 1;
  if (static_cast<long>(g.width) - 1 - off < 0) h = 0;
  l = std::min<long>(l, static_cast<long>(g.out_w));
  h = std::clamp<long>(h, l, static_cast<long>(g.out_w));
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h);
}

// cols[(c, i, j), n * P + o] = x[n, c, oy * s + i - p, ox * s + j - p]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t ncols = g.columns();
  const long pad = static_cast<long>(g.pad);
#pragma omp parallel for schedule(static)
  for (long row = 0; row < static_cast<long>(g.patch()); ++row) {
    const std::size_t c = static_cast<std::size_t>(row) / (g.kh * g.kw);
    const std::size_t i = (static_cast<std::size_t>(row) / g.kw) % g.kh;
    const std::size_t j = static_cast<std::size_t>(row) % g.kw;
    std::size_t lo, hi;
    valid_range(j, g, lo, hi);
    const long xoff = static_cast<long>(j) - pad;
    T* dst = cols + static_cast<std::size_t>(row) * ncols;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* src = x + (n * g.channels + c) * g.height * g.width;
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        const long iy = static_cast<long>(oy * g.stride + i) - pad;
        T* d = dst + n * g.out_pixels() + oy * g.out_w;
        if (iy < 0 || iy >= static_cast<long>(g.height)) {
          std::fill_n(d, g.out_w, T{0});
          continue;
        }
        const T* srow = src + static_cast<std::size_t>(iy) * g.width;
        std::fill(d, d + lo, T{0});
        if (g.stride == 1) {
          std::copy(srow + (static_cast<long>(lo) + xoff), srow + (static_cast<long>(hi) + xoff), d + lo);
        } else {
          for (std::size_t ox = lo; ox < hi; ++ox) d[ox] = srow[static_cast<long>(ox * g.stride) + xoff];
        }
        std::fill(d + hi, d + g.out_w, T{0});
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t ncols = g.columns();
  const long pad = static_cast<long>(g.pad);
#pragma omp parallel for schedule(static)
  for (long nc = 0; nc < static_cast<long>(g.batch * g.channels); ++nc) {
    const std::size_t n = static_cast<std::size_t>(nc) / g.channels;
    const std::size_t c = static_cast<std::size_t>(nc) % g.channels;
    T* img = dx + static_cast<std::size_t>(nc) * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        std::size_t lo, hi;
        valid_range(j, g, lo, hi);
        const long xoff = static_cast<long>(j) - pad;
        const T* src = cols + ((c * g.kh + i) * g.kw + j) * ncols + n * g.out_pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* irow = img + static_cast<std::size_t>(iy) * g.width;
          const T* srow = src + oy * g.out_w;
          for (std::size_t ox = lo; ox < hi; ++ox) irow[static_cast<long>(ox * g.stride) + xoff] += srow[ox];
        }
      }
  }
}

}  // namespace detail

// Images per im2col chunk, keeping the column buffer near `budget` scalars.
inline std::size_t conv_chunk(const ConvGeometry& g, std::size_t budget = std::size_t{1} << 18) {
  const std::size_t per_image = g.patch() * g.out_pixels();
  return std::clamp<std::size_t>(budget / std::max<std::size_t>(per_image, 1), 1, g.batch);
}

namespace detail {

template <typename T>
AlignedVector<T>& scratch(int slot) {
  thread_local AlignedVector<T> buffers[3];
  return buffers[slot];
}

}  // namespace detail

// input [N, C, H, W], kernel [F, C, kh, kw] -> [N, F, Ho, Wo]
// Processed in chunks of whole images; per-chunk results are combined in a
// fixed order, so outputs and gradients are deterministic.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::size_t stride = 1, std::size_t padding = 0) {
  detail::check_tapes(input, kernel);
  const auto& xs = input.shape();
  const auto& ks = kernel.shape();
  detail::require(xs.size() == 4 && ks.size() == 4 && xs[1] == ks[1] && stride > 0,
                  "conv2d: incompatible shapes " + shape_str(xs) + " and kernel " + shape_str(ks));
  detail::require(xs[2] + 2 * padding >= ks[2] && xs[3] + 2 * padding >= ks[3], "conv2d: kernel larger than input");
  ConvGeometry full{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], stride, padding, 0, 0};
  full.out_h = (full.height + 2 * padding - full.kh) / stride + 1;
  full.out_w = (full.width + 2 * padding - full.kw) / stride + 1;
  const std::size_t chunk = conv_chunk(full);
  const std::size_t p = full.out_pixels();
  const std::size_t in_plane = full.channels * full.height * full.width;

  Tensor<T> out({full.batch, full.filters, full.out_h, full.out_w});
  ConstMatMap<T> kmat(kernel.value().data(), full.filters, full.patch());
  for (std::size_t n0 = 0; n0 < full.batch; n0 += chunk) {
    ConvGeometry g = full;
    g.batch = std::min(chunk, full.batch - n0);
    auto& cols = detail::scratch<T>(0);
    cols.resize(g.patch() * g.columns());
    detail::im2col(input.value().data() + n0 * in_plane, g, cols.data());
    auto& prod = detail::scratch<T>(1);
    prod.resize(g.filters * g.columns());
    MatMap<T>(prod.data(), g.filters, g.columns()).noalias() = kmat * ConstMatMap<T>(cols.data(), g.patch(), g.columns());
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t f = 0; f < g.filters; ++f)
        std::copy_n(prod.data() + f * g.columns() + n * p, p, out.data() + ((n0 + n) * g.filters + f) * p);
  }

  return input.tape->record("conv2d", std::move(out), {input, kernel}, [input, kernel, full, chunk](Tape<T>& t, std::size_t self) {
    const auto& grad = t.grad(self);
    const std::size_t p = full.out_pixels();
    const std::size_t in_plane = full.channels * full.height * full.width;
    auto* gk = detail::grad_sink(t, kernel);
    auto* gx = detail::grad_sink(t, input);
    ConstMatMap<T> kmat(t.value(kernel.id).data(), full.filters, full.patch());
    for (std::size_t n0 = 0; n0 < full.batch; n0 += chunk) {
      ConvGeometry g = full;
      g.batch = std::min(chunk, full.batch - n0);
      auto& gbuf = detail::scratch<T>(1);
      gbuf.resize(g.filters * g.columns());
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t f = 0; f < g.filters; ++f)
          std::copy_n(grad.data() + ((n0 + n) * g.filters + f) * p, p, gbuf.data() + f * g.columns() + n * p);
      ConstMatMap<T> gmat(gbuf.data(), g.filters, g.columns());
      auto& cols = detail::scratch<T>(0);
      cols.resize(g.patch() * g.columns());
      if (gk) {
        detail::im2col(t.value(input.id).data() + n0 * in_plane, g, cols.data());
        MatMap<T>(gk->data(), g.filters, g.patch()).noalias() +=
            gmat * ConstMatMap<T>(cols.data(), g.patch(), g.columns()).transpose();
      }
      if (gx) {
        MatMap<T>(cols.data(), g.patch(), g.columns()).noalias() = kmat.transpose() * gmat;
        detail::col2im(cols.data(), g, gx->data() + n0 * in_plane);
      }
    }
  });
}

// [N, C, H, W] -> [N, C, 2H, 2W]
template <typename T>
Var<T> upsample2x_nearest(Var<T> x) {
  const auto& s = x.shape();
  detail::require(s.size() == 4, "upsample2x_nearest: needs [N,C,H,W]");
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor<T> out({s[0], s[1], 2 * h, 2 * w});
  const auto& xv = x.value();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(pl * 2 * h + y) * 2 * w + xx] = xv[(pl * h + y / 2) * w + xx / 2];
  return x.tape->record("upsample2x", std::move(out), {x}, [x, planes, h, w](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (auto* gx = detail::grad_sink(t, x))
      for (std::size_t pl = 0; pl < planes; ++pl)
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t xx = 0; xx < 2 * w; ++xx)
            (*gx)[(pl * h + y / 2) * w + xx / 2] += g[(pl * 2 * h + y) * 2 * w + xx];
  });
}

}  // namespace cseg::ad
