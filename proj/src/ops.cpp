// Copyright 2026 The Respira Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "respira/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "respira/error.hpp"

namespace respira::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Fixed-lane reductions: the summation order does not depend on the buffer
// address, unlike Eigen's aligned peeling, so training is reproducible.
template <typename T, typename F>
double lane_sum(std::int64_t n, F term) {
  constexpr int kLanes = 8;
  T acc[kLanes] = {};
  std::int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int k = 0; k < kLanes; ++k) acc[k] += term(i + k);
  double total = 0.0;
  for (; i < n; ++i) total += term(i);
  for (int k = 0; k < kLanes; ++k) total += acc[k];
  return total;
}

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank) {
  const auto a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return a;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t extent = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::int64_t axis) {
  AxisSplit s;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[i];
    else if (i == axis) s.extent = shape[i];
    else s.inner *= shape[i];
  }
  return s;
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::int64_t rank, const char* what) {
  if (t.ndim() != rank) {
    throw ShapeError(std::string(what) + " expects a rank-" + std::to_string(rank) + " tensor, got " +
                     shape_str(t.shape()));
  }
}

struct ConvGeometry {
  std::int64_t batch, channels, height, width;
  std::int64_t out_channels, kh, kw;
  std::int64_t stride, pad;
  std::int64_t out_h, out_w;
  std::int64_t patch() const { return channels * kh * kw; }
  std::int64_t spatial() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const auto spatial = g.spatial();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * spatial;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = oy * g.stride - g.pad + i;
          T* dst = row + oy * g.out_w;
          if (y < 0 || y >= g.height) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = plane + y * g.width;
          if (g.stride == 1) {
            const auto lo = std::clamp<std::int64_t>(g.pad - j, 0, g.out_w);
            const auto hi = std::clamp<std::int64_t>(g.width + g.pad - j, lo, g.out_w);
            std::fill(dst, dst + lo, T{0});
            std::copy(src + lo - g.pad + j, src + hi - g.pad + j, dst + lo);
            std::fill(dst + hi, dst + g.out_w, T{0});
            continue;
          }
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = ox * g.stride - g.pad + j;
            dst[ox] = (x >= 0 && x < g.width) ? src[x] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
  const auto spatial = g.spatial();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * spatial;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = oy * g.stride - g.pad + i;
          if (y < 0 || y >= g.height) continue;
          T* dst = plane + y * g.width;
          const T* src = row + oy * g.out_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = ox * g.stride - g.pad + j;
            if (x >= 0 && x < g.width) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, std::int64_t stride, std::int64_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d padding must be >= 0");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (ks[1] != is[1]) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(is) + " vs kernel " + shape_str(ks));
  }
  ConvGeometry g{is[0], is[1], is[2], is[3], ks[0], ks[2], ks[3], stride, padding, 0, 0};
  if (g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding) {
    throw ShapeError("conv2d kernel larger than padded input: input " + shape_str(is) + " vs kernel " +
                     shape_str(ks));
  }
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;

  const auto in_plane = g.channels * g.height * g.width;
  const auto out_plane = g.out_channels * g.spatial();
  std::vector<T> out(static_cast<std::size_t>(g.batch * out_plane));
  std::vector<T> col(static_cast<std::size_t>(g.patch() * g.spatial()));
  ConstMapMat<T> w(kernel.data().data(), g.out_channels, g.patch());
  for (std::int64_t b = 0; b < g.batch; ++b) {
    im2col(input.data().data() + b * in_plane, g, col.data());
    MapMat<T> y(out.data() + b * out_plane, g.out_channels, g.spatial());
    y.noalias() = w * ConstMapMat<T>(col.data(), g.patch(), g.spatial());
  }

  auto in_impl = input.impl();
  auto k_impl = kernel.impl();
  return BasicTensor<T>::make_result(
      {g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out), {&input, &kernel},
      [g, in_impl, k_impl, in_plane, out_plane](std::span<const T> gout) {
        auto gin = BasicTensor<T>::grad_sink(in_impl);
        auto gk = BasicTensor<T>::grad_sink(k_impl);
        std::vector<T> col(static_cast<std::size_t>(g.patch() * g.spatial()));
        ConstMapMat<T> w(k_impl->storage->data(), g.out_channels, g.patch());
        for (std::int64_t b = 0; b < g.batch; ++b) {
          ConstMapMat<T> dy(gout.data() + b * out_plane, g.out_channels, g.spatial());
          if (!gk.empty()) {
            im2col(in_impl->storage->data() + b * in_plane, g, col.data());
            MapMat<T> dw(gk.data(), g.out_channels, g.patch());
            dw.noalias() += dy * ConstMapMat<T>(col.data(), g.patch(), g.spatial()).transpose();
          }
          if (!gin.empty()) {
            MapMat<T> dcol(col.data(), g.patch(), g.spatial());
            dcol.noalias() = w.transpose() * dy;
            col2im_add(col.data(), g, gin.data() + b * in_plane);
          }
        }
      });
}

template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, BatchNormStats& stats,
                   NormMode mode, double momentum) {
  require_rank(input, 4, "batchnorm2d input");
  const auto& s = input.shape();
  const auto batch = s[0], channels = s[1], plane = s[2] * s[3];
  if (batch == 0 || plane == 0) throw ShapeError("batchnorm2d on empty batch " + shape_str(s));
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("batchnorm2d gamma/beta length must equal channel count " + std::to_string(channels));
  }
  if (static_cast<std::int64_t>(stats.mean.size()) != channels ||
      static_cast<std::int64_t>(stats.var.size()) != channels) {
    throw ShapeError("batchnorm2d running statistics do not match channel count");
  }
  const auto count = batch * plane;
  const auto x = input.data();
  std::vector<T> mean(static_cast<std::size_t>(channels)), inv_std(static_cast<std::size_t>(channels));
  for (std::int64_t c = 0; c < channels; ++c) {
    if (mode == NormMode::kTrain) {
      double sum = 0.0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels + c) * plane;
        sum += lane_sum<T>(plane, [p](std::int64_t i) { return p[i]; });
      }
      const double m = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels + c) * plane;
        const T mt = static_cast<T>(m);
        sq += lane_sum<T>(plane, [p, mt](std::int64_t i) { return (p[i] - mt) * (p[i] - mt); });
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      stats.mean[c] = static_cast<float>((1.0 - momentum) * stats.mean[c] + momentum * m);
      stats.var[c] = static_cast<float>((1.0 - momentum) * stats.var[c] + momentum * unbiased);
    } else {
      mean[c] = stats.mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[c]) + kBatchNormEps));
    }
  }

  const auto g = gamma.data();
  const auto bt = beta.data();
  std::vector<T> xhat(x.size()), out(x.size());
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto off = (b * channels + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const T h = (x[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = g[c] * h + bt[c];
      }
    }
  }

  auto in_impl = input.impl();
  auto g_impl = gamma.impl();
  auto b_impl = beta.impl();
  const bool train = mode == NormMode::kTrain;
  return BasicTensor<T>::make_result(
      s, std::move(out), {&input, &gamma, &beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const T> gout) {
        auto gin = BasicTensor<T>::grad_sink(in_impl);
        auto gg = BasicTensor<T>::grad_sink(g_impl);
        auto gb = BasicTensor<T>::grad_sink(b_impl);
        const auto& gam = *g_impl->storage;
        for (std::int64_t c = 0; c < channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t b = 0; b < batch; ++b) {
            const auto off = (b * channels + c) * plane;
            const T* dy = gout.data() + off;
            const T* xh = xhat.data() + off;
            sum_dy += lane_sum<T>(plane, [dy](std::int64_t i) { return dy[i]; });
            sum_dy_xhat += lane_sum<T>(plane, [dy, xh](std::int64_t i) { return dy[i] * xh[i]; });
          }
          if (!gg.empty()) gg[c] += static_cast<T>(sum_dy_xhat);
          if (!gb.empty()) gb[c] += static_cast<T>(sum_dy);
          if (gin.empty()) continue;
          const T k = gam[c] * inv_std[c];
          if (train) {
            const double n = static_cast<double>(count);
            const double mean_dy = sum_dy / n, mean_dy_xhat = sum_dy_xhat / n;
            for (std::int64_t b = 0; b < batch; ++b) {
              const auto off = (b * channels + c) * plane;
              for (std::int64_t i = 0; i < plane; ++i) {
                gin[off + i] += static_cast<T>(k * (gout[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat));
              }
            }
          } else {
            for (std::int64_t b = 0; b < batch; ++b) {
              const auto off = (b * channels + c) * plane;
              for (std::int64_t i = 0; i < plane; ++i) gin[off + i] += k * gout[off + i];
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  const auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  auto in_impl = input.impl();
  return BasicTensor<T>::make_result(input.shape(), std::move(out), {&input}, [in_impl](std::span<const T> gout) {
    auto gin = BasicTensor<T>::grad_sink(in_impl);
    const auto& xv = *in_impl->storage;
    for (std::size_t i = 0; i < gin.size(); ++i) {
      if (xv[i] > T{0}) gin[i] += gout[i];
    }
  });
}

template <typename T>
BasicTensor<T> pool2d(const BasicTensor<T>& input, PoolKind kind, std::int64_t window, std::int64_t stride) {
  require_rank(input, 4, "pool2d input");
  if (window < 1 || stride < 1) throw ShapeError("pool2d window and stride must be >= 1");
  const auto& s = input.shape();
  const auto planes = s[0] * s[1], h = s[2], w = s[3];
  if (window > h || window > w) {
    throw ShapeError("pool2d window " + std::to_string(window) + " larger than input " + shape_str(s));
  }
  const auto oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  const auto x = input.data();
  std::vector<T> out(static_cast<std::size_t>(planes * oh * ow));
  std::vector<std::int64_t> argmax;
  if (kind == PoolKind::kMax) argmax.resize(out.size());
  const T inv_area = T{1} / static_cast<T>(window * window);
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto o = (p * oh + oy) * ow + ox;
        if (kind == PoolKind::kAvg) {
          T acc = T{0};
          for (std::int64_t i = 0; i < window; ++i)
            for (std::int64_t j = 0; j < window; ++j) acc += src[(oy * stride + i) * w + ox * stride + j];
          out[o] = acc * inv_area;
        } else {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t i = 0; i < window; ++i) {
            for (std::int64_t j = 0; j < window; ++j) {
              const auto idx = (oy * stride + i) * w + ox * stride + j;
              if (best_idx < 0 || src[idx] > best) {
                best = src[idx];
                best_idx = idx;
              }
            }
          }
          out[o] = best;
          argmax[o] = p * h * w + best_idx;
        }
      }
    }
  }
  auto in_impl = input.impl();
  return BasicTensor<T>::make_result(
      {s[0], s[1], oh, ow}, std::move(out), {&input},
      [=, argmax = std::move(argmax)](std::span<const T> gout) {
        auto gin = BasicTensor<T>::grad_sink(in_impl);
        if (kind == PoolKind::kMax) {
          for (std::size_t o = 0; o < gout.size(); ++o) gin[argmax[o]] += gout[o];
          return;
        }
        for (std::int64_t p = 0; p < planes; ++p) {
          for (std::int64_t oy = 0; oy < oh; ++oy) {
            for (std::int64_t ox = 0; ox < ow; ++ox) {
              const T gv = gout[(p * oh + oy) * ow + ox] * inv_area;
              for (std::int64_t i = 0; i < window; ++i)
                for (std::int64_t j = 0; j < window; ++j) gin[p * h * w + (oy * stride + i) * w + ox * stride + j] += gv;
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  const Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  Shape lead;
  if (lead_a == lead_b || lead_b.empty()) lead = lead_a;
  else if (lead_a.empty()) lead = lead_b;
  else {
    throw ShapeError("matmul leading dimensions not broadcastable: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const auto batches = shape_numel(lead);
  const auto stride_a = lead_a.empty() ? 0 : m * k;
  const auto stride_b = lead_b.empty() ? 0 : k * n;
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(static_cast<std::size_t>(batches * m * n));
  for (std::int64_t i = 0; i < batches; ++i) {
    MapMat<T>(out.data() + i * m * n, m, n).noalias() =
        ConstMapMat<T>(a.data().data() + i * stride_a, m, k) * ConstMapMat<T>(b.data().data() + i * stride_b, k, n);
  }
  auto a_impl = a.impl();
  auto b_impl = b.impl();
  return BasicTensor<T>::make_result(std::move(out_shape), std::move(out), {&a, &b},
                             [=](std::span<const T> gout) {
                               auto ga = BasicTensor<T>::grad_sink(a_impl);
                               auto gb = BasicTensor<T>::grad_sink(b_impl);
                               for (std::int64_t i = 0; i < batches; ++i) {
                                 ConstMapMat<T> dy(gout.data() + i * m * n, m, n);
                                 if (!ga.empty()) {
                                   MapMat<T>(ga.data() + i * stride_a, m, k).noalias() +=
                                       dy * ConstMapMat<T>(b_impl->storage->data() + i * stride_b, k, n).transpose();
                                 }
                                 if (!gb.empty()) {
                                   MapMat<T>(gb.data() + i * stride_b, k, n).noalias() +=
                                       ConstMapMat<T>(a_impl->storage->data() + i * stride_a, m, k).transpose() * dy;
                                 }
                               }
                             });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& input, std::int64_t axis) {
  const auto ax = normalize_axis(axis, input.ndim());
  const auto sp = split_at(input.shape(), ax);
  const auto x = input.data();
  std::vector<T> out(x.size());
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const auto base = o * sp.extent * sp.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t e = 0; e < sp.extent; ++e) mx = std::max(mx, x[base + e * sp.inner]);
      double total = 0.0;
      for (std::int64_t e = 0; e < sp.extent; ++e) {
        const T v = std::exp(x[base + e * sp.inner] - mx);
        out[base + e * sp.inner] = v;
        total += v;
      }
      const T inv = static_cast<T>(1.0 / total);
      for (std::int64_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] *= inv;
    }
  }
  auto in_impl = input.impl();
  auto y = out;
  return BasicTensor<T>::make_result(input.shape(), std::move(out), {&input},
                             [=, y = std::move(y)](std::span<const T> gout) {
                               auto gin = BasicTensor<T>::grad_sink(in_impl);
                               for (std::int64_t o = 0; o < sp.outer; ++o) {
                                 for (std::int64_t in = 0; in < sp.inner; ++in) {
                                   const auto base = o * sp.extent * sp.inner + in;
                                   double dot = 0.0;
                                   for (std::int64_t e = 0; e < sp.extent; ++e) {
                                     const auto idx = base + e * sp.inner;
                                     dot += static_cast<double>(gout[idx]) * y[idx];
                                   }
                                   for (std::int64_t e = 0; e < sp.extent; ++e) {
                                     const auto idx = base + e * sp.inner;
                                     gin[idx] += y[idx] * static_cast<T>(gout[idx] - dot);
                                   }
                                 }
                               }
                             });
}

template <typename T>
BasicTensor<T> reduce(const BasicTensor<T>& input, ReduceKind kind, std::int64_t axis) {
  const auto ax = normalize_axis(axis, input.ndim());
  const auto sp = split_at(input.shape(), ax);
  if (sp.extent == 0) throw ShapeError("reduce over empty axis of " + shape_str(input.shape()));
  Shape out_shape = input.shape();
  out_shape.erase(out_shape.begin() + ax);
  const auto x = input.data();
  std::vector<T> out(static_cast<std::size_t>(sp.outer * sp.inner));
  std::vector<std::int64_t> argmax;
  if (kind == ReduceKind::kMax) argmax.resize(out.size());
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const auto base = o * sp.extent * sp.inner + in;
      const auto oi = o * sp.inner + in;
      if (kind == ReduceKind::kMax) {
        std::int64_t best = base;
        for (std::int64_t e = 1; e < sp.extent; ++e) {
          if (x[base + e * sp.inner] > x[best]) best = base + e * sp.inner;
        }
        out[oi] = x[best];
        argmax[oi] = best;
      } else {
        double acc = 0.0;
        for (std::int64_t e = 0; e < sp.extent; ++e) acc += x[base + e * sp.inner];
        if (kind == ReduceKind::kMean) acc /= static_cast<double>(sp.extent);
        out[oi] = static_cast<T>(acc);
      }
    }
  }
  auto in_impl = input.impl();
  return BasicTensor<T>::make_result(std::move(out_shape), std::move(out), {&input},
                             [=, argmax = std::move(argmax)](std::span<const T> gout) {
                               auto gin = BasicTensor<T>::grad_sink(in_impl);
                               if (kind == ReduceKind::kMax) {
                                 for (std::size_t i = 0; i < gout.size(); ++i) gin[argmax[i]] += gout[i];
                                 return;
                               }
                               const T f = kind == ReduceKind::kMean ? T{1} / static_cast<T>(sp.extent) : T{1};
                               for (std::int64_t o = 0; o < sp.outer; ++o) {
                                 for (std::int64_t in = 0; in < sp.inner; ++in) {
                                   const T gv = gout[o * sp.inner + in] * f;
                                   const auto base = o * sp.extent * sp.inner + in;
                                   for (std::int64_t e = 0; e < sp.extent; ++e) gin[base + e * sp.inner] += gv;
                                 }
                               }
                             });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  auto a_impl = a.impl();
  auto b_impl = b.impl();
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {&a, &b}, [a_impl, b_impl](std::span<const T> gout) {
    for (auto sink : {BasicTensor<T>::grad_sink(a_impl), BasicTensor<T>::grad_sink(b_impl)}) {
      for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += gout[i];
    }
  });
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  if (x.ndim() < 1 || bias.ndim() != 1 || bias.dim(0) != x.dim(-1)) {
    throw ShapeError("add_bias shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
  }
  const auto n = bias.dim(0);
  const auto xv = x.data(), bv = bias.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + bv[i % n];
  auto x_impl = x.impl();
  auto b_impl = bias.impl();
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {&x, &bias}, [=](std::span<const T> gout) {
    auto gx = BasicTensor<T>::grad_sink(x_impl);
    auto gb = BasicTensor<T>::grad_sink(b_impl);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
    if (!gb.empty()) {
      for (std::size_t i = 0; i < gout.size(); ++i) gb[i % n] += gout[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = static_cast<T>(xv[i] * factor);
  auto x_impl = x.impl();
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {&x}, [=](std::span<const T> gout) {
    auto gx = BasicTensor<T>::grad_sink(x_impl);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += static_cast<T>(gout[i] * factor);
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " to incompatible " + shape_str(shape));
  }
  auto x_impl = x.impl();
  return BasicTensor<T>::make_result(std::move(shape), x.to_vector(), {&x}, [x_impl](std::span<const T> gout) {
    auto gx = BasicTensor<T>::grad_sink(x_impl);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
  });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::int64_t>& order) {
  const auto rank = x.ndim();
  if (static_cast<std::int64_t>(order.size()) != rank) throw ShapeError("permute order rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (auto o : order) {
    if (o < 0 || o >= rank || seen[o]) throw ShapeError("permute order is not a permutation");
    seen[o] = true;
  }
  const auto& in_shape = x.shape();
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(rank), 1);
  for (auto i = rank - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(static_cast<std::size_t>(rank));
  std::vector<std::int64_t> src_strides(static_cast<std::size_t>(rank));
  for (std::int64_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[order[i]];
    src_strides[i] = in_strides[order[i]];
  }
  const auto n = x.numel();
  // gather[i] = flat source offset of output element i.
  std::vector<std::int64_t> gather(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    gather[i] = src;
    for (auto d = rank - 1; d >= 0; --d) {
      ++idx[d];
      src += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  const auto xv = x.data();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[i] = xv[gather[i]];
  auto x_impl = x.impl();
  return BasicTensor<T>::make_result(std::move(out_shape), std::move(out), {&x},
                             [x_impl, gather = std::move(gather)](std::span<const T> gout) {
                               auto gx = BasicTensor<T>::grad_sink(x_impl);
                               for (std::size_t i = 0; i < gout.size(); ++i) gx[gather[i]] += gout[i];
                             });
}

template <typename T>
BasicTensor<T> transpose_last(const BasicTensor<T>& x) {
  if (x.ndim() < 2) throw ShapeError("transpose_last needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::int64_t> order(static_cast<std::size_t>(x.ndim()));
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  auto x_impl = x.impl();
  return BasicTensor<T>::make_result({}, {static_cast<T>(acc)}, {&x}, [x_impl](std::span<const T> gout) {
    auto gx = BasicTensor<T>::grad_sink(x_impl);
    for (auto& g : gx) g += gout[0];
  });
}

template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& x, const BasicTensor<T>& weights) {
  if (x.shape() != weights.shape()) {
    throw ShapeError("weighted_sum shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(weights.shape()));
  }
  const auto xv = x.data(), wv = weights.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]) * wv[i];
  auto x_impl = x.impl();
  auto w = weights.detach();
  return BasicTensor<T>::make_result({}, {static_cast<T>(acc)}, {&x}, [x_impl, w](std::span<const T> gout) {
    auto gx = BasicTensor<T>::grad_sink(x_impl);
    const auto wv = w.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[0] * wv[i];
  });
}

#define RESPIRA_INSTANTIATE_OPS(T)                                                                          \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::int64_t, std::int64_t);   \
  template BasicTensor<T> batchnorm2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,    \
                                      BatchNormStats&, NormMode, double);                                   \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> pool2d(const BasicTensor<T>&, PoolKind, std::int64_t, std::int64_t);              \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::int64_t);                                     \
  template BasicTensor<T> reduce(const BasicTensor<T>&, ReduceKind, std::int64_t);                          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                             \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                            \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::int64_t>&);                 \
  template BasicTensor<T> transpose_last(const BasicTensor<T>&);                                            \
  template BasicTensor<T> sum_all(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> weighted_sum(const BasicTensor<T>&, const BasicTensor<T>&);

RESPIRA_INSTANTIATE_OPS(float)
RESPIRA_INSTANTIATE_OPS(double)

}  // namespace respira::ops
