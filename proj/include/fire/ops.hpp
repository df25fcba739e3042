/*
 * firereg : joint synthesis and registration networks
 *
 * Copyright 2026 The firereg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Differentiable operations over [C, spatial...] tensors. Every op computes
// its value eagerly, records a backward closure on the tape, and rejects
// non-finite results.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "fire/autodiff.hpp"
#include "fire/tensor.hpp"

namespace fire::ops {

enum class Padding { same, valid };

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

/// Per-axis geometry of a convolution folded to three axes.
struct ConvGeom {
  Extent3 in, out, k;
  std::size_t stride = 1;
  std::size_t pad_d = 0, pad_h = 0, pad_w = 0;
  std::size_t cin = 0;

  std::size_t rows() const { return cin * k.count(); }
};

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, Padding p, std::size_t& pad_before) {
  if (p == Padding::same) {
    const std::size_t out = (in + s - 1) / s;
    const std::size_t need = (out - 1) * s + k;
    pad_before = need > in ? (need - in) / 2 : 0;
    return out;
  }
  pad_before = 0;
  if (k > in) throw ShapeError("conv: kernel extent " + std::to_string(k) + " exceeds input extent " + std::to_string(in));
  return (in - k) / s + 1;
}

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t P = g.out.count();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * g.in.count();
    for (std::size_t kz = 0; kz < g.k.d; ++kz)
      for (std::size_t ky = 0; ky < g.k.h; ++ky)
        for (std::size_t kx = 0; kx < g.k.w; ++kx, ++row) {
          T* dst = cols + row * P;
          for (std::size_t oz = 0; oz < g.out.d; ++oz) {
            const long iz = long(oz * g.stride + kz) - long(g.pad_d);
            for (std::size_t oy = 0; oy < g.out.h; ++oy) {
              const long iy = long(oy * g.stride + ky) - long(g.pad_h);
              T* d = dst + (oz * g.out.h + oy) * g.out.w;
              if (iz < 0 || iz >= long(g.in.d) || iy < 0 || iy >= long(g.in.h)) {
                std::fill(d, d + g.out.w, T(0));
                continue;
              }
              const T* src = xc + (std::size_t(iz) * g.in.h + std::size_t(iy)) * g.in.w;
              for (std::size_t ox = 0; ox < g.out.w; ++ox) {
                const long ix = long(ox * g.stride + kx) - long(g.pad_w);
                d[ox] = (ix < 0 || ix >= long(g.in.w)) ? T(0) : src[ix];
              }
            }
          }
        }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* dx) {
  const std::size_t P = g.out.count();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* xc = dx + c * g.in.count();
    for (std::size_t kz = 0; kz < g.k.d; ++kz)
      for (std::size_t ky = 0; ky < g.k.h; ++ky)
        for (std::size_t kx = 0; kx < g.k.w; ++kx, ++row) {
          const T* srcrow = cols + row * P;
          for (std::size_t oz = 0; oz < g.out.d; ++oz) {
            const long iz = long(oz * g.stride + kz) - long(g.pad_d);
            if (iz < 0 || iz >= long(g.in.d)) continue;
            for (std::size_t oy = 0; oy < g.out.h; ++oy) {
              const long iy = long(oy * g.stride + ky) - long(g.pad_h);
              if (iy < 0 || iy >= long(g.in.h)) continue;
              const T* s = srcrow + (oz * g.out.h + oy) * g.out.w;
              T* d = xc + (std::size_t(iz) * g.in.h + std::size_t(iy)) * g.in.w;
              for (std::size_t ox = 0; ox < g.out.w; ++ox) {
                const long ix = long(ox * g.stride + kx) - long(g.pad_w);
                if (ix >= 0 && ix < long(g.in.w)) d[ix] += s[ox];
              }
            }
          }
        }
  }
}

/// View of a tensor as [outer, extent, inner] around one axis.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

/// Align-corners source position of output index j.
inline void linear_source(std::size_t j, std::size_t in, std::size_t out, std::size_t& i0, double& f) {
  if (in == 1 || out == 1) {
    i0 = 0;
    f = 0.0;
    return;
  }
  const double src = double(j) * double(in - 1) / double(out - 1);
  i0 = std::min<std::size_t>(static_cast<std::size_t>(src), in - 2);
  f = src - double(i0);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  detail::accumulate(out, b.value());
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) detail::accumulate(t.grad(a.id), g);
    if (t.requires_grad(b.id)) detail::accumulate(t.grad(b.id), g);
  }, "add");
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape->push(std::move(out), {a}, [a, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  }, "scale");
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (auto v : a.value().data()) s += v;
  return a.tape->push(Tensor<T>({1}, s), {a}, [a](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(a.id).data()) v += g;
  }, "sum");
}

template <typename T>
Var<T> reshape(Var<T> a, Shape s) {
  Tensor<T> out = a.value().reshaped(std::move(s));
  return a.tape->push(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    detail::accumulate(t.grad(a.id), t.grad(self));
  }, "reshape");
}

/// Concatenates two [C, spatial...] tensors along the channel axis.
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || spatial_of(sa) != spatial_of(sb))
    throw ShapeError("concat_channels: spatial mismatch " + to_string(sa) + " vs " + to_string(sb));
  Shape so = sa;
  so[0] = sa[0] + sb[0];
  std::vector<T> data;
  data.reserve(product(so));
  data.insert(data.end(), a.value().storage().begin(), a.value().storage().end());
  data.insert(data.end(), b.value().storage().begin(), b.value().storage().end());
  const std::size_t na = a.value().size();
  return a.tape->push(Tensor<T>(so, std::move(data)), {a, b}, [a, b, na](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      auto& ga = t.grad(a.id);
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b.id)) {
      auto& gb = t.grad(b.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
    }
  }, "concat_channels");
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { tanh, leaky_relu, relu };

/// Tanh clamped to the open interval (-1, 1) at storage precision.
template <typename T>
Var<T> tanh(Var<T> a) {
  const T lim = std::nextafter(T(1), T(0));
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::clamp(std::tanh(v), -lim, lim);
  return a.tape->push(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
  }, "tanh");
}

/// x for x > 0, slope*x otherwise; the derivative at 0 is slope.
template <typename T>
Var<T> leaky_relu(Var<T> a, T slope = T(0.2)) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T(0) ? v : slope * v;
  return a.tape->push(std::move(out), {a}, [a, slope](Tape<T>& t, std::size_t self) {
    const auto& x = t.value(a.id);
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > T(0) ? g[i] : slope * g[i];
  }, "leaky_relu");
}

template <typename T>
Var<T> relu(Var<T> a) {
  return leaky_relu(a, T(0));
}

template <typename T>
Var<T> activation(Var<T> a, Activation kind, T slope = T(0.2)) {
  switch (kind) {
    case Activation::tanh: return ops::tanh(a);
    case Activation::leaky_relu: return leaky_relu(a, slope);
    case Activation::relu: return relu(a);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Convolution and dense layers

/// N-D cross-correlation of x [Cin, spatial...] with kernels
/// [Cout, Cin, k...]; optional per-output-channel bias [Cout].
template <typename T>
Var<T> conv(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> bias, std::size_t stride, Padding pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() < 2 || ws.size() != xs.size() + 1)
    throw ShapeError("conv: input " + to_string(xs) + " and kernels " + to_string(ws) + " have incompatible ranks");
  if (ws[1] != xs[0])
    throw ShapeError("conv: input " + to_string(xs) + " has " + std::to_string(xs[0]) + " channels but kernels " +
                     to_string(ws) + " expect " + std::to_string(ws[1]));
  if (stride < 1) throw ShapeError("conv: stride must be >= 1");
  const std::size_t cout = ws[0];
  if (bias && bias->shape() != Shape{cout})
    throw ShapeError("conv: bias " + to_string(bias->shape()) + " does not match " + std::to_string(cout) + " outputs");

  detail::ConvGeom g;
  g.cin = xs[0];
  g.stride = stride;
  g.in = extent3(spatial_of(xs));
  g.k = extent3(Shape(ws.begin() + 2, ws.end()));
  g.out.d = detail::conv_out(g.in.d, g.k.d, stride, pad, g.pad_d);
  g.out.h = detail::conv_out(g.in.h, g.k.h, stride, pad, g.pad_h);
  g.out.w = detail::conv_out(g.in.w, g.k.w, stride, pad, g.pad_w);

  Shape os{cout};
  {
    const std::size_t r = xs.size() - 1;
    const std::size_t o3[3] = {g.out.d, g.out.h, g.out.w};
    for (std::size_t i = 3 - r; i < 3; ++i) os.push_back(o3[i]);
  }
  const std::size_t P = g.out.count();
  const std::size_t R = g.rows();

  std::vector<T> cols(R * P);
  detail::im2col(x.value().ptr(), g, cols.data());
  Tensor<T> out(os);
  {
    detail::CMapMat<T> W(w.value().ptr(), cout, R);
    detail::CMapMat<T> C(cols.data(), R, P);
    detail::MapMat<T> O(out.ptr(), cout, P);
    O.noalias() = W * C;
    if (bias) {
      const auto& b = bias->value();
      for (std::size_t co = 0; co < cout; ++co) O.row(co).array() += b[co];
    }
  }

  auto fn = [x, w, bias, g, cout, P, R](Tape<T>& t, std::size_t self) {
    const auto& go = t.grad(self);
    detail::CMapMat<T> G(go.ptr(), cout, P);
    std::vector<T> cols(R * P);
    if (t.requires_grad(w.id)) {
      detail::im2col(t.value(x.id).ptr(), g, cols.data());
      detail::CMapMat<T> C(cols.data(), R, P);
      detail::MapMat<T> GW(t.grad(w.id).ptr(), cout, R);
      GW.noalias() += G * C.transpose();
    }
    if (bias && t.requires_grad(bias->id)) {
      auto& gb = t.grad(bias->id);
      // Fixed summation order: Eigen's vectorized sum depends on pointer alignment.
      for (std::size_t co = 0; co < cout; ++co) {
        T s = 0;
        for (std::size_t k = 0; k < P; ++k) s += go[co * P + k];
        gb[co] += s;
      }
    }
    if (t.requires_grad(x.id)) {
      detail::CMapMat<T> W(t.value(w.id).ptr(), cout, R);
      detail::MapMat<T> C(cols.data(), R, P);
      C.noalias() = W.transpose() * G;
      detail::col2im(cols.data(), g, t.grad(x.id).ptr());
    }
  };
  if (bias) return x.tape->push(std::move(out), {x, w, *bias}, fn, "conv");
  return x.tape->push(std::move(out), {x, w}, fn, "conv");
}

/// W·flatten(x) + b with W [out, in] and b [out].
template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  const Shape& ws = w.shape();
  if (ws.size() != 2 || ws[1] != x.value().size() || b.shape() != Shape{ws[0]})
    throw ShapeError("dense: input " + to_string(x.shape()) + ", weights " + to_string(ws) + ", bias " +
                     to_string(b.shape()) + " do not agree");
  const std::size_t no = ws[0], ni = ws[1];
  Tensor<T> out({no});
  // Plain loops keep the summation order independent of buffer alignment.
  const T* W = w.value().ptr();
  const T* xv = x.value().ptr();
  for (std::size_t o = 0; o < no; ++o) {
    T s = 0;
    for (std::size_t i = 0; i < ni; ++i) s += W[o * ni + i] * xv[i];
    out[o] = s + b.value()[o];
  }
  return x.tape->push(std::move(out), {x, w, b}, [x, w, b, no, ni](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(w.id)) {
      const auto& xv = t.value(x.id);
      auto& gw = t.grad(w.id);
      for (std::size_t o = 0; o < no; ++o)
        for (std::size_t i = 0; i < ni; ++i) gw[o * ni + i] += g[o] * xv[i];
    }
    if (t.requires_grad(b.id)) {
      auto& gb = t.grad(b.id);
      for (std::size_t o = 0; o < no; ++o) gb[o] += g[o];
    }
    if (t.requires_grad(x.id)) {
      const auto& W = t.value(w.id);
      auto& gx = t.grad(x.id);
      for (std::size_t o = 0; o < no; ++o)
        for (std::size_t i = 0; i < ni; ++i) gx[i] += W[o * ni + i] * g[o];
    }
  }, "dense");
}

// ---------------------------------------------------------------------------
// Normalization and pooling

/// Per-channel standardization: (x - mean) / sqrt(var + eps).
template <typename T>
Var<T> instance_norm(Var<T> x, T eps = T(1e-5)) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("instance_norm: expected [C, spatial...], got " + to_string(s));
  const std::size_t C = s[0];
  const std::size_t S = x.value().size() / C;
  if (S < 2) throw ShapeError("instance_norm: spatial size must be >= 2, got shape " + to_string(s));
  Tensor<T> out(s);
  std::vector<T> inv_std(C);
  const T* xv = x.value().ptr();
  for (std::size_t c = 0; c < C; ++c) {
    const T* xc = xv + c * S;
    double m = 0;
    for (std::size_t i = 0; i < S; ++i) m += xc[i];
    m /= double(S);
    double var = 0;
    for (std::size_t i = 0; i < S; ++i) var += (xc[i] - m) * (xc[i] - m);
    var /= double(S);
    const double is = 1.0 / std::sqrt(var + double(eps));
    inv_std[c] = T(is);
    T* oc = out.ptr() + c * S;
    for (std::size_t i = 0; i < S; ++i) oc[i] = T((xc[i] - m) * is);
  }
  return x.tape->push(std::move(out), {x}, [x, C, S, inv_std](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    auto& gx = t.grad(x.id);
    for (std::size_t c = 0; c < C; ++c) {
      const T* yc = y.ptr() + c * S;
      const T* gc = g.ptr() + c * S;
      double mg = 0, mgy = 0;
      for (std::size_t i = 0; i < S; ++i) {
        mg += gc[i];
        mgy += gc[i] * yc[i];
      }
      mg /= double(S);
      mgy /= double(S);
      T* dc = gx.ptr() + c * S;
      for (std::size_t i = 0; i < S; ++i) dc[i] += T(double(inv_std[c]) * (gc[i] - mg - yc[i] * mgy));
    }
  }, "instance_norm");
}

/// Per-channel spatial mean: [C, spatial...] -> [C].
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("global_avg_pool: expected [C, spatial...], got " + to_string(s));
  const std::size_t C = s[0];
  const std::size_t S = x.value().size() / C;
  Tensor<T> out({C});
  for (std::size_t c = 0; c < C; ++c) {
    double m = 0;
    for (std::size_t i = 0; i < S; ++i) m += x.value()[c * S + i];
    out[c] = T(m / double(S));
  }
  return x.tape->push(std::move(out), {x}, [x, C, S](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x.id);
    for (std::size_t c = 0; c < C; ++c) {
      const T v = g[c] / T(S);
      for (std::size_t i = 0; i < S; ++i) gx[c * S + i] += v;
    }
  }, "global_avg_pool");
}

// ---------------------------------------------------------------------------
// Resampling

/// Linear resampling of one tensor axis (align-corners).
template <typename T>
Var<T> resize_axis(Var<T> x, std::size_t axis, std::size_t target) {
  if (target < 1) throw ShapeError("resize: target extent must be >= 1");
  const Shape& s = x.shape();
  const auto v = detail::axis_view(s, axis);
  Shape os = s;
  os[axis] = target;
  Tensor<T> out(os);
  const T* in = x.value().ptr();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t j = 0; j < target; ++j) {
      std::size_t i0;
      double f;
      detail::linear_source(j, v.extent, target, i0, f);
      const std::size_t i1 = v.extent > 1 ? i0 + 1 : i0;
      const T* r0 = in + (o * v.extent + i0) * v.inner;
      const T* r1 = in + (o * v.extent + i1) * v.inner;
      T* d = out.ptr() + (o * target + j) * v.inner;
      const T tf = T(f);
      for (std::size_t k = 0; k < v.inner; ++k) d[k] = r0[k] + tf * (r1[k] - r0[k]);
    }
  return x.tape->push(std::move(out), {x}, [x, v, target](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x.id);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t j = 0; j < target; ++j) {
        std::size_t i0;
        double f;
        detail::linear_source(j, v.extent, target, i0, f);
        const std::size_t i1 = v.extent > 1 ? i0 + 1 : i0;
        const T* gr = g.ptr() + (o * target + j) * v.inner;
        T* d0 = gx.ptr() + (o * v.extent + i0) * v.inner;
        T* d1 = gx.ptr() + (o * v.extent + i1) * v.inner;
        const T tf = T(f);
        for (std::size_t k = 0; k < v.inner; ++k) {
          d0[k] += (T(1) - tf) * gr[k];
          d1[k] += tf * gr[k];
        }
      }
  }, "resize_linear");
}

/// Multi-linear resampling of x [C, spatial...] to new spatial extents.
template <typename T>
Var<T> resize_linear(Var<T> x, const Shape& target_spatial) {
  const Shape& s = x.shape();
  if (target_spatial.size() + 1 != s.size())
    throw ShapeError("resize_linear: target " + to_string(target_spatial) + " does not match input " + to_string(s));
  Var<T> cur = x;
  for (std::size_t a = 0; a < target_spatial.size(); ++a)
    if (cur.shape()[a + 1] != target_spatial[a]) cur = resize_axis(cur, a + 1, target_spatial[a]);
  return cur;
}

// ---------------------------------------------------------------------------
// Losses

/// sqrt(mean((a - b)^2)). The gradient at a == b is taken as zero.
template <typename T>
Var<T> rms(Var<T> a, Var<T> b) {
  detail::require_same(a.shape(), b.shape(), "rms");
  const auto& av = a.value();
  const auto& bv = b.value();
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = double(av[i]) - double(bv[i]);
    acc += d * d;
  }
  const double r = std::sqrt(acc / double(av.size()));
  return a.tape->push(Tensor<T>({1}, T(r)), {a, b}, [a, b, r](Tape<T>& t, std::size_t self) {
    if (r == 0.0) return;
    const auto& av = t.value(a.id);
    const auto& bv = t.value(b.id);
    const double k = double(t.grad(self)[0]) / (double(av.size()) * r);
    T* ga = t.requires_grad(a.id) ? t.grad(a.id).ptr() : nullptr;
    T* gb = t.requires_grad(b.id) ? t.grad(b.id).ptr() : nullptr;
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T d = T(k * (double(av[i]) - double(bv[i])));
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  }, "rms");
}

}  // namespace fire::ops
