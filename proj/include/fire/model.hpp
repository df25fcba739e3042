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

// Networks of the joint synthesis/registration model.
//
//   G            shared encoder, image [1, S] -> features [4b, S/4]
//   F_ab, F_ba   decoders, features -> image in (-1, 1)
//   T_ab, T_ba   transformation networks, each an affine subnet followed by
//                a non-rigid subnet
//
// Parameters fall into three optimizer groups: the affine subnets, the
// non-rigid subnets, and G with both decoders.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fire/autodiff.hpp"
#include "fire/ops.hpp"
#include "fire/rng.hpp"
#include "fire/tensor.hpp"
#include "fire/volume.hpp"
#include "fire/warp.hpp"

namespace fire {

struct ModelConfig {
  std::size_t dim = 2;
  std::size_t base_channels = 16;
  std::size_t resnet_blocks = 4;
  double delta_max = 0.25;
  double leaky_slope = 0.2;

  std::size_t feature_channels() const { return 4 * base_channels; }

  void validate() const {
    if (dim != 2 && dim != 3) throw std::invalid_argument("ModelConfig: dim must be 2 or 3");
    if (base_channels < 4) throw std::invalid_argument("ModelConfig: base_channels must be >= 4");
    if (!(delta_max > 0.0 && delta_max <= 1.0)) throw std::invalid_argument("ModelConfig: delta_max must lie in (0, 1]");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw std::invalid_argument("ModelConfig: leaky_slope must lie in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct ConvLayer {
  Parameter<T> w, b;
  std::size_t stride = 1;
  bool bias = true;  // false when instance norm follows
};

template <typename T>
struct DenseLayer {
  Parameter<T> w, b;
};

template <typename T>
struct ResBlock {
  ConvLayer<T> c1, c2;
};

template <typename T>
struct Encoder {
  ConvLayer<T> stem, down1, down2;
  std::vector<ResBlock<T>> blocks;
};

template <typename T>
struct Decoder {
  std::vector<ResBlock<T>> blocks;
  ConvLayer<T> up1, up2, out7, out1;
};

template <typename T>
struct AffineNet {
  ConvLayer<T> c1, c2, c3;
  DenseLayer<T> d1, d2;
};

template <typename T>
struct NonrigidNet {
  ConvLayer<T> m1, m2, f1, f2;
  ResBlock<T> block;
  ConvLayer<T> head;
};

template <typename T>
struct TransformNet {
  AffineNet<T> affine;
  NonrigidNet<T> nonrigid;
};

enum class ParamGroup { affine, nonrigid, synthesis };

enum class Direction { ab, ba };

namespace model_detail {

template <typename T>
class Init {
 public:
  Init(std::size_t dim, std::uint64_t seed) : dim_(dim), rng_(seed) {}

  /// Fan-in scaled normal weights, zero bias.
  ConvLayer<T> conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride = 1,
                    bool bias = false) {
    Shape ws{cout, cin};
    for (std::size_t i = 0; i < dim_; ++i) ws.push_back(k);
    Tensor<T> w(ws);
    const double sd = std::sqrt(2.0 / double(cin * std::pow(k, dim_)));
    for (auto& v : w.data()) v = T(sd * rng_.normal());
    ConvLayer<T> c{Parameter<T>(name + ".w", std::move(w)), {}, stride, bias};
    if (bias) c.b = Parameter<T>(name + ".b", Tensor<T>({cout}));
    return c;
  }

  DenseLayer<T> dense(const std::string& name, std::size_t in, std::size_t out) {
    Tensor<T> w({out, in});
    const double sd = std::sqrt(2.0 / double(in));
    for (auto& v : w.data()) v = T(sd * rng_.normal());
    return {Parameter<T>(name + ".w", std::move(w)), Parameter<T>(name + ".b", Tensor<T>({out}))};
  }

  ResBlock<T> res(const std::string& name, std::size_t ch) {
    return {conv(name + ".c1", ch, ch, 3), conv(name + ".c2", ch, ch, 3)};
  }

 private:
  std::size_t dim_;
  Rng rng_;
};

template <typename T, typename F>
void visit_conv(ConvLayer<T>& c, F&& f) {
  f(c.w);
  if (c.bias) f(c.b);
}
template <typename T, typename F>
void visit_res(ResBlock<T>& r, F&& f) {
  visit_conv(r.c1, f);
  visit_conv(r.c2, f);
}

}  // namespace model_detail

/// All learnable parameters of the model.
template <typename T>
class FireModel {
 public:
  FireModel() = default;

  FireModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    model_detail::Init<T> init(cfg.dim, seed);
    const std::size_t b = cfg.base_channels, fc = cfg.feature_channels(), n = cfg.dim;

    enc_.stem = init.conv("G.stem", 1, b, 7);
    enc_.down1 = init.conv("G.down1", b, 2 * b, 3, 2);
    enc_.down2 = init.conv("G.down2", 2 * b, fc, 3, 2);
    for (std::size_t i = 0; i < cfg.resnet_blocks; ++i) enc_.blocks.push_back(init.res("G.res" + std::to_string(i), fc));

    auto make_decoder = [&](const std::string& name) {
      Decoder<T> d;
      for (std::size_t i = 0; i < cfg.resnet_blocks; ++i) d.blocks.push_back(init.res(name + ".res" + std::to_string(i), fc));
      d.up1 = init.conv(name + ".up1", fc, 2 * b, 3);
      d.up2 = init.conv(name + ".up2", 2 * b, b, 3);
      d.out7 = init.conv(name + ".out7", b, 3, 7);
      d.out1 = init.conv(name + ".out1", 3, 1, 1, 1, true);
      return d;
    };
    dec_ab_ = make_decoder("F_ab");
    dec_ba_ = make_decoder("F_ba");

    auto make_transform = [&](const std::string& name) {
      TransformNet<T> t;
      const std::size_t hidden = std::max<std::size_t>(fc / 2, 8);
      t.affine.c1 = init.conv(name + ".af.c1", 2 * fc, fc, 3, 2);
      t.affine.c2 = init.conv(name + ".af.c2", fc, fc / 2, 3, 2);
      t.affine.c3 = init.conv(name + ".af.c3", fc / 2, fc / 4, 3, 2);
      t.affine.d1 = init.dense(name + ".af.d1", fc / 4, hidden);
      t.affine.d2 = init.dense(name + ".af.d2", hidden, n * (n + 1));
      // Identity head: zero weights, bias = flattened [I | 0].
      t.affine.d2.w.value.fill(T(0));
      t.affine.d2.b.value = AffineMatrix<T>::identity(n).tensor().reshaped({n * (n + 1)});

      t.nonrigid.m1 = init.conv(name + ".nr.m1", fc, fc / 2, 3);
      t.nonrigid.m2 = init.conv(name + ".nr.m2", fc / 2, fc / 2, 3);
      t.nonrigid.f1 = init.conv(name + ".nr.f1", fc, fc / 2, 3);
      t.nonrigid.f2 = init.conv(name + ".nr.f2", fc / 2, fc / 2, 3);
      t.nonrigid.block = init.res(name + ".nr.res", fc);
      // Zero head: the field starts as the identity.
      t.nonrigid.head = init.conv(name + ".nr.head", fc, n, 3, 1, true);
      t.nonrigid.head.w.value.fill(T(0));
      return t;
    };
    t_ab_ = make_transform("T_ab");
    t_ba_ = make_transform("T_ba");
    for_each_parameter([](ParamGroup, Parameter<T>& p) { p.zero_grad(); });
  }

  const ModelConfig& config() const { return cfg_; }
  const Encoder<T>& encoder() const { return enc_; }
  const Decoder<T>& decoder(Direction d) const { return d == Direction::ab ? dec_ab_ : dec_ba_; }
  const TransformNet<T>& transform(Direction d) const { return d == Direction::ab ? t_ab_ : t_ba_; }
  TransformNet<T>& transform(Direction d) { return d == Direction::ab ? t_ab_ : t_ba_; }

  /// Visits every parameter in a fixed order with its optimizer group.
  template <typename F>
  void for_each_parameter(F&& f) {
    using model_detail::visit_conv;
    using model_detail::visit_res;
    auto syn = [&](Parameter<T>& p) { f(ParamGroup::synthesis, p); };
    visit_conv(enc_.stem, syn);
    visit_conv(enc_.down1, syn);
    visit_conv(enc_.down2, syn);
    for (auto& r : enc_.blocks) visit_res(r, syn);
    for (Decoder<T>* d : {&dec_ab_, &dec_ba_}) {
      for (auto& r : d->blocks) visit_res(r, syn);
      visit_conv(d->up1, syn);
      visit_conv(d->up2, syn);
      visit_conv(d->out7, syn);
      visit_conv(d->out1, syn);
    }
    for (TransformNet<T>* t : {&t_ab_, &t_ba_}) {
      auto af = [&](Parameter<T>& p) { f(ParamGroup::affine, p); };
      visit_conv(t->affine.c1, af);
      visit_conv(t->affine.c2, af);
      visit_conv(t->affine.c3, af);
      af(t->affine.d1.w);
      af(t->affine.d1.b);
      af(t->affine.d2.w);
      af(t->affine.d2.b);
      auto nr = [&](Parameter<T>& p) { f(ParamGroup::nonrigid, p); };
      visit_conv(t->nonrigid.m1, nr);
      visit_conv(t->nonrigid.m2, nr);
      visit_conv(t->nonrigid.f1, nr);
      visit_conv(t->nonrigid.f2, nr);
      visit_res(t->nonrigid.block, nr);
      visit_conv(t->nonrigid.head, nr);
    }
  }

  template <typename F>
  void for_each_parameter(F&& f) const {
    const_cast<FireModel*>(this)->for_each_parameter(
        [&](ParamGroup g, Parameter<T>& p) { f(g, static_cast<const Parameter<T>&>(p)); });
  }

  std::vector<Parameter<T>*> parameters(ParamGroup g) {
    std::vector<Parameter<T>*> out;
    for_each_parameter([&](ParamGroup pg, Parameter<T>& p) {
      if (pg == g) out.push_back(&p);
    });
    return out;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for_each_parameter([&](ParamGroup, Parameter<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](ParamGroup, const Parameter<T>& p) { n += p.value.size(); });
    return n;
  }

  void zero_grad() {
    for_each_parameter([](ParamGroup, Parameter<T>& p) { p.zero_grad(); });
  }

 private:
  ModelConfig cfg_;
  Encoder<T> enc_;
  Decoder<T> dec_ab_, dec_ba_;
  TransformNet<T> t_ab_, t_ba_;
};

// ---------------------------------------------------------------------------
// Forward building blocks

namespace model_detail {

template <typename T>
Var<T> conv(Tape<T>& t, const ConvLayer<T>& c, Var<T> x) {
  std::optional<Var<T>> b;
  if (c.bias) b = t.param(c.b);
  return ops::conv(x, t.param(c.w), b, c.stride, ops::Padding::same);
}

/// conv -> instance norm -> leaky ReLU
template <typename T>
Var<T> conv_block(Tape<T>& t, const ConvLayer<T>& c, Var<T> x, T slope) {
  return ops::leaky_relu(ops::instance_norm(conv(t, c, x)), slope);
}

template <typename T>
Shape scaled(const Shape& s, std::size_t mul, std::size_t div) {
  Shape o;
  for (auto e : s) o.push_back(e * mul / div);
  return o;
}

}  // namespace model_detail

/// x + IN(conv(act(IN(conv(x))))).
template <typename T>
Var<T> resnet_block(Tape<T>& t, const ResBlock<T>& r, Var<T> x, T slope = T(0.2)) {
  const std::size_t ch = r.c1.w.value.dim(1);
  if (x.shape().at(0) != ch)
    throw ShapeError("resnet_block: input " + to_string(x.shape()) + " has " + std::to_string(x.shape()[0]) +
                     " channels, block width is " + std::to_string(ch));
  Var<T> h = model_detail::conv_block(t, r.c1, x, slope);
  h = ops::instance_norm(model_detail::conv(t, r.c2, h));
  return ops::add(x, h);
}

/// Image [1, S...] -> features [4b, S/4...]. Every extent must be a
/// multiple of 4 and at least 16.
template <typename T>
Var<T> encode(Tape<T>& t, const FireModel<T>& m, Var<T> x) {
  const auto& cfg = m.config();
  const Shape& s = x.shape();
  if (s.size() != cfg.dim + 1 || s[0] != 1)
    throw ShapeError("encode: expected a single-channel " + std::to_string(cfg.dim) + "-D image, got " + to_string(s));
  for (std::size_t a = 1; a < s.size(); ++a)
    if (s[a] % 4 != 0 || s[a] < 16)
      throw ShapeError("encode: spatial extents must be multiples of 4 and >= 16, got " + to_string(s));
  const T slope = T(cfg.leaky_slope);
  const auto& e = m.encoder();
  Var<T> h = model_detail::conv_block(t, e.stem, x, slope);
  h = model_detail::conv_block(t, e.down1, h, slope);
  h = model_detail::conv_block(t, e.down2, h, slope);
  for (const auto& r : e.blocks) h = resnet_block(t, r, h, slope);
  return h;
}

/// Features [4b, S/4...] -> image [1, S...] in (-1, 1).
template <typename T>
Var<T> decode(Tape<T>& t, const FireModel<T>& m, Direction d, Var<T> g) {
  const auto& cfg = m.config();
  const Shape& s = g.shape();
  if (s.size() != cfg.dim + 1 || s[0] != cfg.feature_channels())
    throw ShapeError("decode: expected " + std::to_string(cfg.feature_channels()) + " feature channels, got " + to_string(s));
  const T slope = T(cfg.leaky_slope);
  const auto& dec = m.decoder(d);
  Var<T> h = g;
  for (const auto& r : dec.blocks) h = resnet_block(t, r, h, slope);
  Shape sp = spatial_of(s);
  h = ops::resize_linear(h, model_detail::scaled<T>(sp, 2, 1));
  h = model_detail::conv_block(t, dec.up1, h, slope);
  h = ops::resize_linear(h, model_detail::scaled<T>(sp, 4, 1));
  h = model_detail::conv_block(t, dec.up2, h, slope);
  h = model_detail::conv_block(t, dec.out7, h, slope);
  return ops::tanh(model_detail::conv(t, dec.out1, h));
}

/// Affine backward map [n, n+1] aligning the moving features to the fixed
/// ones. Output size does not depend on spatial extents.
template <typename T>
Var<T> predict_affine(Tape<T>& t, const FireModel<T>& m, Direction d, Var<T> g_moving, Var<T> g_fixed) {
  if (g_moving.shape() != g_fixed.shape())
    throw ShapeError("predict_affine: feature shapes differ " + to_string(g_moving.shape()) + " vs " + to_string(g_fixed.shape()));
  const auto& net = m.transform(d).affine;
  const T slope = T(m.config().leaky_slope);
  const std::size_t n = m.config().dim;
  Var<T> h = ops::concat_channels(g_moving, g_fixed);
  h = model_detail::conv_block(t, net.c1, h, slope);
  h = model_detail::conv_block(t, net.c2, h, slope);
  h = model_detail::conv_block(t, net.c3, h, slope);
  h = ops::global_avg_pool(h);
  h = ops::leaky_relu(ops::dense(h, t.param(net.d1.w), t.param(net.d1.b)), slope);
  h = ops::dense(h, t.param(net.d2.w), t.param(net.d2.b));
  return ops::reshape(h, Shape{n, n + 1});
}

/// Displacement field [n, feature grid...] bounded by delta_max.
template <typename T>
Var<T> predict_nonrigid(Tape<T>& t, const FireModel<T>& m, Direction d, Var<T> g_moving_affine, Var<T> g_fixed) {
  if (g_moving_affine.shape() != g_fixed.shape())
    throw ShapeError("predict_nonrigid: feature shapes differ " + to_string(g_moving_affine.shape()) + " vs " +
                     to_string(g_fixed.shape()));
  const auto& net = m.transform(d).nonrigid;
  const T slope = T(m.config().leaky_slope);
  Var<T> a = model_detail::conv_block(t, net.m1, g_moving_affine, slope);
  a = model_detail::conv_block(t, net.m2, a, slope);
  Var<T> b = model_detail::conv_block(t, net.f1, g_fixed, slope);
  b = model_detail::conv_block(t, net.f2, b, slope);
  Var<T> h = resnet_block(t, net.block, ops::concat_channels(a, b), slope);
  h = ops::tanh(model_detail::conv(t, net.head, h));
  return ops::scale(h, T(m.config().delta_max));
}

/// Every intermediate of one training pass, recorded on a single tape.
template <typename T>
struct ForwardBundle {
  Var<T> x_a, x_b;
  Var<T> g_a, g_b;                      // G(x^A), G(x^B)
  Var<T> affine_ab, affine_ba;          // [n, n+1]
  Var<T> field_ab, field_ba;            // feature-resolution displacements
  Var<T> grid_ab_feat, grid_ba_feat;    // composed grids, feature resolution
  Var<T> grid_ab, grid_ba;              // composed grids, image resolution
  Var<T> xhat_b, xhat_a;                // F_ab(g_a), F_ba(g_b)
  Var<T> g_a_warped, g_b_warped;        // g_a o grid_ab_feat, g_b o grid_ba_feat
  Var<T> xhat_t_b, xhat_t_a;            // F_ab(g_a_warped), F_ba(g_b_warped)
  Var<T> g_xhat_b, g_xhat_a;            // G(xhat_b), G(xhat_a)
  Var<T> cycle_a, cycle_b;              // F_ba(G(xhat_b)), F_ab(G(xhat_a))
  Var<T> g_a_affine, g_b_affine;        // g_a o affine_ab, g_b o affine_ba (feature grids)
  Var<T> syn_affine_b, syn_affine_a;    // F_ab(g_a_affine), F_ba(g_b_affine)
  Var<T> x_a_affine, x_b_affine;        // x^A o affine_ab, x^B o affine_ba (image grids)
  Var<T> reg_affine_b, reg_affine_a;    // F_ab(G(x_a_affine)), F_ba(G(x_b_affine))
  Var<T> x_a_warped, x_b_warped;        // x^A o grid_ab, x^B o grid_ba
};

/// Full bidirectional forward pass on a pair of [1, S...] images.
template <typename T>
ForwardBundle<T> forward_pair(Tape<T>& t, const FireModel<T>& m, const Tensor<T>& xa, const Tensor<T>& xb) {
  if (xa.shape() != xb.shape())
    throw ShapeError("forward_pair: image shapes differ " + to_string(xa.shape()) + " vs " + to_string(xb.shape()));
  ForwardBundle<T> f;
  f.x_a = t.constant(xa);
  f.x_b = t.constant(xb);
  const Shape img_sp = spatial_of(xa.shape());

  f.g_a = encode(t, m, f.x_a);
  f.g_b = encode(t, m, f.x_b);
  const Shape feat_sp = spatial_of(f.g_a.shape());

  f.affine_ab = predict_affine(t, m, Direction::ab, f.g_a, f.g_b);
  f.affine_ba = predict_affine(t, m, Direction::ba, f.g_b, f.g_a);

  f.g_a_affine = sample(f.g_a, affine_grid(f.affine_ab, feat_sp));
  f.g_b_affine = sample(f.g_b, affine_grid(f.affine_ba, feat_sp));
  f.field_ab = predict_nonrigid(t, m, Direction::ab, f.g_a_affine, f.g_b);
  f.field_ba = predict_nonrigid(t, m, Direction::ba, f.g_b_affine, f.g_a);

  f.grid_ab_feat = compose(f.affine_ab, f.field_ab, feat_sp);
  f.grid_ba_feat = compose(f.affine_ba, f.field_ba, feat_sp);
  f.grid_ab = compose(f.affine_ab, f.field_ab, img_sp);
  f.grid_ba = compose(f.affine_ba, f.field_ba, img_sp);

  f.xhat_b = decode(t, m, Direction::ab, f.g_a);
  f.xhat_a = decode(t, m, Direction::ba, f.g_b);

  f.g_a_warped = sample(f.g_a, f.grid_ab_feat);
  f.g_b_warped = sample(f.g_b, f.grid_ba_feat);
  f.xhat_t_b = decode(t, m, Direction::ab, f.g_a_warped);
  f.xhat_t_a = decode(t, m, Direction::ba, f.g_b_warped);

  f.g_xhat_b = encode(t, m, f.xhat_b);
  f.g_xhat_a = encode(t, m, f.xhat_a);
  f.cycle_a = decode(t, m, Direction::ba, f.g_xhat_b);
  f.cycle_b = decode(t, m, Direction::ab, f.g_xhat_a);

  f.syn_affine_b = decode(t, m, Direction::ab, f.g_a_affine);
  f.syn_affine_a = decode(t, m, Direction::ba, f.g_b_affine);

  f.x_a_affine = sample(f.x_a, affine_grid(f.affine_ab, img_sp));
  f.x_b_affine = sample(f.x_b, affine_grid(f.affine_ba, img_sp));
  f.reg_affine_b = decode(t, m, Direction::ab, encode(t, m, f.x_a_affine));
  f.reg_affine_a = decode(t, m, Direction::ba, encode(t, m, f.x_b_affine));

  f.x_a_warped = sample(f.x_a, f.grid_ab);
  f.x_b_warped = sample(f.x_b, f.grid_ba);
  return f;
}

/// Result of registering one volume onto another.
template <typename T>
struct Registration {
  AffineMatrix<T> affine;
  DisplacementField<T> field;  // feature resolution
  Tensor<T> grid;              // composed grid at image resolution
  Volume warped;
};

/// Test-time registration: encoder plus one transformation network.
/// Warps the moving image (linear) and its masks (nearest neighbour); the
/// result carries the fixed volume's spacing.
template <typename T>
Registration<T> register_volumes(const Volume& moving, const Volume& fixed, const FireModel<T>& m,
                                 Direction dir = Direction::ab) {
  if (moving.image.shape() != fixed.image.shape())
    throw ShapeError("register: moving " + to_string(moving.image.shape()) + " and fixed " +
                     to_string(fixed.image.shape()) + " differ");
  Tape<T> t(false);
  Var<T> xm = t.constant(moving.image.template cast<T>());
  Var<T> xf = t.constant(fixed.image.template cast<T>());
  Var<T> gm = encode(t, m, xm);
  Var<T> gf = encode(t, m, xf);
  const Shape feat_sp = spatial_of(gm.shape());
  const Shape img_sp = moving.spatial();
  Var<T> A = predict_affine(t, m, dir, gm, gf);
  Var<T> gm_aff = sample(gm, affine_grid(A, feat_sp));
  Var<T> u = predict_nonrigid(t, m, dir, gm_aff, gf);
  Var<T> grid = compose(A, u, img_sp);

  Registration<T> r{AffineMatrix<T>::from_tensor(A.value()), DisplacementField<T>(u.value()), grid.value(), {}};
  r.warped.image = sample(xm, grid).value().template cast<float>();
  r.warped.spacing = fixed.spacing;
  for (const auto& [name, mask] : moving.labels) r.warped.labels.emplace(name, warp_nearest(mask, r.grid));
  return r;
}

}  // namespace fire
