// Copyright 2026 The firereg Authors
// Licensed under the Apache License, Version 2.0
#include <gtest/gtest.h>

#include <set>

#include "gradient_cases.hpp"

using namespace fire;
using namespace fire::testing;

namespace {

Td max_abs_diff_grid(const Td& g) {
  const Td id = identity_grid<double>(spatial_of(g.shape()));
  Td d({1});
  for (std::size_t i = 0; i < g.size(); ++i) d[0] = std::max(d[0], std::abs(g[i] - id[i]));
  return d;
}

}  // namespace

TEST(Model, EncoderShapes) {
  ModelConfig cfg;
  FireModel<float> m(cfg, 1);
  Tape<float> t(false);
  Tensor<float> x({1, 64, 64});
  x.fill(0.3f);
  EXPECT_EQ(encode(t, m, t.constant(x)).shape(), (Shape{64, 16, 16}));
  EXPECT_THROW(encode(t, m, t.constant(Tensor<float>({1, 30, 32}))), ShapeError);
  EXPECT_THROW(encode(t, m, t.constant(Tensor<float>({2, 32, 32}))), ShapeError);
}

TEST(Model, PaperScaleParameterShapes) {
  ModelConfig cfg;
  cfg.base_channels = 64;
  FireModel<float> m(cfg, 0);
  std::map<std::string, Shape> shapes;
  m.for_each_parameter([&](ParamGroup, Parameter<float>& p) { shapes[p.name] = p.value.shape(); });
  EXPECT_EQ(shapes.at("G.stem.w"), (Shape{64, 1, 7, 7}));
  EXPECT_EQ(shapes.at("G.down1.w"), (Shape{128, 64, 3, 3}));
  EXPECT_EQ(shapes.at("G.down2.w"), (Shape{256, 128, 3, 3}));
  EXPECT_EQ(shapes.at("G.res3.c2.w"), (Shape{256, 256, 3, 3}));
  EXPECT_FALSE(shapes.count("G.res4.c1.w"));
  EXPECT_EQ(shapes.at("T_ab.af.d2.w"), (Shape{6, 128}));
  EXPECT_EQ(shapes.at("T_ab.af.d2.b"), (Shape{6}));
  EXPECT_EQ(shapes.at("T_ba.nr.head.w"), (Shape{2, 256, 3, 3}));
}

TEST(Model, DecoderRangeAndShape) {
  FireModel<double> m = tiny_model();
  Tape<double> t(false);
  Vd g = t.constant(random_tensor({16, 9, 9}, 3, -3, 3));
  Vd y = decode(t, m, Direction::ab, g);
  EXPECT_EQ(y.shape(), (Shape{1, 36, 36}));
  for (double v : y.value().data()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Model, AffineHeadIgnoresSpatialExtent) {
  ModelConfig cfg;
  cfg.base_channels = 4;
  FireModel<double> m(cfg, 2);
  Tape<double> t(false);
  for (std::size_t s : {16u, 20u}) {
    Vd ga = t.constant(random_tensor({16, s, s}, s));
    Vd gb = t.constant(random_tensor({16, s, s}, s + 1));
    Vd A = predict_affine(t, m, Direction::ab, ga, gb);
    ASSERT_EQ(A.shape(), (Shape{2, 3}));
    const Td I = AffineMatrix<double>::identity(2).tensor();
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(A.value()[i], I[i]);
  }
  EXPECT_THROW(predict_affine(t, m, Direction::ab, t.constant(Td({16, 16, 16})), t.constant(Td({16, 20, 20}))),
               ShapeError);
}

TEST(Model, DisplacementBoundedByDeltaMax) {
  FireModel<double> m = tiny_model();
  m.for_each_parameter([](ParamGroup, Parameter<double>& p) {
    if (p.name.ends_with("nr.head.w")) p.value.fill(5.0);
  });
  Tape<double> t(false);
  Vd u = predict_nonrigid(t, m, Direction::ab, t.constant(random_tensor({16, 9, 9}, 1)),
                          t.constant(random_tensor({16, 9, 9}, 2)));
  EXPECT_EQ(u.shape(), (Shape{2, 9, 9}));
  double peak = 0;
  for (double v : u.value().data()) peak = std::max(peak, std::abs(v));
  EXPECT_LE(peak, m.config().delta_max);
  EXPECT_GT(peak, 0.5 * m.config().delta_max);
}

TEST(Model, IdentityAtInit) {
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.resnet_blocks = 1;
  FireModel<double> m(cfg, 7);
  const auto [xa, xb] = tiny_pair();
  Tape<double> t(false);
  const auto f = forward_pair(t, m, xa, xb);
  for (Vd g : {f.grid_ab, f.grid_ba, f.grid_ab_feat, f.grid_ba_feat}) EXPECT_EQ(max_abs_diff_grid(g.value())[0], 0.0);
  EXPECT_EQ(f.x_a_warped.value(), xa);
  EXPECT_EQ(f.x_b_warped.value(), xb);
  for (double v : f.field_ab.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Model, RegisterUntrainedReturnsMovingImage) {
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.resnet_blocks = 1;
  FireModel<float> m(cfg, 7);
  auto [a, b] = generate_phantom_pair(3, 2, 48);
  b.spacing = {0.5, 2.0};
  const auto r = register_volumes(a, b, m);
  EXPECT_EQ(r.warped.image, a.image);
  EXPECT_EQ(r.warped.spacing, b.spacing);
  for (const auto& [name, mask] : a.labels) EXPECT_EQ(r.warped.labels.at(name), mask) << name;
  auto c = a;
  c.image = Tensor<float>({1, 40, 40});
  c.spacing = a.spacing;
  EXPECT_THROW(register_volumes(a, c, m), ShapeError);
}

TEST(Model, ForwardIsPure) {
  FireModel<double> m = tiny_model();
  const auto [xa, xb] = tiny_pair();
  Tape<double> t1(false), t2(false);
  const auto f1 = forward_pair(t1, m, xa, xb);
  const auto f2 = forward_pair(t2, m, xa, xb);
  EXPECT_EQ(f1.grid_ab.value(), f2.grid_ab.value());
  EXPECT_EQ(f1.cycle_b.value(), f2.cycle_b.value());
  // Same image in, same features out.
  Tape<double> t3(false);
  EXPECT_EQ(encode(t3, m, t3.constant(xa)).value(), f1.g_a.value());
}

TEST(Model, DirectionsHaveSeparateWeights) {
  FireModel<double> m = tiny_model();
  std::set<const void*> seen;
  std::size_t n = 0;
  m.for_each_parameter([&](ParamGroup, Parameter<double>& p) {
    seen.insert(&p);
    ++n;
  });
  EXPECT_EQ(seen.size(), n);
  EXPECT_NE(m.transform(Direction::ab).affine.d2.w.value, m.transform(Direction::ba).affine.d2.w.value);
}

TEST(Model, EveryParameterReceivesGradient) {
  FireModel<double> m = tiny_model();
  const auto [xa, xb] = tiny_pair();
  m.zero_grad();
  {
    Tape<double> t;
    auto f = forward_pair(t, m, xa, xb);
    t.backward(total_loss(f).total);
  }
  m.for_each_parameter([](ParamGroup, Parameter<double>& p) {
    double s = 0;
    for (double v : p.grad.data()) s += std::abs(v);
    EXPECT_GT(s, 0.0) << p.name;
  });
}

TEST(Model, ParameterGroups) {
  FireModel<float> m(ModelConfig{}, 0);
  m.for_each_parameter([](ParamGroup g, Parameter<float>& p) {
    if (p.name.starts_with("G.") || p.name.starts_with("F_")) EXPECT_EQ(g, ParamGroup::synthesis) << p.name;
    else if (p.name.find(".af.") != std::string::npos) EXPECT_EQ(g, ParamGroup::affine) << p.name;
    else EXPECT_EQ(g, ParamGroup::nonrigid) << p.name;
  });
}
