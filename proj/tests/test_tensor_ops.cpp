// Copyright 2026 The firereg Authors
// Licensed under the Apache License, Version 2.0
#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace fire;
using namespace fire::testing;

TEST(Tensor, RejectsZeroExtentsAndBadData) {
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Conv, UnitKernelIsIdentity) {
  Tape<double> t;
  Td x = random_tensor({1, 5, 5}, 1);
  Vd y = ops::conv(t.constant(x), t.constant(Td({1, 1, 1, 1}, 1.0)), std::nullopt, 1, ops::Padding::same);
  EXPECT_EQ(y.value(), x);
}

TEST(Conv, SevenBySevenSameKeepsExtent) {
  Tape<float> t(false);
  auto y = ops::conv(t.constant(Tensor<float>({1, 64, 64}, 0.5f)), t.constant(Tensor<float>({64, 1, 7, 7}, 0.01f)),
                     std::nullopt, 1, ops::Padding::same);
  EXPECT_EQ(y.shape(), (Shape{64, 64, 64}));
}

TEST(Conv, ValidOnesSumsNine) {
  Tape<double> t;
  Vd y = ops::conv(t.constant(Td({1, 8, 8}, 1.0)), t.constant(Td({1, 1, 3, 3}, 1.0)), std::nullopt, 1, ops::Padding::valid);
  EXPECT_EQ(y.shape(), (Shape{1, 6, 6}));
  for (double v : y.value().data()) EXPECT_EQ(v, 9.0);
}

TEST(Conv, CenteredOneHotIsIdentityOnInterior) {
  Tape<double> t;
  Td x = random_tensor({1, 6, 7}, 2);
  Td k({1, 1, 3, 3});
  k[4] = 1.0;
  Vd y = ops::conv(t.constant(x), t.constant(k), std::nullopt, 1, ops::Padding::same);
  for (std::size_t i = 1; i + 1 < 6; ++i)
    for (std::size_t j = 1; j + 1 < 7; ++j) EXPECT_EQ(y.value()[i * 7 + j], x[i * 7 + j]);
}

TEST(Conv, StrideTwoSamePaddingHalves) {
  Tape<float> t(false);
  auto y = ops::conv(t.constant(Tensor<float>({2, 9, 16})), t.constant(Tensor<float>({3, 2, 3, 3})), std::nullopt, 2,
                     ops::Padding::same);
  EXPECT_EQ(y.shape(), (Shape{3, 5, 8}));
}

TEST(Conv, ChannelMismatchNamesShapes) {
  Tape<float> t(false);
  try {
    ops::conv(t.constant(Tensor<float>({2, 4, 4})), t.constant(Tensor<float>({1, 3, 3, 3})), std::nullopt, 1,
              ops::Padding::same);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("(2, 4, 4)"), std::string::npos) << e.what();
  }
}

TEST(Dense, IdentityAndBiasPassthrough) {
  Tape<double> t;
  Td x({2}, std::vector<double>{0.3, -0.7});
  Td I({2, 2}, std::vector<double>{1, 0, 0, 1});
  EXPECT_EQ(ops::dense(t.constant(x), t.constant(I), t.constant(Td({2}))).value(), x);
  Td v({2}, std::vector<double>{4, 5});
  EXPECT_EQ(ops::dense(t.constant(x), t.constant(Td({2, 2})), t.constant(v)).value(), v);
}

TEST(Dense, HandMultiply) {
  Tape<double> t;
  Vd y = ops::dense(t.constant(Td({2}, std::vector<double>{1, 2})), t.constant(Td({2, 2}, std::vector<double>{1, 1, 0, 2})),
                    t.constant(Td({2}, std::vector<double>{0, 1})));
  EXPECT_EQ(y.value(), Td({2}, std::vector<double>({3, 5})));
}

TEST(Activation, Definitions) {
  Tape<double> t;
  EXPECT_EQ(ops::tanh(t.constant(Td({3}))).value(), Td({3}));
  Vd l = ops::leaky_relu(t.constant(Td({2}, std::vector<double>{-1, 2})), 0.2);
  EXPECT_DOUBLE_EQ(l.value()[0], -0.2);
  EXPECT_DOUBLE_EQ(l.value()[1], 2.0);
  Vd r = ops::relu(t.constant(Td({2}, std::vector<double>{-1, 2})));
  EXPECT_EQ(r.value()[0], 0.0);
  Tape<float> tf;
  auto big = ops::tanh(tf.constant(Tensor<float>({2}, std::vector<float>{50.f, -50.f})));
  EXPECT_LT(big.value()[0], 1.0f);
  EXPECT_GT(big.value()[1], -1.0f);
}

TEST(InstanceNorm, ConstantAndTwoPoint) {
  Tape<double> t;
  for (double v : ops::instance_norm(t.constant(Td({2, 3, 3}, 4.0))).value().data()) EXPECT_EQ(v, 0.0);
  Vd y = ops::instance_norm(t.constant(Td({1, 2}, std::vector<double>{0, 2})));
  EXPECT_NEAR(y.value()[0], -1.0, 1e-5);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-5);
}

TEST(InstanceNorm, ZeroMeanPerChannel) {
  Tape<double> t;
  Td x = random_tensor({3, 5, 4}, 3, -2, 5);
  Vd y = ops::instance_norm(t.constant(x));
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0;
    for (std::size_t i = 0; i < 20; ++i) m += y.value()[c * 20 + i];
    EXPECT_LE(std::abs(m / 20), 1e-6);
  }
}

TEST(GlobalAvgPool, Means) {
  Tape<double> t;
  EXPECT_EQ(ops::global_avg_pool(t.constant(Td({1, 3, 3}, 1.5))).value()[0], 1.5);
  EXPECT_EQ(ops::global_avg_pool(t.constant(Td({2, 4, 4}))).shape(), Shape{2});
  EXPECT_EQ(ops::global_avg_pool(t.constant(Td({2, 9, 9}))).shape(), Shape{2});
  EXPECT_EQ(ops::global_avg_pool(t.constant(Td({1, 4}, std::vector<double>{1, 2, 3, 4}))).value()[0], 2.5);
}

TEST(Resize, IdentityConstantAndRamp) {
  Tape<double> t;
  Td x = random_tensor({2, 5, 6}, 4);
  EXPECT_EQ(ops::resize_linear(t.constant(x), Shape{5, 6}).value(), x);
  for (double v : ops::resize_linear(t.constant(Td({1, 4, 4}, 0.3)), Shape{9, 13}).value().data()) EXPECT_EQ(v, 0.3);
  Vd r = ops::resize_linear(t.constant(Td({1, 2}, std::vector<double>{0, 1})), Shape{3});
  EXPECT_EQ(r.value(), Td({1, 3}, std::vector<double>({0, 0.5, 1})));
}

TEST(ResnetBlock, ZeroBranchIsIdentityAndKeepsShape) {
  ResBlock<double> r;
  r.c1 = {Parameter<double>("c1.w", Td({8, 8, 3, 3})), Parameter<double>("c1.b", Td({8})), 1};
  r.c2 = {Parameter<double>("c2.w", Td({8, 8, 3, 3})), Parameter<double>("c2.b", Td({8})), 1};
  Tape<double> t;
  Td x = random_tensor({8, 16, 16}, 5);
  Vd y = resnet_block(t, r, t.constant(x));
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.value(), x);
}

TEST(Backward, SumAndSquare) {
  Tape<double> t;
  Parameter<double> w("w", random_tensor({2, 3}, 6));
  t.backward(ops::sum(t.param(w)));
  for (double g : w.grad.data()) EXPECT_EQ(g, 1.0);

  Tape<double> t2;
  Parameter<double> v("v", Td({2}, std::vector<double>{1, -2}));
  Vd pv = t2.param(v);
  Vd sq = pv.tape->push(Td({1}, 5.0), {pv}, [pv](Tape<double>& tt, std::size_t self) {
    for (std::size_t i = 0; i < 2; ++i) tt.grad(pv.id)[i] += tt.grad(self)[0] * 2 * pv.value()[i];
  }, "square");
  t2.backward(sq);
  EXPECT_EQ(v.grad[0], 2.0);
  EXPECT_EQ(v.grad[1], -4.0);
}

TEST(Backward, RequiresRecordingAndScalar) {
  Tape<double> t(false);
  EXPECT_THROW(t.backward(t.constant(Td({1}))), std::logic_error);
  Tape<double> t2;
  EXPECT_THROW(t2.backward(t2.leaf(Td({2}))), ShapeError);
}

TEST(Backward, NonFiniteOutputIsReported) {
  Tape<double> t;
  EXPECT_THROW(ops::scale(t.leaf(Td({1}, 1.0)), std::numeric_limits<double>::infinity()), NumericalError);
}

TEST(Rms, Values) {
  Tape<double> t;
  Td a = random_tensor({4}, 7);
  EXPECT_EQ(ops::rms(t.constant(a), t.constant(a)).value()[0], 0.0);
  EXPECT_EQ(ops::rms(t.constant(Td({2}, 1.0)), t.constant(Td({2}))).value()[0], 1.0);
  EXPECT_NEAR(ops::rms(t.constant(Td({2}, std::vector<double>{2, 0})), t.constant(Td({2}))).value()[0], 1.41421356, 1e-8);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Parameter<double> p("p", random_tensor({3}, 8));
  const Td before = p.value;
  p.zero_grad();
  AdamState<double> s;
  std::vector<Parameter<double>*> ps{&p};
  adam_step<double>(ps, s);
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepHandValue) {
  Parameter<double> p("p", Td({1}, 1.0));
  p.grad = Td({1}, 1.0);
  AdamState<double> s;
  s.hyper.lr = 0.1;
  std::vector<Parameter<double>*> ps{&p};
  adam_step<double>(ps, s);
  // m_hat = 1, v_hat = 1, update = 0.1 * 1 / (1 + 1e-8)
  EXPECT_NEAR(p.value[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, IndependentStates) {
  Parameter<double> a("a", Td({1}, 1.0)), b("b", Td({1}, 1.0));
  a.grad = Td({1}, 1.0);
  b.grad = Td({1}, -3.0);
  AdamState<double> sa, sb;
  std::vector<Parameter<double>*> pa{&a}, pb{&b};
  adam_step<double>(pa, sa);
  adam_step<double>(pa, sa);
  adam_step<double>(pb, sb);
  EXPECT_EQ(sa.step, 2u);
  EXPECT_EQ(sb.step, 1u);
  EXPECT_NE(sa.m[0][0], sb.m[0][0]);
}
