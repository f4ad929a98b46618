#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "vadkit/backbone.hpp"

using namespace vadkit;
using vadkit::test::random_tensor;
using vadkit::test::worst_parameter_error;

namespace {

BackboneConfig tiny(bool bias) {
  BackboneConfig c;
  c.input_shape = {4, 8, 8, 1};
  c.stages = {{2, {2, 2, 2}, {3, 3, 3}}, {3, {1, 2, 2}, {1, 2, 2}}};
  c.bias = bias;
  return c;
}

Shape roundtrip_shape(const BackboneConfig& c) {
  Shape s = c.bottleneck_shape();
  for (const auto& g : c.decoder_plan()) {
    s[3] = g.in_channels;
    s = g.transposed_output(s);
  }
  return s;
}

}  // namespace

TEST(Backbone, PresetBottlenecks) {
  EXPECT_EQ(BackboneConfig::paper().bottleneck_shape(), (Shape{4, 7, 7, 2048}));
  EXPECT_EQ(BackboneConfig::capacity().bottleneck_shape(), (Shape{8, 14, 14, 2048}));
  EXPECT_EQ(BackboneConfig::toy().bottleneck_shape(), (Shape{2, 2, 2, 64}));
  EXPECT_EQ(BackboneConfig::toy(5).input_shape, (Shape{16, 64, 64, 5}));
  EXPECT_THROW(BackboneConfig::preset("huge"), Error);
}

TEST(Backbone, BottleneckIsInputDividedByStrides) {
  for (const auto& c : {BackboneConfig::paper(), BackboneConfig::capacity(), BackboneConfig::toy(), tiny(false)}) {
    Shape s = c.input_shape;
    for (const auto& st : c.stages)
      for (int a = 0; a < 3; ++a) s[a] /= st.stride[a];
    s[3] = c.stages.back().channels;
    EXPECT_EQ(c.bottleneck_shape(), s);
    Shape planned = c.input_shape;
    for (const auto& g : c.encoder_plan()) planned = g.conv_output(planned);
    EXPECT_EQ(planned, s);
  }
}

TEST(Backbone, DecoderPlanRestoresInputShape) {
  for (const auto& c : {BackboneConfig::paper(), BackboneConfig::capacity(), BackboneConfig::toy(), tiny(true)})
    EXPECT_EQ(roundtrip_shape(c), c.input_shape);
  auto widened = BackboneConfig::toy();
  widened.decoder_extra_channels = 64;
  EXPECT_EQ(widened.decoder_plan().front().in_channels, 128u);
  EXPECT_EQ(roundtrip_shape(widened), widened.input_shape);
}

TEST(Backbone, SamePaddingRule) {
  EXPECT_EQ(BackboneConfig::same_padding(2, 2), 0u);
  EXPECT_EQ(BackboneConfig::same_padding(3, 2), 1u);
  EXPECT_EQ(BackboneConfig::same_padding(3, 1), 1u);
  EXPECT_EQ(BackboneConfig::same_padding(4, 1), 2u);
  EXPECT_EQ(BackboneConfig::same_padding(1, 4), 0u);
}

TEST(Backbone, StrideMustDivideExtent) {
  BackboneConfig c = BackboneConfig::toy();
  c.input_shape = {16, 60, 64, 3};
  EXPECT_THROW(c.validate(), ShapeError);
}

TEST(Encoder, ToyShapeAndShapeErrors) {
  ParameterSet<float> params;
  Encoder<float> enc(BackboneConfig::toy(), params);
  std::mt19937_64 rng(1);
  enc.initialize(params, rng);
  const auto x = random_tensor<float>({16, 64, 64, 3}, rng);
  EXPECT_EQ(enc.forward(params, x).shape(), (Shape{2, 2, 2, 64}));
  try {
    enc.forward(params, random_tensor<float>({16, 32, 32, 3}, rng));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("16x64x64x3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("16x32x32x3"), std::string::npos);
  }
}

TEST(Encoder, ZeroInputGivesZeroOutputWithoutBias) {
  ParameterSet<float> params;
  Encoder<float> enc(BackboneConfig::toy(), params);
  std::mt19937_64 rng(2);
  enc.initialize(params, rng);
  const auto h = enc.forward(params, Tensor<float>({16, 64, 64, 3}));
  for (float v : h.vec()) EXPECT_EQ(v, 0.0f);
}

TEST(Encoder, DeterministicForward) {
  ParameterSet<float> params;
  Encoder<float> enc(BackboneConfig::toy(), params);
  std::mt19937_64 rng(3);
  enc.initialize(params, rng);
  const auto x = random_tensor<float>({16, 64, 64, 3}, rng);
  EXPECT_TRUE(enc.forward(params, x) == enc.forward(params, x));
}

TEST(Decoder, ToyShapeAndTanhRange) {
  ParameterSet<float> params;
  Decoder<float> dec(BackboneConfig::toy(), params);
  std::mt19937_64 rng(4);
  dec.initialize(params, rng);
  const auto y = dec.forward(params, random_tensor<float>({2, 2, 2, 64}, rng, -5, 5));
  EXPECT_EQ(y.shape(), (Shape{16, 64, 64, 3}));
  for (float v : y.vec()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  const auto z = dec.forward(params, Tensor<float>({2, 2, 2, 64}));
  for (float v : z.vec()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(dec.forward(params, Tensor<float>({2, 2, 2, 32})), ShapeError);
}

TEST(OneClassHead, MeanOfConstantThroughIdentity) {
  ParameterSet<double> params;
  OneClassHead<double> head(4, 4, params);
  auto& w = params[head.weight_index()].value;
  for (std::size_t i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
  const auto z = head.forward(params, Tensor<double>({2, 2, 2, 4}, 0.75));
  for (double v : z.vec()) EXPECT_DOUBLE_EQ(v, 0.75);
  const auto zero = head.forward(params, Tensor<double>({2, 2, 2, 4}));
  for (double v : zero.vec()) EXPECT_EQ(v, 0.0);
}

TEST(OneClassHead, DefaultOutputLength) {
  ParameterSet<float> params;
  OneClassHead<float> head(64, 128, params);
  std::mt19937_64 rng(5);
  head.initialize(params, rng);
  EXPECT_EQ(head.forward(params, random_tensor<float>({2, 2, 2, 64}, rng)).size(), 128u);
}

class AutoencoderGradient : public ::testing::TestWithParam<bool> {};

TEST_P(AutoencoderGradient, MatchesFiniteDifferences) {
  const BackboneConfig cfg = tiny(GetParam());
  ParameterSet<double> params;
  Encoder<double> enc(cfg, params);
  Decoder<double> dec(cfg, params);
  std::mt19937_64 rng(6);
  enc.initialize(params, rng);
  dec.initialize(params, rng);
  for (auto& p : params)
    if (!p.decay)
      for (auto& v : p.value.vec()) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  auto x = random_tensor<double>(cfg.input_shape, rng);
  const auto probe = random_tensor<double>(cfg.input_shape, rng);
  auto loss = [&] {
    const auto y = dec.forward(params, enc.forward(params, x));
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * probe[i];
    return s;
  };
  StackTrace<double> et, dt;
  const auto h = enc.forward(params, x, &et);
  dec.forward(params, h, &dt);
  Gradients<double> grads = params.zeros_like();
  Tensor<double> dclip;
  enc.backward(params, et, dec.backward(params, dt, probe, grads), grads, &dclip);
  EXPECT_LT(worst_parameter_error(params, grads, loss), 1e-4);
  EXPECT_LT(vadkit::test::relative_error(dclip, vadkit::test::numeric_gradient(x, loss)), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Bias, AutoencoderGradient, ::testing::Values(false, true));
