#include <algorithm>
#include <random>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "support.hpp"
#include "vadkit/flow.hpp"

using namespace vadkit;

namespace {

// Smooth random texture (blurred noise), 8-bit RGB.
cv::Mat texture(int size, std::uint64_t seed) {
  cv::Mat noise(size, size, CV_8UC3);
  cv::RNG rng(seed);
  rng.fill(noise, cv::RNG::UNIFORM, 0, 256);
  cv::Mat smooth;
  cv::GaussianBlur(noise, smooth, cv::Size(0, 0), 2.0, 2.0, cv::BORDER_REFLECT);
  cv::normalize(smooth, smooth, 0, 255, cv::NORM_MINMAX);
  return smooth;
}

cv::Mat shift_right_wrap(const cv::Mat& img, int dx) {
  cv::Mat out(img.size(), img.type());
  for (int x = 0; x < img.cols; ++x) img.col(x).copyTo(out.col((x + dx) % img.cols));
  return out;
}

double median(std::vector<float> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(FlowCodec, EncodeExamples) {
  EXPECT_EQ(encode_flow_value(-20.0), 0);
  EXPECT_EQ(encode_flow_value(20.0), 255);
  EXPECT_EQ(encode_flow_value(25.0), 255);
  EXPECT_EQ(encode_flow_value(-1e9), 0);
  EXPECT_EQ(encode_flow_value(0.0), 128);
}

TEST(FlowCodec, DecodeExamples) {
  EXPECT_DOUBLE_EQ(decode_flow_value(0), -1.0);
  EXPECT_DOUBLE_EQ(decode_flow_value(255), 1.0);
  EXPECT_NEAR(decode_flow_value(128), 0.00392156862745098, 1e-15);
  EXPECT_LE(std::abs(decode_flow_value(encode_flow_value(0.0))), 2.0 / 255.0);
  EXPECT_THROW(decode_flow_code(256), Error);
  EXPECT_THROW(decode_flow_code(-1), Error);
  EXPECT_DOUBLE_EQ(decode_flow_code(255), 1.0);
}

TEST(FlowCodec, MonotoneAndBoundedRoundTrip) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  std::vector<double> vals(100000);
  for (auto& v : vals) v = u(rng);
  for (double v : vals) {
    const auto q = encode_flow_value(v);
    EXPECT_LE(std::abs(dequantize_to_flow(q) - v), 40.0 / 255.0 * (0.5 + 1e-9));
    const double n = decode_flow_value(q);
    EXPECT_GE(n, -1.0);
    EXPECT_LE(n, 1.0);
  }
  std::sort(vals.begin(), vals.end());
  for (std::size_t i = 1; i < vals.size(); ++i) EXPECT_LE(encode_flow_value(vals[i - 1]), encode_flow_value(vals[i]));
}

TEST(FlowCodec, FieldRoundTrip) {
  FlowField f{Tensor<float>({2, 2}, std::vector<float>{-20, 0, 20, 30}), Tensor<float>({2, 2}, 5.0f)};
  const auto q = encode_flow(f);
  EXPECT_EQ(q.u.vec(), (std::vector<std::uint8_t>{0, 128, 255, 255}));
  const auto n = decode_flow(q);
  EXPECT_EQ(n.shape(), (Shape{2, 2, 2}));
  EXPECT_FLOAT_EQ(n.at(0, 0, 0), -1.0f);
  EXPECT_NEAR(n.at(1, 1, 1), 5.0 / 20.0, 1.0 / 255.0);
}

TEST(ReferenceFlow, IdenticalFramesGiveZeroFlow) {
  const cv::Mat a = texture(48, 3);
  const auto f = estimate_flow(a, a, ReferenceFlowBackend());
  for (float v : f.u.vec()) EXPECT_EQ(v, 0.0f);
  for (float v : f.v.vec()) EXPECT_EQ(v, 0.0f);
}

TEST(ReferenceFlow, RecoversTwoPixelShift) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const cv::Mat a = texture(64, seed);
    const cv::Mat b = shift_right_wrap(a, 2);
    const auto f = estimate_flow(a, b, ReferenceFlowBackend());
    EXPECT_NEAR(median(f.u.vec()), 2.0, 0.75) << "seed " << seed;
    EXPECT_NEAR(median(f.v.vec()), 0.0, 0.75) << "seed " << seed;
  }
}

TEST(ReferenceFlow, DeterministicAndRejectsShapeMismatch) {
  const cv::Mat a = texture(32, 4), b = shift_right_wrap(a, 1);
  const auto f1 = estimate_flow(a, b, ReferenceFlowBackend());
  const auto f2 = estimate_flow(a, b, ReferenceFlowBackend());
  EXPECT_TRUE(f1.u == f2.u && f1.v == f2.v);
  EXPECT_THROW(estimate_flow(a, texture(16, 4), ReferenceFlowBackend()), ShapeError);
}

TEST(ExternalFlow, FloRoundTripAndLookup) {
  const auto root = vadkit::test::scratch_dir("flo");
  fs::create_directories(root / "test" / "v");
  FlowField f{Tensor<float>({3, 4}, 1.5f), Tensor<float>({3, 4}, -0.25f)};
  f.u[5] = 7.0f;
  ExternalFlowBackend::write_flo(root / "test" / "v" / "flow_000002.flo", f);
  const ExternalFlowBackend be(root);
  const cv::Mat frame(3, 4, CV_8UC3, cv::Scalar(0, 0, 0));
  const auto g = be.estimate(frame, frame, {"test", "v", 2});
  EXPECT_TRUE(g.u == f.u && g.v == f.v);
  EXPECT_THROW(be.estimate(frame, frame, {"test", "v", 3}), Error);
  const cv::Mat big(5, 4, CV_8UC3, cv::Scalar(0, 0, 0));
  EXPECT_THROW(be.estimate(big, big, {"test", "v", 2}), ShapeError);
}

class Precompute : public ::testing::TestWithParam<FlowStorage> {};

TEST_P(Precompute, WritesNMinusOnePairsAndStaticIs128) {
  const auto root = vadkit::test::scratch_dir("precompute");
  const fs::path dir = root / "train" / "still";
  fs::create_directories(dir);
  const cv::Mat gray(16, 16, CV_8UC3, cv::Scalar(90, 90, 90));
  for (int t = 0; t < 5; ++t) write_rgb(dir / frame_name(t), gray);
  const auto stats = precompute_flow(root, ReferenceFlowBackend(), GetParam());
  EXPECT_EQ(stats.videos, 1u);
  EXPECT_EQ(stats.pairs, 4u);
  const char* ext = flow_extension(GetParam());
  for (int t = 0; t < 4; ++t) {
    EXPECT_TRUE(fs::exists(dir / indexed_name("flow_u_", t, ext)));
    EXPECT_TRUE(fs::exists(dir / indexed_name("flow_v_", t, ext)));
  }
  EXPECT_FALSE(fs::exists(dir / indexed_name("flow_u_", 4, ext)));
  const auto q = read_flow_sidecar(dir, 0);
  for (auto v : q.u.vec()) EXPECT_EQ(v, 128);
  for (auto v : q.v.vec()) EXPECT_EQ(v, 128);
}

INSTANTIATE_TEST_SUITE_P(Storage, Precompute, ::testing::Values(FlowStorage::Lossless, FlowStorage::Jpeg));

TEST(Precompute, LosslessRerunIsByteIdentical) {
  const auto root = vadkit::test::scratch_dir("precompute_rerun");
  const fs::path dir = root / "test" / "moving";
  fs::create_directories(dir);
  const cv::Mat a = texture(32, 5);
  for (int t = 0; t < 3; ++t) write_rgb(dir / frame_name(t), shift_right_wrap(a, t));
  precompute_flow(root, ReferenceFlowBackend(), FlowStorage::Lossless);
  auto read_bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const auto first = read_bytes(dir / "flow_u_000001.png");
  precompute_flow(root, ReferenceFlowBackend(), FlowStorage::Lossless);
  EXPECT_EQ(first, read_bytes(dir / "flow_u_000001.png"));
}

TEST(Precompute, MissingFrameNamesTheVideo) {
  const auto root = vadkit::test::scratch_dir("precompute_gap");
  const fs::path dir = root / "train" / "gappy";
  fs::create_directories(dir);
  const cv::Mat gray(8, 8, CV_8UC3, cv::Scalar(1, 2, 3));
  write_rgb(dir / frame_name(0), gray);
  write_rgb(dir / frame_name(2), gray);
  try {
    precompute_flow(root, ReferenceFlowBackend(), FlowStorage::Lossless);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("gappy"), std::string::npos);
  }
}
