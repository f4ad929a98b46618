#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"
#include "vadkit/evaluate.hpp"
#include "vadkit/synth.hpp"

using namespace vadkit;
using vadkit::test::pairwise_auc;

namespace {

VideoResult result(std::vector<double> raw, std::vector<int> labels, std::string cat = "visual") {
  ScoreSeries s{"v", raw, normalize_scores(raw)};
  return {s, std::move(labels), std::move(cat)};
}

SynthSpec eval_spec() {
  SynthSpec s;
  s.n_normal_videos = 1;
  s.n_test_normal_videos = 1;
  s.n_visual_anomaly_videos = 2;
  s.n_contextual_anomaly_videos = 2;
  s.video_length = 34;
  s.seed = 4;
  return s;
}

}  // namespace

TEST(Auc, Examples) {
  EXPECT_EQ(auc_roc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_EQ(auc_roc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}), 0.0);
  EXPECT_EQ(auc_roc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}), 0.5);
  EXPECT_EQ(auc_roc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
}

TEST(Auc, RejectsDegenerateInput) {
  EXPECT_THROW(auc_roc({0.1, 0.2}, {1, 1}), Error);
  EXPECT_THROW(auc_roc({0.1, 0.2}, {0, 0}), Error);
  EXPECT_THROW(auc_roc({0.1}, {0, 1}), Error);
  EXPECT_THROW(auc_roc({0.1, 0.2}, {0, 2}), Error);
  EXPECT_THROW(auc_roc({0.1, std::nan("")}, {0, 1}), Error);
}

TEST(Auc, MatchesPairwiseDefinitionExactly) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 7) / 6.0;  // coarse values force ties
      l[i] = static_cast<int>(rng() % 2);
    }
    l[0] = 0;
    l[1] = 1;
    EXPECT_EQ(auc_roc(s, l), pairwise_auc(s, l)) << "trial " << trial;
  }
}

TEST(Auc, InvariantUnderStrictlyIncreasingTransform) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(50), t(50);
    std::vector<int> l(50);
    for (std::size_t i = 0; i < 50; ++i) {
      s[i] = u(rng);
      t[i] = std::exp(2 * s[i]) + 7;
      l[i] = i % 3 == 0;
    }
    EXPECT_EQ(auc_roc(s, l), auc_roc(t, l));
  }
}

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_scores({3, 1, 5}), (std::vector<double>{0.5, 0, 1}));
  EXPECT_EQ(normalize_scores({2, 4, 3}), (std::vector<double>{0, 1, 0.5}));
  EXPECT_EQ(normalize_scores({2 * 3.0 + 1, 2 * 1.0 + 1, 2 * 5.0 + 1}), normalize_scores({3, 1, 5}));
  EXPECT_EQ(normalize_scores({5, 5, 5}), (std::vector<double>{0, 0, 0}));
  EXPECT_THROW(normalize_scores({}), Error);
}

TEST(AggregateAuc, PerVideoRescalingDoesNotChangeAuc) {
  const std::vector<VideoResult> a = {result({1, 2, 9, 3}, {0, 0, 1, 0}), result({5, 1, 2, 2}, {1, 0, 0, 1})};
  const std::vector<VideoResult> b = {result({100, 200, 900, 300}, {0, 0, 1, 0}),
                                      result({-5 + 3 * 5, -5 + 3 * 1, -5 + 3 * 2, -5 + 3 * 2}, {1, 0, 0, 1})};
  for (auto mode : {AucMode::Concatenated, AucMode::PerVideoMean})
    EXPECT_EQ(aggregate_auc(a, mode), aggregate_auc(b, mode));
}

TEST(AggregateAuc, PerVideoMeanSkipsSingleClassVideos) {
  const std::vector<VideoResult> v = {result({1, 2, 3}, {0, 0, 1}), result({3, 2, 1}, {0, 0, 0}),
                                      result({3, 2, 1}, {0, 0, 1})};
  EXPECT_EQ(aggregate_auc(v, AucMode::PerVideoMean), 0.5);
  EXPECT_THROW(aggregate_auc({result({1, 2}, {0, 0})}, AucMode::PerVideoMean), Error);
  EXPECT_EQ(parse_auc_mode("per-video"), AucMode::PerVideoMean);
  EXPECT_THROW(parse_auc_mode("mean"), Error);
}

TEST(SlidingScores, ExactLengthScoresOneWindow) {
  int calls = 0;
  const auto s = sliding_scores("v", 32, 32, [&](std::size_t start) {
    ++calls;
    EXPECT_EQ(start, 0u);
    return 3.5;
  });
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(s.raw, std::vector<double>(32, 3.5));
  EXPECT_EQ(s.normalized, std::vector<double>(32, 0.0));
}

TEST(SlidingScores, ClampedWindowsAreScoredOnce) {
  std::vector<std::size_t> starts;
  const auto s = sliding_scores("v", 34, 32, [&](std::size_t start) {
    starts.push_back(start);
    return static_cast<double>(start);
  });
  EXPECT_EQ(starts, (std::vector<std::size_t>{0, 1, 2}));
  for (std::size_t i = 0; i < 34; ++i) EXPECT_EQ(s.raw[i], static_cast<double>(clip_window_start(34, 32, i)));
  EXPECT_EQ(s.normalized.front(), 0.0);
  EXPECT_EQ(s.normalized.back(), 1.0);
}

TEST(SlidingScores, ShortVideoNamesVideo) {
  try {
    sliding_scores("tiny", 10, 16, [](std::size_t) { return 0.0; });
    FAIL();
  } catch (const Error& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("tiny"), std::string::npos);
    EXPECT_NE(m.find("T=16"), std::string::npos);
  }
}

class EvalPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(vadkit::test::scratch_dir("eval_pipeline"));
    annotations_ = new AnnotationSet(generate_synthetic(eval_spec(), *root_));
  }
  static void TearDownTestSuite() {
    delete root_;
    delete annotations_;
  }
  static fs::path* root_;
  static AnnotationSet* annotations_;
};
fs::path* EvalPipeline::root_ = nullptr;
AnnotationSet* EvalPipeline::annotations_ = nullptr;

TEST_F(EvalPipeline, OracleScoresOneAntiOracleZero) {
  EXPECT_EQ(evaluate_run(*root_, *annotations_, label_scorer(false), false).auc, 1.0);
  // All-normal videos have a constant anti-oracle series, which normalizes
  // to zeros and ties with the positives; per-video AUC skips them.
  EXPECT_EQ(evaluate_run(*root_, *annotations_, label_scorer(true), false, AucMode::PerVideoMean).auc, 0.0);
  auto spec = eval_spec();
  spec.n_test_normal_videos = 0;
  const auto dir = vadkit::test::scratch_dir("eval_anomalous_only");
  const auto ann = generate_synthetic(spec, dir);
  EXPECT_EQ(evaluate_run(dir, ann, label_scorer(true), false).auc, 0.0);
  EXPECT_EQ(evaluate_run(dir, ann, label_scorer(false), false).auc, 1.0);
  const auto rep = evaluate_run(*root_, *annotations_, label_scorer(false), false, AucMode::PerVideoMean);
  EXPECT_EQ(rep.auc, 1.0);
  EXPECT_EQ(subset_auc(rep, {"visual", "normal"}), 1.0);
  EXPECT_EQ(rep.by_category.count("visual"), 1u);
  EXPECT_EQ(rep.by_category.count("normal"), 0u);
}

TEST_F(EvalPipeline, MissingAnnotationNamesVideo) {
  AnnotationSet partial = *annotations_;
  partial.videos.erase(std::remove_if(partial.videos.begin(), partial.videos.end(),
                                      [](const TemporalAnnotation& a) { return a.video_id == "visual_0001"; }),
                       partial.videos.end());
  try {
    evaluate_run(*root_, partial, label_scorer(false), false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("'visual_0001'"), std::string::npos);
  }
}

TEST_F(EvalPipeline, SumAndMeanReductionGiveSameAuc) {
  ModelConfig cfg;
  cfg.resolve();
  AnomalyModel<float> model(cfg);
  model.initialize(3);
  auto scorer = [&](Reduction r) -> VideoScorer {
    return [&model, r](const Video& v, const TemporalAnnotation&) {
      const Shape& shape = model.config().backbone.input_shape;
      return sliding_scores(v.id(), v.size(), shape[0], [&](std::size_t start) {
        return static_cast<double>(model.score(to_sample(load_clip(v, start + shape[0] / 2, shape), v), r));
      });
    };
  };
  const auto sum = evaluate_run(*root_, *annotations_, scorer(Reduction::Sum), false);
  const auto mean = evaluate_run(*root_, *annotations_, scorer(Reduction::Mean), false);
  EXPECT_NEAR(sum.auc, mean.auc, 1e-12);
  const auto via_model = evaluate_run(*root_, *annotations_, model_scorer(model), false);
  EXPECT_EQ(via_model.auc, sum.auc);
}

TEST_F(EvalPipeline, UntrainedModelIsNearChance) {
  ModelConfig cfg;
  cfg.resolve();
  std::vector<double> aucs;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    AnomalyModel<float> model(cfg);
    model.initialize(seed);
    aucs.push_back(evaluate_run(*root_, *annotations_, model_scorer(model), false).auc);
  }
  for (double a : aucs) {
    EXPECT_GE(a, 0.3);
    EXPECT_LE(a, 0.7);
  }
}

TEST(ScoreCsv, RoundTrip) {
  const auto dir = vadkit::test::scratch_dir("score_csv");
  ScoreSeries s{"clip7", {0.125, 1e-9, 3.0 / 7.0}, {}};
  s.normalized = normalize_scores(s.raw);
  const std::vector<int> labels = {0, 1, 1};
  write_score_csv(dir / "clip7.csv", s, &labels);
  const auto back = read_score_csv(dir / "clip7.csv");
  EXPECT_EQ(back.video_id, "clip7");
  EXPECT_EQ(back.raw, s.raw);
  EXPECT_EQ(back.normalized, s.normalized);
  std::ofstream(dir / "bad.csv") << "a,b\n";
  EXPECT_THROW(read_score_csv(dir / "bad.csv"), Error);
}

TEST(ScorePlot, ShadesAnomalousRange) {
  ScoreSeries s{"v", {0, 1, 0, 1}, {0, 1, 0, 1}};
  const cv::Mat img = render_score_plot(s, {{1, 2}}, 400, 200);
  EXPECT_EQ(img.cols, 400);
  EXPECT_EQ(img.rows, 200);
  // the shaded band sits between the first and last sample columns
  const int mid = 50 + (400 - 65) / 2;
  const auto px = img.at<cv::Vec3b>(35, mid);
  EXPECT_EQ(px, cv::Vec3b(200, 200, 255));
  EXPECT_EQ(img.at<cv::Vec3b>(100, 60), cv::Vec3b(255, 255, 255));
}
