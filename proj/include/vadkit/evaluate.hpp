#pragma once

// Frame-level evaluation: every frame takes the anomaly score of the T-frame
// window centred on it (clamped at the video ends), scores are min-max
// normalised per video, concatenated over the test set and summarised by the
// frame-wise AUC-ROC.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "vadkit/dataset.hpp"
#include "vadkit/image_io.hpp"
#include "vadkit/model.hpp"

namespace vadkit {

struct ScoreSeries {
  std::string video_id;
  std::vector<double> raw;
  std::vector<double> normalized;
};

/// s_i = (a_i - min a) / (max a - min a); a constant series maps to zeros.
inline std::vector<double> normalize_scores(const std::vector<double>& raw) {
  if (raw.empty()) throw Error("normalize_scores: empty score series");
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double mn = *lo, span = *hi - *lo;
  std::vector<double> out(raw.size(), 0.0);
  if (span > 0)
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - mn) / span;
  return out;
}

/// P(score_pos > score_neg) + 1/2 P(score_pos == score_neg), computed from
/// tie-averaged ranks.
inline double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw Error("auc_roc: " + std::to_string(scores.size()) + " scores vs " +
                std::to_string(labels.size()) + " labels");
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw Error("auc_roc: labels must be 0 or 1");
    pos += static_cast<std::size_t>(l);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0)
    throw Error("auc_roc: needs at least one positive and one negative frame");
  for (double s : scores)
    if (std::isnan(s)) throw Error("auc_roc: NaN score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based) ranks of the positives, ties sharing their mean rank.
  // Every quantity here is a multiple of 1/2 and stays exact in a double.
  double pos_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) pos_in_group += labels[order[j++]];
    const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    pos_rank_sum += mean_rank * static_cast<double>(pos_in_group);
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1) / 2) / (p * n);
}

/// Scores one T-frame window starting at `first_frame`.
using WindowScorer = std::function<double(std::size_t first_frame)>;

/// Raw per-frame scores; each distinct clamped window is scored exactly once.
inline ScoreSeries sliding_scores(const std::string& video_id, std::size_t n_frames,
                                  std::size_t clip_length, const WindowScorer& score_window) {
  if (n_frames < clip_length)
    throw Error("video '" + video_id + "' has " + std::to_string(n_frames) +
                " frames but scoring needs at least T=" + std::to_string(clip_length));
  ScoreSeries s;
  s.video_id = video_id;
  std::map<std::size_t, double> cache;
  for (std::size_t i = 0; i < n_frames; ++i) {
    const std::size_t start = clip_window_start(n_frames, clip_length, i);
    auto it = cache.find(start);
    if (it == cache.end()) it = cache.emplace(start, score_window(start)).first;
    s.raw.push_back(it->second);
  }
  s.normalized = normalize_scores(s.raw);
  return s;
}

/// Sliding-window scores of a video under a trained model.
inline ScoreSeries sliding_scores(const Video& video, const AnomalyModel<float>& model) {
  const Shape& shape = model.config().backbone.input_shape;
  return sliding_scores(video.id(), video.size(), shape[0], [&](std::size_t start) {
    Clip clip = load_clip(video, start + shape[0] / 2, shape, model.config().flow);
    const double s = model.score(to_sample(std::move(clip), video));
    if (!std::isfinite(s)) throw Error("non-finite anomaly score for video '" + video.id() + "'");
    return s;
  });
}

enum class AucMode {
  /// Normalise per video, concatenate every frame, one AUC.
  Concatenated,
  /// AUC per video (videos with a single class are skipped), then averaged.
  PerVideoMean,
};

inline AucMode parse_auc_mode(const std::string& s) {
  if (s == "concatenated") return AucMode::Concatenated;
  if (s == "per-video") return AucMode::PerVideoMean;
  throw Error("unknown AUC mode '" + s + "' (expected concatenated or per-video)");
}

struct VideoResult {
  ScoreSeries scores;
  std::vector<int> labels;
  std::string category;
};

inline double aggregate_auc(const std::vector<VideoResult>& videos, AucMode mode) {
  if (mode == AucMode::Concatenated) {
    std::vector<double> s;
    std::vector<int> l;
    for (const auto& v : videos) {
      s.insert(s.end(), v.scores.normalized.begin(), v.scores.normalized.end());
      l.insert(l.end(), v.labels.begin(), v.labels.end());
    }
    return auc_roc(s, l);
  }
  double sum = 0;
  std::size_t n = 0;
  for (const auto& v : videos) {
    const auto pos = std::count(v.labels.begin(), v.labels.end(), 1);
    if (pos == 0 || pos == static_cast<long>(v.labels.size())) continue;
    sum += auc_roc(v.scores.normalized, v.labels);
    ++n;
  }
  if (n == 0) throw Error("per-video AUC: no test video contains both normal and anomalous frames");
  return sum / static_cast<double>(n);
}

struct EvaluationReport {
  double auc = 0;
  AucMode mode = AucMode::Concatenated;
  /// AUC restricted to the videos of each category (only where defined).
  std::map<std::string, double> by_category;
  std::vector<VideoResult> videos;
};

/// Scores a video: raw per-frame scores given its annotation.
using VideoScorer = std::function<ScoreSeries(const Video&, const TemporalAnnotation&)>;

inline VideoScorer model_scorer(const AnomalyModel<float>& model) {
  return [&model](const Video& v, const TemporalAnnotation&) { return sliding_scores(v, model); };
}

/// Scores each frame with its own label (anti = 1 - label); pipeline checks.
inline VideoScorer label_scorer(bool anti) {
  return [anti](const Video& v, const TemporalAnnotation& a) {
    ScoreSeries s;
    s.video_id = v.id();
    for (int l : frame_labels(a)) s.raw.push_back(anti ? 1.0 - l : static_cast<double>(l));
    s.normalized = normalize_scores(s.raw);
    return s;
  };
}

/// Scores every video under root/test and computes the frame-wise AUC.
inline EvaluationReport evaluate_run(const fs::path& root, const AnnotationSet& annotations,
                                     const VideoScorer& scorer, bool with_flow,
                                     AucMode mode = AucMode::Concatenated) {
  EvaluationReport rep;
  rep.mode = mode;
  const auto dirs = list_videos(root / "test");
  if (dirs.empty()) throw Error("test split " + (root / "test").string() + " is empty");
  for (const auto& dir : dirs) {
    const std::string id = dir.filename().string();
    const TemporalAnnotation* ann = nullptr;
    for (const auto& a : annotations.videos)
      if (a.video_id == id) ann = &a;
    if (!ann) throw Error("test video '" + id + "' has no annotation");
    const Video video = Video::open(dir, with_flow);
    if (video.size() != ann->n_frames)
      throw Error("test video '" + id + "' has " + std::to_string(video.size()) +
                  " frames, annotation says " + std::to_string(ann->n_frames));
    rep.videos.push_back({scorer(video, *ann), frame_labels(*ann), ann->category});
  }
  rep.auc = aggregate_auc(rep.videos, mode);
  std::map<std::string, std::vector<VideoResult>> groups;
  for (const auto& v : rep.videos) groups[v.category].push_back(v);
  for (const auto& [cat, vids] : groups) {
    try {
      rep.by_category[cat] = aggregate_auc(vids, mode);
    } catch (const Error&) {
      // single-class category (e.g. all-normal videos): AUC undefined
    }
  }
  return rep;
}

/// AUC over a subset of categories, e.g. {"visual"} or {"contextual", "normal"}.
inline double subset_auc(const EvaluationReport& rep, const std::vector<std::string>& categories) {
  std::vector<VideoResult> sel;
  for (const auto& v : rep.videos)
    if (std::find(categories.begin(), categories.end(), v.category) != categories.end())
      sel.push_back(v);
  return aggregate_auc(sel, rep.mode);
}

inline nlohmann::json report_to_json(const EvaluationReport& rep) {
  nlohmann::json vids = nlohmann::json::array();
  for (const auto& v : rep.videos)
    vids.push_back({{"video_id", v.scores.video_id},
                    {"category", v.category},
                    {"raw", v.scores.raw},
                    {"normalized", v.scores.normalized},
                    {"labels", v.labels}});
  return {{"auc", rep.auc},
          {"auc_mode", rep.mode == AucMode::Concatenated ? "concatenated" : "per-video"},
          {"auc_by_category", rep.by_category},
          {"videos", vids}};
}

/// frame,raw,normalized,label records for external plotting.
inline void write_score_csv(const fs::path& path, const ScoreSeries& s, const std::vector<int>* labels) {
  std::ofstream out(path);
  out << "frame,raw,normalized" << (labels ? ",label" : "") << "\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < s.raw.size(); ++i) {
    out << i << "," << s.raw[i] << "," << s.normalized[i];
    if (labels) out << "," << (*labels)[i];
    out << "\n";
  }
  if (!out) throw Error("cannot write " + path.string());
}

inline ScoreSeries read_score_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open score file " + path.string());
  ScoreSeries s;
  s.video_id = path.stem().string();
  std::string line;
  std::getline(in, line);
  if (line.rfind("frame,raw,normalized", 0) != 0) throw Error(path.string() + ": not a score file");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string f, raw, norm;
    std::getline(is, f, ',');
    std::getline(is, raw, ',');
    std::getline(is, norm, ',');
    s.raw.push_back(std::stod(raw));
    s.normalized.push_back(std::stod(norm));
  }
  return s;
}

/// Anomaly-score curve with the anomalous ranges shaded.
inline cv::Mat render_score_plot(const ScoreSeries& s, const std::vector<FrameRange>& ranges,
                                 int width = 800, int height = 300) {
  if (s.normalized.empty()) throw Error("cannot plot an empty score series");
  const int left = 50, right = 15, top = 30, bottom = 35;
  const int pw = width - left - right, ph = height - top - bottom;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const double n = static_cast<double>(std::max<std::size_t>(s.normalized.size() - 1, 1));
  auto px = [&](double frame) { return left + static_cast<int>(std::lround(frame / n * pw)); };
  auto py = [&](double v) { return top + static_cast<int>(std::lround((1.0 - v) * ph)); };
  for (const auto& [a, b] : ranges)
    cv::rectangle(img, cv::Point(px(static_cast<double>(a)), top),
                  cv::Point(px(static_cast<double>(b)), top + ph), cv::Scalar(200, 200, 255), cv::FILLED);
  cv::rectangle(img, cv::Point(left, top), cv::Point(left + pw, top + ph), cv::Scalar(0, 0, 0), 1);
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    cv::line(img, {left - 4, py(v)}, {left, py(v)}, cv::Scalar(0, 0, 0));
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    cv::putText(img, os.str(), {4, py(v) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.35, cv::Scalar(0, 0, 0));
  }
  std::vector<cv::Point> pts;
  for (std::size_t i = 0; i < s.normalized.size(); ++i)
    pts.emplace_back(px(static_cast<double>(i)), py(s.normalized[i]));
  cv::polylines(img, pts, false, cv::Scalar(160, 60, 0), 2, cv::LINE_AA);
  cv::putText(img, s.video_id + "  (anomaly score vs. frame)", {left, 20}, cv::FONT_HERSHEY_SIMPLEX,
              0.5, cv::Scalar(0, 0, 0));
  cv::putText(img, "0", {left - 3, top + ph + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0));
  cv::putText(img, std::to_string(s.normalized.size() - 1), {left + pw - 20, top + ph + 18},
              cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0));
  return img;
}

}  // namespace vadkit
